#include "memo/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace memo {

ProbabilityMap confidence(const ProbabilityMap& p, const TriStateEdgeMap& edges) {
  if (p.height != edges.height() || p.width != edges.width())
    throw std::invalid_argument("confidence: map extents differ");
  ProbabilityMap c(p.height, p.width);
  for (size_t i = 0; i < c.values.size(); ++i)
    c.values[i] = edges.at_flat(i) == PixelState::Masked
                      ? std::max(p.values[i], 1.f - p.values[i])
                      : 0.f;
  return c;
}

std::vector<size_t> locmax_select(const ProbabilityMap& c,
                                  const TriStateEdgeMap& edges) {
  if (c.height != edges.height() || c.width != edges.width())
    throw std::invalid_argument("locmax_select: map extents differ");
  if (edges.count_masked() == 0)
    throw std::invalid_argument("locmax_select requires at least one masked pixel");
  std::vector<size_t> out;
  for (int y = 0; y < c.height; ++y) {
    for (int x = 0; x < c.width; ++x) {
      if (edges.at(y, x) != PixelState::Masked) continue;
      const float v = c.at(y, x);
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= c.height || nx < 0 || nx >= c.width) continue;
          if (c.at(ny, nx) > v) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) out.push_back(static_cast<size_t>(y) * c.width + x);
    }
  }
  return out;
}

namespace {

std::vector<size_t> masked_indices(const TriStateEdgeMap& edges) {
  std::vector<size_t> out;
  for (size_t i = 0; i < edges.size(); ++i)
    if (edges.at_flat(i) == PixelState::Masked) out.push_back(i);
  return out;
}

size_t step_quota(const InferenceConfig& cfg, size_t masked) {
  const float fraction =
      cfg.fraction > 0.f ? cfg.fraction : 1.f / static_cast<float>(cfg.steps);
  const size_t n = static_cast<size_t>(
      std::ceil(static_cast<double>(fraction) * static_cast<double>(masked)));
  return std::min(masked, std::max<size_t>(1, n));
}

}  // namespace

StepResult unmask_step(const MEMONetwork& net, const Tensor& image,
                       TriStateEdgeMap& edges, const InferenceConfig& cfg,
                       Rng& rng) {
  const size_t masked = edges.count_masked();
  if (masked == 0)
    throw std::invalid_argument("unmask_step called with no masked pixels");
  if (cfg.fraction < 0.f || cfg.fraction > 1.f)
    throw std::invalid_argument("per-step fraction must lie in (0,1], or 0 for 1/steps");
  const float r = static_cast<float>(edges.masked_fraction());
  StepResult res;
  res.probabilities = net.predict_guided(image, edges, r, cfg.scale);

  switch (cfg.strategy) {
    case UnmaskStrategy::LocMax: {
      res.finalized = locmax_select(confidence(res.probabilities, edges), edges);
      break;
    }
    case UnmaskStrategy::Random: {
      std::vector<size_t> idx = masked_indices(edges);
      const size_t quota = step_quota(cfg, masked);
      for (size_t i = 0; i < quota; ++i) {
        const size_t j = static_cast<size_t>(
            rng.uniform_int(static_cast<int64_t>(i), static_cast<int64_t>(idx.size()) - 1));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(quota);
      std::sort(idx.begin(), idx.end());
      res.finalized = std::move(idx);
      break;
    }
    case UnmaskStrategy::TopK: {
      const ProbabilityMap c = confidence(res.probabilities, edges);
      std::vector<size_t> idx = masked_indices(edges);
      const size_t quota = step_quota(cfg, masked);
      std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (c.values[a] != c.values[b]) return c.values[a] > c.values[b];
        return a < b;
      });
      idx.resize(quota);
      std::sort(idx.begin(), idx.end());
      res.finalized = std::move(idx);
      break;
    }
  }

  for (const size_t i : res.finalized)
    edges.set_flat(i, res.probabilities.values[i] >= cfg.threshold
                          ? PixelState::Edge
                          : PixelState::Background);
  return res;
}

InferenceResult run_inference(const MEMONetwork& net, const Tensor& image,
                              const InferenceConfig& cfg) {
  if (cfg.steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (cfg.fraction < 0.f || cfg.fraction > 1.f)
    throw std::invalid_argument("per-step fraction must lie in (0,1], or 0 for 1/steps");
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("image must be [3,H,W], got " +
                                shape_string(image.shape()));
  const int h = image.dim(1), w = image.dim(2);

  TriStateEdgeMap edges = TriStateEdgeMap::all_masked(h, w);
  InferenceResult out;
  out.probabilities = ProbabilityMap(h, w);
  out.trace.finalize_step.assign(static_cast<size_t>(h) * w, -1);
  Rng rng(cfg.seed);

  for (int step = 0;; ++step) {
    const size_t masked = edges.count_masked();
    if (masked == 0) break;
    out.trace.masked_per_step.push_back(masked);

    if (step == cfg.steps - 1) {
      // Budget exhausted: one more prediction, keep everything it says.
      const float r = static_cast<float>(edges.masked_fraction());
      const ProbabilityMap p = net.predict_guided(image, edges, r, cfg.scale);
      ++out.trace.forward_passes;
      for (size_t i = 0; i < edges.size(); ++i) {
        if (edges.at_flat(i) != PixelState::Masked) continue;
        edges.set_flat(i, p.values[i] >= cfg.threshold ? PixelState::Edge
                                                       : PixelState::Background);
        out.probabilities.values[i] = p.values[i];
        out.trace.finalize_step[i] = step;
      }
      break;
    }

    const StepResult res = unmask_step(net, image, edges, cfg, rng);
    ++out.trace.forward_passes;
    for (const size_t i : res.finalized) {
      out.probabilities.values[i] = res.probabilities.values[i];
      out.trace.finalize_step[i] = step;
    }
  }

  out.edges = BinaryMap(h, w);
  for (size_t i = 0; i < edges.size(); ++i)
    out.edges.values[i] = edges.at_flat(i) == PixelState::Edge ? 1 : 0;
  return out;
}

}  // namespace memo
