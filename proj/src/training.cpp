#include "memo/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "memo/ops.hpp"
#include "memo/parallel.hpp"
#include "memo/tape.hpp"

namespace memo {

TriStateEdgeMap bernoulli_mask(const BinaryMap& edges, float r, Rng& rng) {
  if (!(r > 0.f && r <= 1.f))
    throw std::invalid_argument("mask ratio must lie in (0,1]");
  TriStateEdgeMap out = TriStateEdgeMap::from_binary(edges.values, edges.height,
                                                     edges.width);
  if (r == 1.f) {
    for (size_t i = 0; i < out.size(); ++i) out.set_flat(i, PixelState::Masked);
    return out;
  }
  for (size_t i = 0; i < out.size(); ++i)
    if (rng.uniform() < r) out.set_flat(i, PixelState::Masked);
  return out;
}

Tensor masked_bce_loss(const Tensor& logits, const BinaryMap& edges,
                       const TriStateEdgeMap& masked, float r,
                       LossNormalization norm) {
  if (!(r > 0.f && r <= 1.f))
    throw std::invalid_argument("mask ratio must lie in (0,1]");
  const size_t n = static_cast<size_t>(logits.numel());
  if (n != edges.size() || n != masked.size())
    throw std::invalid_argument("masked_bce_loss: logits, edges, and mask differ in size");
  std::vector<uint8_t> target(n), mask(n);
  for (size_t i = 0; i < n; ++i) {
    target[i] = edges.values[i] ? 1 : 0;
    mask[i] = masked.at_flat(i) == PixelState::Masked ? 1 : 0;
  }
  const float inv = norm == LossNormalization::PerPixel
                        ? 1.f / (r * static_cast<float>(n))
                        : 1.f / r;
  return masked_bce_with_logits(logits, std::move(target), std::move(mask), inv);
}

std::vector<SampleDraw> draw_batch_plan(size_t batch, const TrainingConfig& cfg,
                                        Rng& rng) {
  std::vector<SampleDraw> plan(batch);
  for (auto& d : plan) {
    d.ratio = cfg.mask_ratio.sample(rng);
    d.mask_seed = rng.next_u64();
    d.drop_condition = cfg.condition_drop_prob > 0.f &&
                       rng.uniform() < cfg.condition_drop_prob;
  }
  return plan;
}

namespace {

float sample_loss(const MEMONetwork& net, const TrainSample& s, const SampleDraw& d,
                  const TrainingConfig& cfg, Tensor* logits_out,
                  TriStateEdgeMap* mask_out) {
  Rng mask_rng(d.mask_seed);
  TriStateEdgeMap er = bernoulli_mask(s.edges, d.ratio, mask_rng);
  Tensor logits = net.forward_logits(s.image, er, d.ratio, !d.drop_condition);
  Tensor loss = masked_bce_loss(logits, s.edges, er, d.ratio, cfg.loss_normalization);
  if (logits_out) *logits_out = logits;
  if (mask_out) *mask_out = er;
  return loss.item();
}

void check_batch(const std::vector<TrainSample>& batch,
                 const std::vector<SampleDraw>& plan) {
  if (batch.empty()) throw std::invalid_argument("training batch is empty");
  if (batch.size() != plan.size())
    throw std::invalid_argument("batch and draw plan sizes differ");
}

}  // namespace

float batch_loss(const MEMONetwork& net, const std::vector<TrainSample>& batch,
                 const std::vector<SampleDraw>& plan, const TrainingConfig& cfg) {
  check_batch(batch, plan);
  std::vector<float> losses(batch.size());
  parallel_for(static_cast<int64_t>(batch.size()), cfg.threads,
               [&](int64_t i, int) {
                 losses[static_cast<size_t>(i)] =
                     sample_loss(net, batch[static_cast<size_t>(i)],
                                 plan[static_cast<size_t>(i)], cfg, nullptr, nullptr);
               });
  float total = 0;
  for (const float l : losses) total += l;
  return total / static_cast<float>(batch.size());
}

float train_step_planned(MEMONetwork& net, const std::vector<TrainSample>& batch,
                         const std::vector<SampleDraw>& plan,
                         const TrainingConfig& cfg, AdamW& opt) {
  check_batch(batch, plan);
  const size_t B = batch.size();
  const int threads = std::max(1, cfg.threads);
  std::vector<float> losses(B);
  std::vector<GradMap> partial(static_cast<size_t>(threads));
  const float inv_batch = 1.f / static_cast<float>(B);

  parallel_for(static_cast<int64_t>(B), threads, [&](int64_t i, int t) {
    const TrainSample& s = batch[static_cast<size_t>(i)];
    const SampleDraw& d = plan[static_cast<size_t>(i)];
    GradTape tape;
    TapeScope scope(tape);
    Rng mask_rng(d.mask_seed);
    TriStateEdgeMap er = bernoulli_mask(s.edges, d.ratio, mask_rng);
    Tensor logits = net.forward_logits(s.image, er, d.ratio, !d.drop_condition);
    Tensor loss = masked_bce_loss(logits, s.edges, er, d.ratio,
                                  cfg.loss_normalization);
    losses[static_cast<size_t>(i)] = loss.item();
    if (!std::isfinite(loss.item())) return;
    backward(scale(loss, inv_batch), tape);
    accumulate_gradients(partial[static_cast<size_t>(t)],
                         collect_gradients(net.params(), tape));
  });

  for (size_t i = 0; i < B; ++i)
    if (!std::isfinite(losses[i]))
      throw std::runtime_error("non-finite training loss at sample " +
                               std::to_string(i) + " (r=" +
                               std::to_string(plan[i].ratio) + ")");

  GradMap grads;
  for (GradMap& p : partial) accumulate_gradients(grads, p);
  opt.step(net.params(), grads);

  float total = 0;
  for (const float l : losses) total += l;
  return total / static_cast<float>(B);
}

float train_step(MEMONetwork& net, const std::vector<TrainSample>& batch,
                 const TrainingConfig& cfg, AdamW& opt, Rng& rng) {
  return train_step_planned(net, batch, draw_batch_plan(batch.size(), cfg, rng),
                            cfg, opt);
}

TrainSample augment_sample(const TrainSample& s, int code) {
  const int h = s.edges.height, w = s.edges.width;
  const bool transpose = (code & 4) != 0 && h == w;
  const bool hflip = (code & 1) != 0;
  const bool vflip = (code & 2) != 0;
  if (!transpose && !hflip && !vflip) return s;

  const int oh = transpose ? w : h;
  const int ow = transpose ? h : w;
  TrainSample out;
  out.image = Tensor({3, oh, ow});
  out.edges = BinaryMap(oh, ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      int sy = transpose ? x : y;
      int sx = transpose ? y : x;
      if (hflip) sx = w - 1 - sx;
      if (vflip) sy = h - 1 - sy;
      for (int c = 0; c < 3; ++c)
        out.image.data()[(static_cast<size_t>(c) * oh + y) * ow + x] =
            s.image.data()[(static_cast<size_t>(c) * h + sy) * w + sx];
      out.edges.values[static_cast<size_t>(y) * ow + x] =
          s.edges.values[static_cast<size_t>(sy) * w + sx];
    }
  }
  return out;
}

TrainReport train(MEMONetwork& net, const std::vector<TrainSample>& dataset,
                  const TrainingConfig& cfg, AdamW& opt, const TrainLogger& log) {
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");

  Rng rng(cfg.seed);
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});

  TrainReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    float epoch_total = 0;
    int epoch_steps = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<TrainSample> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        const TrainSample& s = dataset[order[i]];
        batch.push_back(cfg.augment
                            ? augment_sample(s, static_cast<int>(rng.uniform_int(0, 7)))
                            : s);
      }
      const float loss = train_step(net, batch, cfg, opt, rng);
      epoch_total += loss;
      ++epoch_steps;
      ++report.total_steps;
      report.final_loss = loss;
      if (log) log(epoch, report.total_steps, loss);
    }
    report.epoch_mean_losses.push_back(epoch_total / static_cast<float>(epoch_steps));
  }
  return report;
}

}  // namespace memo
