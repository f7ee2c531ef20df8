#include "memo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "memo/parallel.hpp"

namespace memo {
namespace {

std::vector<float> gaussian_smooth(const ProbabilityMap& p, float sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.f * sigma)));
  std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
  float total = 0.f;
  for (int i = -radius; i <= radius; ++i) {
    const float t = static_cast<float>(i) / sigma;
    kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5f * t * t);
    total += kernel[static_cast<size_t>(i + radius)];
  }
  for (auto& v : kernel) v /= total;

  const int h = p.height, w = p.width;
  std::vector<float> tmp(p.values.size()), out(p.values.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] *
               p.values[static_cast<size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] *
               tmp[static_cast<size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      out[static_cast<size_t>(y) * w + x] = acc;
    }
  return out;
}

float bilinear_or_zero(const ProbabilityMap& p, float x, float y) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const float fx = x - static_cast<float>(x0), fy = y - static_cast<float>(y0);
  auto at = [&](int yy, int xx) -> float {
    if (yy < 0 || yy >= p.height || xx < 0 || xx >= p.width) return 0.f;
    return p.values[static_cast<size_t>(yy) * p.width + xx];
  };
  return at(y0, x0) * (1 - fx) * (1 - fy) + at(y0, x0 + 1) * fx * (1 - fy) +
         at(y0 + 1, x0) * (1 - fx) * fy + at(y0 + 1, x0 + 1) * fx * fy;
}

// One full thinning iteration (both sub-passes) on the support {v > 0};
// deleted pixels are zeroed, survivors keep their values.
void thin_once(ProbabilityMap& p) {
  const int h = p.height, w = p.width;
  auto on = [&](const std::vector<uint8_t>& b, int y, int x) -> int {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0;
    return b[static_cast<size_t>(y) * w + x];
  };
  std::vector<uint8_t> bin(p.values.size());
  for (size_t i = 0; i < bin.size(); ++i) bin[i] = p.values[i] > 0.f ? 1 : 0;

  for (int pass = 0; pass < 2; ++pass) {
    std::vector<size_t> deleted;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!on(bin, y, x)) continue;
        const int p2 = on(bin, y - 1, x), p3 = on(bin, y - 1, x + 1);
        const int p4 = on(bin, y, x + 1), p5 = on(bin, y + 1, x + 1);
        const int p6 = on(bin, y + 1, x), p7 = on(bin, y + 1, x - 1);
        const int p8 = on(bin, y, x - 1), p9 = on(bin, y - 1, x - 1);
        const int b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
        if (b < 2 || b > 6) continue;
        const int seq[9] = {p2, p3, p4, p5, p6, p7, p8, p9, p2};
        int a = 0;
        for (int i = 0; i < 8; ++i)
          if (seq[i] == 0 && seq[i + 1] == 1) ++a;
        if (a != 1) continue;
        const bool cond = pass == 0 ? (p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0)
                                    : (p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0);
        if (cond) deleted.push_back(static_cast<size_t>(y) * w + x);
      }
    }
    for (const size_t i : deleted) {
      bin[i] = 0;
      p.values[i] = 0.f;
    }
  }
}

struct EdgePixels {
  std::vector<int> ys, xs;
  // per-row ranges into the pixel arrays (row-major order)
  std::vector<int> row_begin;
};

EdgePixels collect_edges(const BinaryMap& m) {
  EdgePixels e;
  e.row_begin.assign(static_cast<size_t>(m.height) + 1, 0);
  for (int y = 0; y < m.height; ++y) {
    e.row_begin[static_cast<size_t>(y)] = static_cast<int>(e.ys.size());
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) {
        e.ys.push_back(y);
        e.xs.push_back(x);
      }
  }
  e.row_begin[static_cast<size_t>(m.height)] = static_cast<int>(e.ys.size());
  return e;
}

// Hopcroft-Karp maximum bipartite matching.
int64_t max_matching(const std::vector<std::vector<int>>& adj, int n_right) {
  const int n_left = static_cast<int>(adj.size());
  const int NIL = -1;
  std::vector<int> match_l(static_cast<size_t>(n_left), NIL);
  std::vector<int> match_r(static_cast<size_t>(n_right), NIL);
  std::vector<int> dist(static_cast<size_t>(n_left));
  const int INF = std::numeric_limits<int>::max();

  auto bfs = [&]() -> bool {
    std::queue<int> q;
    bool found = false;
    for (int u = 0; u < n_left; ++u) {
      if (match_l[static_cast<size_t>(u)] == NIL) {
        dist[static_cast<size_t>(u)] = 0;
        q.push(u);
      } else {
        dist[static_cast<size_t>(u)] = INF;
      }
    }
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (const int v : adj[static_cast<size_t>(u)]) {
        const int w = match_r[static_cast<size_t>(v)];
        if (w == NIL) {
          found = true;
        } else if (dist[static_cast<size_t>(w)] == INF) {
          dist[static_cast<size_t>(w)] = dist[static_cast<size_t>(u)] + 1;
          q.push(w);
        }
      }
    }
    return found;
  };

  std::function<bool(int)> dfs = [&](int u) -> bool {
    for (const int v : adj[static_cast<size_t>(u)]) {
      const int w = match_r[static_cast<size_t>(v)];
      if (w == NIL ||
          (dist[static_cast<size_t>(w)] == dist[static_cast<size_t>(u)] + 1 && dfs(w))) {
        match_l[static_cast<size_t>(u)] = v;
        match_r[static_cast<size_t>(v)] = u;
        return true;
      }
    }
    dist[static_cast<size_t>(u)] = INF;
    return false;
  };

  int64_t matched = 0;
  while (bfs())
    for (int u = 0; u < n_left; ++u)
      if (match_l[static_cast<size_t>(u)] == NIL && dfs(u)) ++matched;
  return matched;
}

struct ImageCounts {
  std::vector<MatchCounts> per_threshold;
  double crispness = 1.0;
};

ImageCounts evaluate_image(const ProbabilityMap& pred, const BinaryMap& gt,
                           const std::vector<double>& thresholds,
                           EvalProtocol protocol, double tol) {
  ImageCounts out;
  out.crispness = average_crispness(pred);
  const ProbabilityMap eval_map =
      protocol == EvalProtocol::Standard ? nms_thin(pred) : pred;
  out.per_threshold.reserve(thresholds.size());
  for (const double t : thresholds)
    out.per_threshold.push_back(
        match_edges(threshold_map(eval_map, static_cast<float>(t)), gt, tol));
  return out;
}

double precision_of(const MatchCounts& c) {
  const int64_t denom = c.true_positives + c.false_positives;
  return denom == 0 ? 1.0 : static_cast<double>(c.true_positives) / static_cast<double>(denom);
}

double recall_of(const MatchCounts& c) {
  const int64_t denom = c.true_positives + c.false_negatives;
  return denom == 0 ? 1.0 : static_cast<double>(c.true_positives) / static_cast<double>(denom);
}

const char* protocol_name(EvalProtocol p) {
  return p == EvalProtocol::Standard ? "seval" : "ceval";
}

}  // namespace

ProbabilityMap nms_thin(const ProbabilityMap& p) {
  const int h = p.height, w = p.width;
  ProbabilityMap out(h, w);
  const std::vector<float> smooth = gaussian_smooth(p, 1.f);
  auto s = [&](int y, int x) -> float {
    return smooth[static_cast<size_t>(std::clamp(y, 0, h - 1)) * w +
                  std::clamp(x, 0, w - 1)];
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = p.values[static_cast<size_t>(y) * w + x];
      if (v <= 0.f) continue;
      const float gx = (s(y - 1, x + 1) + 2.f * s(y, x + 1) + s(y + 1, x + 1)) -
                       (s(y - 1, x - 1) + 2.f * s(y, x - 1) + s(y + 1, x - 1));
      const float gy = (s(y + 1, x - 1) + 2.f * s(y + 1, x) + s(y + 1, x + 1)) -
                       (s(y - 1, x - 1) + 2.f * s(y - 1, x) + s(y - 1, x + 1));
      const float mag = std::sqrt(gx * gx + gy * gy);
      bool keep = true;
      if (mag > 1e-9f) {
        const float ux = gx / mag, uy = gy / mag;
        const float fwd = bilinear_or_zero(p, static_cast<float>(x) + ux,
                                           static_cast<float>(y) + uy);
        const float bwd = bilinear_or_zero(p, static_cast<float>(x) - ux,
                                           static_cast<float>(y) - uy);
        keep = v >= fwd && v >= bwd;
      }
      if (keep) out.values[static_cast<size_t>(y) * w + x] = v;
    }
  }
  thin_once(out);
  return out;
}

double average_crispness(const ProbabilityMap& p, float threshold) {
  size_t before = 0;
  for (const float v : p.values)
    if (v >= threshold) ++before;
  if (before == 0) return 1.0;
  const ProbabilityMap thin = nms_thin(p);
  size_t after = 0;
  for (const float v : thin.values)
    if (v >= threshold) ++after;
  return static_cast<double>(after) / static_cast<double>(before);
}

double edge_tolerance_px(int height, int width, double fraction) {
  return fraction * std::sqrt(static_cast<double>(height) * height +
                              static_cast<double>(width) * width);
}

double f1_score(const MatchCounts& c) {
  const double p = precision_of(c), r = recall_of(c);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

MatchCounts match_edges(const BinaryMap& pred, const BinaryMap& gt, double tol_px) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("match_edges: map extents differ");
  if (tol_px < 0) throw std::invalid_argument("match_edges: negative tolerance");

  const EdgePixels pe = collect_edges(pred);
  const EdgePixels ge = collect_edges(gt);
  const int np = static_cast<int>(pe.ys.size());
  const int ng = static_cast<int>(ge.ys.size());

  MatchCounts out;
  if (np == 0 || ng == 0) {
    out.false_positives = np;
    out.false_negatives = ng;
    return out;
  }

  const int reach = static_cast<int>(std::floor(tol_px));
  const double tol2 = tol_px * tol_px;
  std::vector<std::vector<int>> adj(static_cast<size_t>(np));
  for (int i = 0; i < np; ++i) {
    const int py = pe.ys[static_cast<size_t>(i)], px = pe.xs[static_cast<size_t>(i)];
    const int y0 = std::max(0, py - reach), y1 = std::min(gt.height - 1, py + reach);
    for (int y = y0; y <= y1; ++y) {
      for (int j = ge.row_begin[static_cast<size_t>(y)];
           j < ge.row_begin[static_cast<size_t>(y) + 1]; ++j) {
        const double dy = py - ge.ys[static_cast<size_t>(j)];
        const double dx = px - ge.xs[static_cast<size_t>(j)];
        if (dy * dy + dx * dx <= tol2) adj[static_cast<size_t>(i)].push_back(j);
      }
    }
  }

  out.true_positives = max_matching(adj, ng);
  out.false_positives = np - out.true_positives;
  out.false_negatives = ng - out.true_positives;
  return out;
}

std::vector<double> default_thresholds(int count) {
  if (count < 1) throw std::invalid_argument("threshold count must be >= 1");
  std::vector<double> out(static_cast<size_t>(count));
  for (int k = 1; k <= count; ++k)
    out[static_cast<size_t>(k - 1)] = static_cast<double>(k) / (count + 1);
  return out;
}

EvalReport ods_ois(const std::vector<ProbabilityMap>& preds,
                   const std::vector<BinaryMap>& gts,
                   const std::vector<double>& thresholds, EvalProtocol protocol,
                   double tolerance_fraction, int jobs) {
  return multi_granularity_eval({{1.0, preds}}, gts, thresholds, protocol,
                                tolerance_fraction, jobs);
}

EvalReport multi_granularity_eval(
    const std::vector<std::pair<double, std::vector<ProbabilityMap>>>& per_scale,
    const std::vector<BinaryMap>& gts, const std::vector<double>& thresholds,
    EvalProtocol protocol, double tolerance_fraction, int jobs) {
  if (per_scale.empty()) throw std::invalid_argument("no prediction scales given");
  if (gts.empty()) throw std::invalid_argument("no ground-truth maps given");
  if (thresholds.empty()) throw std::invalid_argument("no thresholds given");
  for (const auto& [scale, preds] : per_scale)
    if (preds.size() != gts.size())
      throw std::invalid_argument("scale " + std::to_string(scale) + " has " +
                                  std::to_string(preds.size()) + " predictions for " +
                                  std::to_string(gts.size()) + " images");

  const size_t n_images = gts.size();
  const size_t n_scales = per_scale.size();
  const size_t n_t = thresholds.size();

  // counts[scale][image] -> per-threshold MatchCounts
  std::vector<std::vector<ImageCounts>> counts(
      n_scales, std::vector<ImageCounts>(n_images));
  parallel_for(static_cast<int64_t>(n_scales * n_images), jobs, [&](int64_t k, int) {
    const size_t s = static_cast<size_t>(k) / n_images;
    const size_t i = static_cast<size_t>(k) % n_images;
    const BinaryMap& gt = gts[i];
    const double tol = edge_tolerance_px(gt.height, gt.width, tolerance_fraction);
    counts[s][i] = evaluate_image(per_scale[s].second[i], gt, thresholds, protocol, tol);
  });

  EvalReport report;
  report.protocol = protocol;

  // ODS: per threshold, each image contributes its best scale's counts.
  for (size_t t = 0; t < n_t; ++t) {
    MatchCounts agg;
    for (size_t i = 0; i < n_images; ++i) {
      size_t best_s = 0;
      double best_f1 = -1.0;
      for (size_t s = 0; s < n_scales; ++s) {
        const double f1 = f1_score(counts[s][i].per_threshold[t]);
        if (f1 > best_f1) {
          best_f1 = f1;
          best_s = s;
        }
      }
      const MatchCounts& c = counts[best_s][i].per_threshold[t];
      agg.true_positives += c.true_positives;
      agg.false_positives += c.false_positives;
      agg.false_negatives += c.false_negatives;
    }
    ThresholdPoint pt;
    pt.threshold = thresholds[t];
    pt.precision = precision_of(agg);
    pt.recall = recall_of(agg);
    pt.f1 = f1_score(agg);
    report.curve.push_back(pt);
    if (pt.f1 > report.ods) {
      report.ods = pt.f1;
      report.ods_threshold = pt.threshold;
    }
  }

  // OIS: per image, best F1 over every (scale, threshold) pair.
  double ois_total = 0, ac_total = 0;
  for (size_t i = 0; i < n_images; ++i) {
    ImageRow row;
    row.index = static_cast<int>(i);
    double best = -1.0;
    size_t best_s = 0;
    for (size_t s = 0; s < n_scales; ++s) {
      for (size_t t = 0; t < n_t; ++t) {
        const double f1 = f1_score(counts[s][i].per_threshold[t]);
        if (f1 > best) {
          best = f1;
          best_s = s;
          row.best_threshold = thresholds[t];
          row.best_scale = per_scale[s].first;
        }
      }
    }
    row.best_f1 = best;
    row.crispness = counts[best_s][i].crispness;
    ois_total += best;
    ac_total += row.crispness;
    report.per_image.push_back(row);
  }
  report.ois = ois_total / static_cast<double>(n_images);
  report.crispness = ac_total / static_cast<double>(n_images);
  return report;
}

void write_report_tsv(const EvalReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "protocol\t" << protocol_name(report.protocol) << "\n";
  f << "ods\t" << report.ods << "\nods_threshold\t" << report.ods_threshold
    << "\nois\t" << report.ois << "\naverage_crispness\t" << report.crispness << "\n";
  f << "\nthreshold\tprecision\trecall\tf1\n";
  for (const auto& pt : report.curve)
    f << pt.threshold << "\t" << pt.precision << "\t" << pt.recall << "\t" << pt.f1
      << "\n";
  f << "\nimage\tbest_f1\tbest_threshold\tbest_scale\tcrispness\n";
  for (const auto& row : report.per_image)
    f << row.index << "\t" << row.best_f1 << "\t" << row.best_threshold << "\t"
      << row.best_scale << "\t" << row.crispness << "\n";
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::string format_report_summary(const EvalReport& report) {
  std::ostringstream os;
  os << "protocol=" << protocol_name(report.protocol) << " ods=" << report.ods
     << " (t=" << report.ods_threshold << ") ois=" << report.ois
     << " ac=" << report.crispness << " images=" << report.per_image.size();
  return os.str();
}

}  // namespace memo
