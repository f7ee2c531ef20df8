// Release gate: twelve numbered checks, one line of output each, exit 0 only
// if every selected check passes. Checks 1-7 and 12 are fast property checks;
// checks 8-11 share a single desk-scale training run and its prediction
// caches, so a full pass takes most of an hour on one core.
//
//   memo_acceptance [--only 1,5,12] [--work DIR]
//
// --work keeps datasets and the trained checkpoint in DIR and reuses a
// checkpoint found there, which is handy while iterating on a single check.
// Without it everything lives in a throwaway temp directory.

#include <sys/resource.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "memo/checkpoint.hpp"
#include "memo/evaluation.hpp"
#include "memo/inference.hpp"
#include "memo/lora.hpp"
#include "memo/network.hpp"
#include "memo/ops.hpp"
#include "memo/optim.hpp"
#include "memo/rng.hpp"
#include "memo/synthdata.hpp"
#include "memo/tape.hpp"
#include "memo/training.hpp"

namespace fs = std::filesystem;
using namespace memo;
using Clock = std::chrono::steady_clock;

namespace {

double wall_seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

double cpu_seconds() {
  rusage u{};
  getrusage(RUSAGE_SELF, &u);
  auto tv = [](const timeval& t) { return t.tv_sec + t.tv_usec * 1e-6; };
  return tv(u.ru_utime) + tv(u.ru_stime);
}

std::string format(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

struct CheckResult {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Shared desk-model state for checks 8-11.

constexpr uint64_t kTrainSeed = 0xde5c0001;
constexpr uint64_t kHeldSeed = 0xde5c0002;
constexpr uint64_t kVariantTrainSeed = 0xde5c0003;
constexpr uint64_t kVariantHeldSeed = 0xde5c0004;

constexpr int kTrainCount = 2000;
constexpr int kHeldCount = 200;
constexpr int kVariantTrainCount = 200;
constexpr int kVariantHeldCount = 100;

constexpr int kDeskSteps = 1500;
constexpr double kDeskCpuBudgetSec = 25.0 * 60.0;  // hard stop well under the 30-min bound
constexpr float kDeskLr = 3e-4f;

std::vector<TrainSample> make_set(int n, uint64_t base, bool invert) {
  SceneConfig cfg;
  cfg.invert_colors = invert;
  std::vector<TrainSample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(base, static_cast<uint64_t>(i)));
    Scene s = generate_scene(cfg, rng);
    out.push_back({s.image, scene_edges(s)});
  }
  return out;
}

struct TrainRunStats {
  int steps = 0;
  double cpu_minutes = 0;
  float mean_tail_loss = 0;
};

// Shuffled minibatch loop over the public train_step, with a hard CPU-time
// stop and a 3x learning-rate drop over the last fifth of the run.
TrainRunStats run_training(MEMONetwork& net, const std::vector<TrainSample>& data,
                           TrainingConfig tc, AdamW& opt, int max_steps,
                           double cpu_budget_sec, const char* tag) {
  if (data.size() < static_cast<size_t>(tc.batch_size))
    throw std::invalid_argument("dataset smaller than one batch");
  Rng rng(mix_seed(tc.seed, 0x57e9));
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  const double cpu0 = cpu_seconds();
  TrainRunStats stats;
  float tail_acc = 0;
  int tail_n = 0;
  bool out_of_time = false;
  while (stats.steps < max_steps && !out_of_time) {
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    const size_t bs = static_cast<size_t>(tc.batch_size);
    for (size_t at = 0; at + bs <= order.size(); at += bs) {
      if (stats.steps >= max_steps) break;
      opt.config().lr =
          stats.steps < max_steps * 4 / 5 ? tc.learning_rate : tc.learning_rate / 3.f;
      std::vector<TrainSample> batch;
      batch.reserve(bs);
      for (size_t k = 0; k < bs; ++k) batch.push_back(data[order[at + k]]);
      const float loss = train_step(net, batch, tc, opt, rng);
      ++stats.steps;
      tail_acc += loss;
      ++tail_n;
      if (stats.steps % 100 == 0) {
        std::fprintf(stderr, "  [%s] step %d/%d loss %.4f (%.1f cpu-min)\n", tag,
                     stats.steps, max_steps, tail_acc / tail_n,
                     (cpu_seconds() - cpu0) / 60.0);
        tail_acc = 0;
        tail_n = 0;
      }
      if (stats.steps % 10 == 0 && cpu_seconds() - cpu0 > cpu_budget_sec) {
        out_of_time = true;
        break;
      }
    }
  }
  stats.cpu_minutes = (cpu_seconds() - cpu0) / 60.0;
  stats.mean_tail_loss = tail_n > 0 ? tail_acc / tail_n : 0.f;
  return stats;
}

struct Ctx {
  std::string work;
  bool reuse = false;

  std::vector<TrainSample> held;  // 200-image evaluation set
  MEMONetwork net;                // trained desk model
  bool desk_ready = false;
  TrainRunStats desk_stats;
  std::string ckpt_path;

  std::map<std::pair<int, int>, std::vector<ProbabilityMap>> pred_cache;
  std::vector<BinaryMap> held_gt;

  void ensure_desk() {
    if (desk_ready) return;
    held = make_set(kHeldCount, kHeldSeed, false);
    held_gt.clear();
    for (const auto& s : held) held_gt.push_back(s.edges);
    ckpt_path = work + "/desk.ckpt";
    const std::string meta_path = work + "/desk.meta";

    if (reuse && fs::exists(ckpt_path) && fs::exists(meta_path)) {
      load_network(net, ckpt_path);
      std::ifstream meta(meta_path);
      meta >> desk_stats.steps >> desk_stats.cpu_minutes;
      std::fprintf(stderr, "  [desk] reusing %s (%d steps, %.1f cpu-min)\n",
                   ckpt_path.c_str(), desk_stats.steps, desk_stats.cpu_minutes);
      desk_ready = true;
      return;
    }

    std::fprintf(stderr, "  [desk] generating %d training scenes\n", kTrainCount);
    const std::vector<TrainSample> train = make_set(kTrainCount, kTrainSeed, false);

    TrainingConfig tc;
    tc.batch_size = 8;
    tc.learning_rate = kDeskLr;
    tc.seed = 0x7a11;
    AdamW opt{AdamWConfig{tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_eps,
                          tc.weight_decay}};
    desk_stats = run_training(net, train, tc, opt, kDeskSteps, kDeskCpuBudgetSec, "desk");

    save_checkpoint(net.params(), ckpt_path);
    std::ofstream meta(meta_path);
    meta << desk_stats.steps << " " << desk_stats.cpu_minutes << "\n";
    desk_ready = true;
  }

  const std::vector<ProbabilityMap>& preds(int steps, UnmaskStrategy strat) {
    ensure_desk();
    const auto key = std::make_pair(steps, static_cast<int>(strat));
    auto it = pred_cache.find(key);
    if (it != pred_cache.end()) return it->second;
    std::vector<ProbabilityMap> out;
    out.reserve(held.size());
    for (size_t i = 0; i < held.size(); ++i) {
      InferenceConfig ic;
      ic.steps = steps;
      ic.strategy = strat;
      ic.seed = mix_seed(0x5eed, i);
      out.push_back(run_inference(net, held[i].image, ic).probabilities);
      if ((i + 1) % 50 == 0)
        std::fprintf(stderr, "  [infer] steps=%d strategy=%d %zu/%zu\n", steps,
                     static_cast<int>(strat), i + 1, held.size());
    }
    return pred_cache.emplace(key, std::move(out)).first->second;
  }

  EvalReport report(int steps, UnmaskStrategy strat, EvalProtocol proto) {
    return ods_ois(preds(steps, strat), held_gt, default_thresholds(), proto);
  }
};

// ---------------------------------------------------------------------------
// Check 1: autodiff vs central differences, double precision.

using DTensor = TensorT<double>;

DTensor rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  DTensor t(std::move(shape));
  double* d = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform(lo, hi);
  t.set_requires_grad(true);
  return t;
}

struct GradCase {
  std::string name;
  std::vector<DTensor> inputs;          // every tensor we differentiate against
  std::function<DTensor()> forward;     // closes over `inputs`
};

// Backpropagates a random weighting of the output, then compares each input
// gradient against (f(x+h) - f(x-h)) / 2h of the same weighted sum.
double max_grad_error(GradCase& c, Rng& rng) {
  GradTapeT<double> tape;
  DTensor out;
  std::vector<double> w;
  {
    TapeScopeT<double> scope(tape);
    // Scalar anchor whose backward pass replays every recorded closure; the
    // output gradient is seeded manually with the random weights below.
    DTensor anchor({1}, std::vector<double>{0.0});
    anchor.set_requires_grad(true);
    const DTensor replay_root = scale(anchor, 1.0);
    out = c.forward();
    w.resize(static_cast<size_t>(out.numel()));
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    std::vector<double>& g = tape.grad(out);
    std::copy(w.begin(), w.end(), g.begin());
    tape.backward(replay_root);
  }

  std::vector<std::vector<double>> analytic;
  for (const DTensor& in : c.inputs) {
    const std::vector<double>* g = tape.find_grad(in);
    analytic.push_back(g ? *g : std::vector<double>(static_cast<size_t>(in.numel()), 0.0));
  }

  const auto weighted = [&]() {
    const DTensor o = c.forward();  // no active tape: forward only
    double s = 0;
    const double* d = o.data();
    for (int64_t i = 0; i < o.numel(); ++i) s += w[static_cast<size_t>(i)] * d[i];
    return s;
  };

  double worst = 0;
  for (size_t t = 0; t < c.inputs.size(); ++t) {
    double* d = c.inputs[t].data();
    for (int64_t i = 0; i < c.inputs[t].numel(); ++i) {
      const double x0 = d[i];
      const double h = 1e-5 * std::max(1.0, std::abs(x0));
      d[i] = x0 + h;
      const double fp = weighted();
      d[i] = x0 - h;
      const double fm = weighted();
      d[i] = x0;
      const double numeric = (fp - fm) / (2 * h);
      const double exact = analytic[t][static_cast<size_t>(i)];
      const double rel = std::abs(exact - numeric) /
                         std::max({1.0, std::abs(exact), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

CheckResult check_gradients(Ctx&) {
  const auto start = Clock::now();
  Rng rng(0x96adc3);
  std::vector<GradCase> cases;

  {
    GradCase c{"conv2d s1 p1 bias", {}, {}};
    c.inputs = {rand_tensor({2, 4, 4}, rng), rand_tensor({3, 2, 3, 3}, rng),
                rand_tensor({3}, rng)};
    c.forward = [in = c.inputs] { return conv2d(in[0], in[1], in[2], 1, 1); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"conv2d s2 p1 no-bias", {}, {}};
    c.inputs = {rand_tensor({2, 5, 5}, rng), rand_tensor({2, 2, 3, 3}, rng)};
    c.forward = [in = c.inputs] { return conv2d(in[0], in[1], DTensor(), 2, 1); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"conv2d batched s1 p0", {}, {}};
    c.inputs = {rand_tensor({2, 2, 3, 3}, rng), rand_tensor({2, 2, 2, 2}, rng),
                rand_tensor({2}, rng)};
    c.forward = [in = c.inputs] { return conv2d(in[0], in[1], in[2], 1, 0); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"group_norm g2", {}, {}};
    c.inputs = {rand_tensor({4, 3, 3}, rng), rand_tensor({4}, rng, 0.5, 1.5),
                rand_tensor({4}, rng)};
    c.forward = [in = c.inputs] { return group_norm(in[0], 2, in[1], in[2]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"group_norm g1 batched", {}, {}};
    c.inputs = {rand_tensor({2, 2, 3, 3}, rng), rand_tensor({2}, rng, 0.5, 1.5),
                rand_tensor({2}, rng)};
    c.forward = [in = c.inputs] { return group_norm(in[0], 1, in[1], in[2]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"silu", {rand_tensor({13}, rng, -3, 3)}, {}};
    c.forward = [in = c.inputs] { return silu(in[0]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"sigmoid", {rand_tensor({11}, rng, -3, 3)}, {}};
    c.forward = [in = c.inputs] { return sigmoid(in[0]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"linear vector", {}, {}};
    c.inputs = {rand_tensor({5}, rng), rand_tensor({5, 4}, rng), rand_tensor({4}, rng)};
    c.forward = [in = c.inputs] { return linear(in[0], in[1], in[2]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"linear batched", {}, {}};
    c.inputs = {rand_tensor({3, 4}, rng), rand_tensor({4, 3}, rng), rand_tensor({3}, rng)};
    c.forward = [in = c.inputs] { return linear(in[0], in[1], in[2]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"add", {rand_tensor({7}, rng), rand_tensor({7}, rng)}, {}};
    c.forward = [in = c.inputs] { return add(in[0], in[1]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"scale", {rand_tensor({9}, rng)}, {}};
    c.forward = [in = c.inputs] { return scale(in[0], -1.3); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"add_channel_bias rank4", {}, {}};
    c.inputs = {rand_tensor({1, 3, 4, 4}, rng), rand_tensor({3}, rng)};
    c.forward = [in = c.inputs] { return add_channel_bias(in[0], in[1]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"add_channel_bias rank3", {}, {}};
    c.inputs = {rand_tensor({3, 2, 2}, rng), rand_tensor({3}, rng)};
    c.forward = [in = c.inputs] { return add_channel_bias(in[0], in[1]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"concat_channels rank3", {}, {}};
    c.inputs = {rand_tensor({2, 3, 3}, rng), rand_tensor({3, 3, 3}, rng)};
    c.forward = [in = c.inputs] { return concat_channels(in[0], in[1]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"concat_channels rank4", {}, {}};
    c.inputs = {rand_tensor({2, 2, 2, 2}, rng), rand_tensor({2, 1, 2, 2}, rng)};
    c.forward = [in = c.inputs] { return concat_channels(in[0], in[1]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"upsample rank3", {rand_tensor({2, 3, 3}, rng)}, {}};
    c.forward = [in = c.inputs] { return upsample_nearest_2x(in[0]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"upsample rank4", {rand_tensor({1, 2, 3, 3}, rng)}, {}};
    c.forward = [in = c.inputs] { return upsample_nearest_2x(in[0]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"sum", {rand_tensor({3, 5}, rng)}, {}};
    c.forward = [in = c.inputs] { return sum(in[0]); };
    cases.push_back(std::move(c));
  }
  {
    GradCase c{"masked_bce_with_logits", {rand_tensor({4, 6}, rng, -2, 2)}, {}};
    std::vector<uint8_t> targets(24), mask(24);
    for (auto& v : targets) v = rng.bernoulli(0.5) ? 1 : 0;
    for (auto& v : mask) v = rng.bernoulli(0.6) ? 1 : 0;
    mask[5] = 1;  // never all-unmasked
    c.forward = [in = c.inputs, targets, mask] {
      return masked_bce_with_logits(in[0], targets, mask, 1.0 / 7.3);
    };
    cases.push_back(std::move(c));
  }

  double worst = 0;
  std::string worst_name = "-";
  for (GradCase& c : cases) {
    const double e = max_grad_error(c, rng);
    if (e > worst) {
      worst = e;
      worst_name = c.name;
    }
  }
  const double elapsed = wall_seconds(start);
  const bool pass = worst < 1e-5 && elapsed < 60.0;
  return {pass, format("max rel err %.2e (limit 1e-05, worst: %s), %zu ops in %.1fs",
                       worst, worst_name.c_str(), cases.size(), elapsed)};
}

// ---------------------------------------------------------------------------
// Check 2: loss gradient is exactly zero wherever the mask did not land.

CheckResult check_loss_locality(Ctx&) {
  Rng rng(0x10c41);
  int instances = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = static_cast<int>(rng.uniform_int(4, 12));
    const int w = static_cast<int>(rng.uniform_int(4, 12));
    Tensor logits({1, h, w});
    float* ld = logits.data();
    for (int64_t i = 0; i < logits.numel(); ++i)
      ld[i] = static_cast<float>(rng.uniform(-3.0, 3.0));
    logits.set_requires_grad(true);

    BinaryMap edges(h, w);
    for (auto& v : edges.values) v = rng.bernoulli(0.3) ? 1 : 0;
    const float r = static_cast<float>(rng.uniform(0.2, 1.0));
    const TriStateEdgeMap masked = bernoulli_mask(edges, r, rng);

    GradTape tape;
    {
      TapeScope scope(tape);
      const Tensor loss = masked_bce_loss(logits, edges, masked, r);
      tape.backward(loss);
    }
    const std::vector<float>* g = tape.find_grad(logits);
    for (size_t i = 0; i < masked.size(); ++i) {
      if (masked.at_flat(i) == PixelState::Masked) continue;
      const float gi = g ? (*g)[i] : 0.f;
      if (gi != 0.f)
        return {false, format("instance %d: nonzero gradient %.3e at unmasked pixel %zu",
                              trial, gi, i)};
    }
    ++instances;
  }
  return {true, format("%d/100 instances: gradient bit-zero at every unmasked pixel",
                       instances)};
}

// ---------------------------------------------------------------------------
// Check 3: Bernoulli mask statistics.

CheckResult check_mask_statistics(Ctx&) {
  Rng rng(0xb3a2);
  const int side = 100;
  const double n = static_cast<double>(side) * side;
  BinaryMap edges(side, side);
  for (auto& v : edges.values) v = rng.bernoulli(0.2) ? 1 : 0;

  double worst_sigma = 0;
  for (const float r : {0.1f, 0.5f, 0.9f}) {
    const double sigma = std::sqrt(r * (1.0 - r) / n);
    for (int rep = 0; rep < 10; ++rep) {
      const TriStateEdgeMap m = bernoulli_mask(edges, r, rng);
      const double frac = m.masked_fraction();
      const double dev = std::abs(frac - r) / sigma;
      worst_sigma = std::max(worst_sigma, dev);
      if (dev > 3.0)
        return {false, format("r=%.1f rep %d: fraction %.4f is %.2f sigma from r", r,
                              rep, frac, dev)};
    }
  }
  return {true, format("r in {0.1,0.5,0.9}, 10 maps each (10,000 px): worst deviation "
                       "%.2f sigma (limit 3)",
                       worst_sigma)};
}

// ---------------------------------------------------------------------------
// Check 4: guidance reduces to the plain prediction at s=1, and a zero image
// makes the output scale-invariant.

CheckResult check_guidance_identity(Ctx&) {
  ModelConfig mc;
  mc.channels = {8, 16};
  mc.norm_groups = 4;
  mc.pe_dim = 16;
  MEMONetwork net(mc, 0x4a);
  // the head starts zero-initialized; give it signal so logits depend on input
  Rng rng(0x6d1);
  for (const auto& e : net.params().entries()) {
    if (e.name.rfind("decoder.head.", 0) != 0) continue;
    Tensor t = e.tensor;
    float* d = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
      d[i] = static_cast<float>(rng.uniform(-0.4, 0.4));
  }

  const int h = 16, w = 16;
  Tensor image({3, h, w});
  float* id = image.data();
  for (int64_t i = 0; i < image.numel(); ++i)
    id[i] = static_cast<float>(rng.uniform(0.0, 1.0));
  TriStateEdgeMap edges = TriStateEdgeMap::all_masked(h, w);
  for (size_t i = 0; i < edges.size(); i += 3)
    edges.set_flat(i, i % 6 == 0 ? PixelState::Edge : PixelState::Background);
  const float r = 0.37f;

  const ProbabilityMap plain = net.predict(image, edges, r);
  const ProbabilityMap s1 = net.predict_guided(image, edges, r, 1.f);
  double d1 = 0;
  for (size_t i = 0; i < plain.size(); ++i)
    d1 = std::max(d1, std::abs(static_cast<double>(plain.values[i]) - s1.values[i]));

  const Tensor zero_image({3, h, w});
  std::vector<ProbabilityMap> outs;
  for (const float s : {0.5f, 1.f, 2.f, 4.f})
    outs.push_back(net.predict_guided(zero_image, edges, r, s));
  double d2 = 0;
  for (size_t a = 1; a < outs.size(); ++a)
    for (size_t i = 0; i < outs[a].size(); ++i)
      d2 = std::max(d2, std::abs(static_cast<double>(outs[a].values[i]) -
                                 outs[0].values[i]));

  const bool pass = d1 <= 1e-6 && d2 <= 1e-6;
  return {pass, format("|guided(s=1) - plain| = %.2e, zero-image spread over s in "
                       "{0.5,1,2,4} = %.2e (limit 1e-06)",
                       d1, d2)};
}

// ---------------------------------------------------------------------------
// Check 5: the local-max rule always makes progress and never reopens pixels.

CheckResult check_locmax_progress(Ctx&) {
  Rng rng(0x70d0);
  int worst_steps = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = static_cast<int>(rng.uniform_int(6, 14));
    const int w = static_cast<int>(rng.uniform_int(6, 14));
    ProbabilityMap field(h, w);
    for (auto& v : field.values) v = static_cast<float>(rng.uniform(0.0, 1.0));

    TriStateEdgeMap state = TriStateEdgeMap::all_masked(h, w);
    std::vector<PixelState> before(state.states());
    size_t masked = state.count_masked();
    int steps = 0;
    while (masked > 0) {
      if (steps >= h * w)
        return {false, format("trial %d: still %zu masked after %d steps (H*W=%d)",
                              trial, masked, steps, h * w)};
      const ProbabilityMap conf = confidence(field, state);
      const std::vector<size_t> picked = locmax_select(conf, state);
      if (picked.empty())
        return {false, format("trial %d: empty selection with %zu masked", trial, masked)};
      for (const size_t i : picked) {
        if (state.at_flat(i) != PixelState::Masked)
          return {false, format("trial %d: selection re-finalized pixel %zu", trial, i)};
        state.set_flat(i,
                       field.values[i] >= 0.5f ? PixelState::Edge : PixelState::Background);
      }
      // everything finalized before this step must be untouched
      for (size_t i = 0; i < before.size(); ++i) {
        if (before[i] != PixelState::Masked && state.at_flat(i) != before[i])
          return {false, format("trial %d: finalized pixel %zu changed state", trial, i)};
      }
      before = state.states();
      const size_t now = state.count_masked();
      if (now >= masked)
        return {false, format("trial %d: masked count %zu -> %zu did not decrease",
                              trial, masked, now)};
      masked = now;
      ++steps;
    }
    worst_steps = std::max(worst_steps, steps);
  }
  return {true, format("50 random fields drained; worst case %d steps, all within H*W",
                       worst_steps)};
}

// ---------------------------------------------------------------------------
// Check 6: the production matcher against two independent oracles on 4x4 maps.

std::vector<std::pair<int, int>> mask_pixels(uint32_t bits) {
  std::vector<std::pair<int, int>> px;
  for (int i = 0; i < 16; ++i)
    if (bits & (1u << i)) px.emplace_back(i / 4, i % 4);
  return px;
}

BinaryMap mask_map(uint32_t bits) {
  BinaryMap m(4, 4);
  for (int i = 0; i < 16; ++i) m.values[static_cast<size_t>(i)] = (bits >> i) & 1u;
  return m;
}

// Simple augmenting-path matching (Kuhn), structurally unlike the library's
// Hopcroft-Karp implementation.
struct KuhnMatcher {
  std::vector<std::vector<int>> adj;
  std::vector<int> owner;
  std::vector<char> seen;

  bool augment(int u) {
    for (const int v : adj[static_cast<size_t>(u)]) {
      if (seen[static_cast<size_t>(v)]) continue;
      seen[static_cast<size_t>(v)] = 1;
      if (owner[static_cast<size_t>(v)] < 0 || augment(owner[static_cast<size_t>(v)])) {
        owner[static_cast<size_t>(v)] = u;
        return true;
      }
    }
    return false;
  }

  int solve(const std::vector<std::pair<int, int>>& pred,
            const std::vector<std::pair<int, int>>& gt, double tol2) {
    adj.assign(pred.size(), {});
    for (size_t p = 0; p < pred.size(); ++p)
      for (size_t g = 0; g < gt.size(); ++g) {
        const int dy = pred[p].first - gt[g].first;
        const int dx = pred[p].second - gt[g].second;
        if (dy * dy + dx * dx <= tol2) adj[p].push_back(static_cast<int>(g));
      }
    owner.assign(gt.size(), -1);
    int matched = 0;
    for (size_t p = 0; p < pred.size(); ++p) {
      seen.assign(gt.size(), 0);
      if (augment(static_cast<int>(p))) ++matched;
    }
    return matched;
  }
};

// Exhaustive maximum over all injective pred->gt assignments; tractable only
// for very sparse maps.
int exhaustive_matching(const std::vector<std::pair<int, int>>& pred,
                        const std::vector<std::pair<int, int>>& gt, double tol2) {
  std::vector<char> used(gt.size(), 0);
  int best = 0;
  std::function<void(size_t, int)> rec = [&](size_t i, int acc) {
    if (i == pred.size()) {
      best = std::max(best, acc);
      return;
    }
    rec(i + 1, acc);
    for (size_t g = 0; g < gt.size(); ++g) {
      if (used[g]) continue;
      const int dy = pred[i].first - gt[g].first;
      const int dx = pred[i].second - gt[g].second;
      if (dy * dy + dx * dx <= tol2) {
        used[g] = 1;
        rec(i + 1, acc + 1);
        used[g] = 0;
      }
    }
  };
  rec(0, 0);
  return best;
}

CheckResult check_matcher_oracle(Ctx&) {
  const auto start = Clock::now();
  const double tols[2] = {1.0, 1.5};
  KuhnMatcher kuhn;

  // every 4x4 map with at most 3 edge pixels
  std::vector<uint32_t> sparse;
  for (uint32_t bits = 0; bits < (1u << 16); ++bits)
    if (__builtin_popcount(bits) <= 3) sparse.push_back(bits);
  std::vector<std::vector<std::pair<int, int>>> sparse_px(sparse.size());
  std::vector<BinaryMap> sparse_maps(sparse.size());
  for (size_t i = 0; i < sparse.size(); ++i) {
    sparse_px[i] = mask_pixels(sparse[i]);
    sparse_maps[i] = mask_map(sparse[i]);
  }

  int64_t sparse_pairs = 0;
  for (const double tol : tols) {
    const double tol2 = tol * tol;
    for (size_t a = 0; a < sparse.size(); ++a)
      for (size_t b = 0; b < sparse.size(); ++b) {
        const MatchCounts got = match_edges(sparse_maps[a], sparse_maps[b], tol);
        const int want = exhaustive_matching(sparse_px[a], sparse_px[b], tol2);
        const int np = static_cast<int>(sparse_px[a].size());
        const int ng = static_cast<int>(sparse_px[b].size());
        if (got.true_positives != want || got.false_positives != np - want ||
            got.false_negatives != ng - want)
          return {false,
                  format("sparse pair (%#x,%#x) tol %.1f: tp %lld vs exhaustive %d",
                         sparse[a], sparse[b], tol,
                         static_cast<long long>(got.true_positives), want)};
        ++sparse_pairs;
      }
  }

  Rng rng(0x6a7c4);
  int64_t random_pairs = 0;
  for (int64_t trial = 0; trial < 1000000; ++trial) {
    const uint32_t a = static_cast<uint32_t>(rng.uniform_int(0, 65535));
    const uint32_t b = static_cast<uint32_t>(rng.uniform_int(0, 65535));
    const auto pa = mask_pixels(a);
    const auto pb = mask_pixels(b);
    const BinaryMap ma = mask_map(a);
    const BinaryMap mb = mask_map(b);
    for (const double tol : tols) {
      const MatchCounts got = match_edges(ma, mb, tol);
      const int want = kuhn.solve(pa, pb, tol * tol);
      if (got.true_positives != want ||
          got.false_positives != static_cast<int64_t>(pa.size()) - want ||
          got.false_negatives != static_cast<int64_t>(pb.size()) - want)
        return {false, format("random pair (%#x,%#x) tol %.1f: tp %lld vs oracle %d", a,
                              b, tol, static_cast<long long>(got.true_positives), want)};
    }
    ++random_pairs;
  }
  return {true, format("%lld sparse-exhaustive + %lld random-oracle pairs agree "
                       "(tol 1.0 and 1.5) in %.1fs",
                       static_cast<long long>(sparse_pairs),
                       static_cast<long long>(random_pairs), wall_seconds(start))};
}

// ---------------------------------------------------------------------------
// Check 7: generated ground truth is one pixel wide under the evaluator's NMS.

CheckResult check_gt_crispness(Ctx&) {
  SceneConfig cfg;  // 64x64, radius 5..20, well above the diameter-3 floor
  double worst_ac = 1.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(mix_seed(0x5ce7e, static_cast<uint64_t>(i)));
    const Scene scene = generate_scene(cfg, rng);
    const BinaryMap gt = scene_edges(scene);
    if (has_solid_2x2_block(gt))
      return {false, format("map %d contains a solid 2x2 edge block", i)};
    ProbabilityMap p(gt.height, gt.width);
    for (size_t k = 0; k < gt.size(); ++k) p.values[k] = gt.values[k] ? 1.f : 0.f;
    const double ac = average_crispness(p);
    worst_ac = std::min(worst_ac, ac);
    if (ac < 0.95)
      return {false, format("map %d: AC %.3f < 0.95", i, ac)};
  }
  return {true, format("100 maps: min AC %.3f (floor 0.95), no 2x2 blocks", worst_ac)};
}

// ---------------------------------------------------------------------------
// Checks 8-11: the desk model.

CheckResult check_desk_training(Ctx& ctx) {
  ctx.ensure_desk();
  const EvalReport ce = ctx.report(10, UnmaskStrategy::LocMax, EvalProtocol::Crispness);
  const bool pass =
      ctx.desk_stats.cpu_minutes <= 30.0 && ce.ods >= 0.55 && ce.crispness >= 0.45;
  return {pass, format("%d steps in %.1f cpu-min (limit 30); held-out CEval ODS %.3f "
                       "(floor 0.55), AC at 10 steps %.3f (floor 0.45)",
                       ctx.desk_stats.steps, ctx.desk_stats.cpu_minutes, ce.ods,
                       ce.crispness)};
}

CheckResult check_steps_trend(Ctx& ctx) {
  const int steps[4] = {5, 10, 20, 40};
  double ac[4], se[4];
  for (int i = 0; i < 4; ++i) {
    ac[i] = ctx.report(steps[i], UnmaskStrategy::LocMax, EvalProtocol::Crispness).crispness;
    se[i] = ctx.report(steps[i], UnmaskStrategy::LocMax, EvalProtocol::Standard).ods;
  }
  bool monotone = true;
  for (int i = 0; i + 1 < 4; ++i) monotone = monotone && ac[i + 1] >= ac[i];
  const double gain = ac[3] - ac[0];
  const double se_spread = *std::max_element(se, se + 4) - *std::min_element(se, se + 4);
  const bool pass = monotone && gain >= 0.05 && se_spread < 0.05;
  return {pass, format("AC %.3f/%.3f/%.3f/%.3f over 5/10/20/40 steps (gain %.3f, floor "
                       "0.05); SEval ODS spread %.3f (limit 0.05)",
                       ac[0], ac[1], ac[2], ac[3], gain, se_spread)};
}

CheckResult check_strategy_ordering(Ctx& ctx) {
  const EvalReport lm = ctx.report(10, UnmaskStrategy::LocMax, EvalProtocol::Crispness);
  const EvalReport rd = ctx.report(10, UnmaskStrategy::Random, EvalProtocol::Crispness);
  const EvalReport tk = ctx.report(10, UnmaskStrategy::TopK, EvalProtocol::Crispness);
  const bool pass = lm.ods > tk.ods && tk.crispness < lm.crispness &&
                    tk.crispness < rd.crispness;
  return {pass, format("CEval ODS locmax %.3f vs topk %.3f; AC locmax %.3f, random "
                       "%.3f, topk %.3f (topk must be lowest)",
                       lm.ods, tk.ods, lm.crispness, rd.crispness, tk.crispness)};
}

CheckResult check_lora_contract(Ctx& ctx) {
  ctx.ensure_desk();
  const int rank = 4;
  constexpr float alpha = 8.f;

  const std::vector<TrainSample> variant_train =
      make_set(kVariantTrainCount, kVariantTrainSeed, true);
  const std::vector<TrainSample> variant_held =
      make_set(kVariantHeldCount, kVariantHeldSeed, true);

  MEMONetwork tuned;
  load_network(tuned, ctx.ckpt_path);

  // snapshot base weights before injection; neither injection nor tuning may
  // move them
  std::vector<std::pair<std::string, std::vector<float>>> base;
  for (const auto& e : tuned.params().entries())
    base.emplace_back(e.name,
                      std::vector<float>(e.tensor.data(), e.tensor.data() + e.tensor.numel()));

  lora_inject(tuned, rank, alpha);

  TrainingConfig tc;
  tc.batch_size = 8;
  tc.learning_rate = 1e-3f;
  tc.seed = 0x10ca;
  AdamW opt{AdamWConfig{tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_eps,
                        tc.weight_decay}};
  run_training(tuned, variant_train, tc, opt, 150, 10.0 * 60.0, "lora");

  for (const auto& [name, snap] : base) {
    const Tensor* t = tuned.params().find(name);
    if (!t) return {false, "base parameter vanished: " + name};
    if (std::memcmp(snap.data(), t->data(), snap.size() * sizeof(float)) != 0)
      return {false, "base parameter changed during fine-tuning: " + name};
  }

  // the rank*(in+out) formula, re-derived by walking the wrapped submodules
  int64_t expected = 0;
  const auto conv_term = [&](const ConvLayer& c) {
    expected += static_cast<int64_t>(rank) * (c.in_channels() + c.out_channels());
  };
  const auto linear_term = [&](const InjectLinear& l) {
    expected += static_cast<int64_t>(rank) * (l.in_features() + l.out_features());
  };
  Encoder& ee = tuned.edge_encoder();
  conv_term(ee.stem);
  for (const ConvLayer& c : ee.downs) conv_term(c);
  for (const ResBlock& b : ee.blocks) {
    conv_term(b.conv1);
    conv_term(b.conv2);
    if (b.inject) linear_term(*b.inject);
  }
  Decoder& dec = tuned.decoder();
  for (const ConvLayer& c : dec.fuses) conv_term(c);
  for (const ConvLayer& c : dec.ups) conv_term(c);
  for (const ResBlock& b : dec.blocks) {
    conv_term(b.conv1);
    conv_term(b.conv2);
    if (b.inject) linear_term(*b.inject);
  }
  const int64_t counted = lora_parameter_count(tuned);
  int64_t stored = 0;
  for (const auto& e : tuned.params().entries())
    if (is_lora_parameter(e.name) && e.name != "lora.meta") stored += e.tensor.numel();
  if (counted != expected || stored != expected)
    return {false, format("adapter count mismatch: formula %lld, reported %lld, "
                          "stored %lld",
                          static_cast<long long>(expected),
                          static_cast<long long>(counted),
                          static_cast<long long>(stored))};

  const auto eval_on_variant = [&](const MEMONetwork& net) {
    std::vector<ProbabilityMap> preds;
    std::vector<BinaryMap> gts;
    for (const auto& s : variant_held) {
      InferenceConfig ic;
      ic.steps = 10;
      preds.push_back(run_inference(net, s.image, ic).probabilities);
      gts.push_back(s.edges);
    }
    return ods_ois(preds, gts, default_thresholds(), EvalProtocol::Crispness).ods;
  };
  const double base_ods = eval_on_variant(ctx.net);
  const double tuned_ods = eval_on_variant(tuned);

  const bool pass = tuned_ods > base_ods;
  return {pass, format("base frozen (bitwise), %lld adapter weights match rank*(in+out); "
                       "variant CEval ODS %.3f tuned vs %.3f frozen",
                       static_cast<long long>(expected), tuned_ods, base_ods)};
}

// ---------------------------------------------------------------------------
// Check 12: checkpoint round-trip and corruption rejection.

CheckResult check_checkpoint(Ctx& ctx) {
  ModelConfig mc;
  mc.channels = {8, 16};
  mc.norm_groups = 4;
  mc.pe_dim = 16;
  MEMONetwork a(mc, 0xab);
  Rng rng(0xc4ec);
  for (const auto& e : a.params().entries()) {
    Tensor t = e.tensor;
    float* d = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
      d[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  }

  const std::string path = ctx.work + "/roundtrip.ckpt";
  save_checkpoint(a.params(), path);
  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  in.close();

  MEMONetwork b(mc, 0xcd);
  load_network(b, path);
  const auto& ea = a.params().entries();
  const auto& eb = b.params().entries();
  if (ea.size() != eb.size()) return {false, "entry count changed across round trip"};
  for (size_t i = 0; i < ea.size(); ++i) {
    if (ea[i].name != eb[i].name)
      return {false, "entry order changed across round trip: " + eb[i].name};
    if (std::memcmp(ea[i].tensor.data(), eb[i].tensor.data(),
                    static_cast<size_t>(ea[i].tensor.numel()) * sizeof(float)) != 0)
      return {false, "tensor bytes changed across round trip: " + ea[i].name};
  }

  const std::string again = ctx.work + "/roundtrip2.ckpt";
  save_checkpoint(b.params(), again);
  std::ifstream in2(again, std::ios::binary);
  std::vector<char> bytes2((std::istreambuf_iterator<char>(in2)),
                           std::istreambuf_iterator<char>());
  in2.close();
  if (bytes != bytes2) return {false, "re-saved checkpoint differs byte-for-byte"};

  // flip one payload byte: must be rejected, and loudly
  std::vector<char> corrupt = bytes;
  corrupt[corrupt.size() * 3 / 5] ^= 0x11;
  const std::string bad = ctx.work + "/corrupt.ckpt";
  std::ofstream out(bad, std::ios::binary);
  out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
  out.close();
  bool rejected = false;
  try {
    load_checkpoint(bad);
  } catch (const std::runtime_error& e) {
    rejected = std::string(e.what()).find("checksum") != std::string::npos;
  }
  if (!rejected) return {false, "corrupted payload was not rejected"};

  bool truncated_rejected = false;
  const std::string cut = ctx.work + "/truncated.ckpt";
  std::ofstream out2(cut, std::ios::binary);
  out2.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  out2.close();
  try {
    load_checkpoint(cut);
  } catch (const std::runtime_error&) {
    truncated_rejected = true;
  }
  if (!truncated_rejected) return {false, "truncated file was not rejected"};

  return {true, format("%zu-byte checkpoint: bit-identical round trip and re-save; "
                       "corrupted and truncated files rejected",
                       bytes.size())};
}

}  // namespace

int main(int argc, char** argv) {
  struct Check {
    int id;
    const char* name;
    CheckResult (*fn)(Ctx&);
  };
  const Check checks[] = {
      {1, "autodiff gradients vs central differences", check_gradients},
      {2, "masked loss gradient locality", check_loss_locality},
      {3, "bernoulli mask statistics", check_mask_statistics},
      {4, "guidance identity and zero-image invariance", check_guidance_identity},
      {5, "local-max unmasking progress and termination", check_locmax_progress},
      {6, "matcher vs exhaustive and augmenting-path oracles", check_matcher_oracle},
      {7, "synthetic ground-truth crispness", check_gt_crispness},
      {8, "desk training within cpu budget", check_desk_training},
      {9, "crispness vs inference-steps trend", check_steps_trend},
      {10, "unmasking strategy ordering", check_strategy_ordering},
      {11, "low-rank adapter fine-tuning contract", check_lora_contract},
      {12, "checkpoint round-trip and corruption", check_checkpoint},
  };

  std::set<int> only;
  std::string work;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::string list = argv[++i];
      for (size_t at = 0; at < list.size();) {
        const size_t comma = list.find(',', at);
        only.insert(std::atoi(list.substr(at, comma - at).c_str()));
        at = comma == std::string::npos ? list.size() : comma + 1;
      }
    } else if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--work DIR]\n", argv[0]);
      return 2;
    }
  }

  Ctx ctx;
  ctx.reuse = !work.empty();
  if (work.empty())
    work = (fs::temp_directory_path() /
            ("memo-accept-" + std::to_string(::getpid())))
               .string();
  ctx.work = work;
  fs::create_directories(ctx.work);

  int ran = 0, passed = 0;
  for (const Check& c : checks) {
    if (!only.empty() && !only.count(c.id)) continue;
    ++ran;
    CheckResult r;
    const auto t0 = Clock::now();
    try {
      r = c.fn(ctx);
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    if (r.pass) ++passed;
    std::printf("[%2d] %-48s %s  %s (%.1fs)\n", c.id, c.name,
                r.pass ? "PASS" : "FAIL", r.detail.c_str(), wall_seconds(t0));
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/%d checks passed\n", passed, ran);
  if (ctx.reuse)
    std::fprintf(stderr, "artifacts kept in %s\n", ctx.work.c_str());
  else
    fs::remove_all(ctx.work);
  return passed == ran ? 0 : 1;
}
