#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "memo/network.hpp"
#include "memo/ops.hpp"
#include "memo/optim.hpp"
#include "memo/rng.hpp"
#include "memo/tape.hpp"
#include "memo/training.hpp"

using namespace memo;

namespace {

BinaryMap ring_edges(int h, int w) {
  BinaryMap m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (y == 0 || y == h - 1 || x == 0 || x == w - 1) m.set(y, x, 1);
  return m;
}

TrainSample make_sample(int h, int w, uint64_t seed) {
  TrainSample s{Tensor({3, h, w}), ring_edges(h, w)};
  Rng rng(seed);
  for (size_t i = 0; i < s.image.numel(); ++i)
    s.image.data()[i] = static_cast<float>(rng.uniform());
  return s;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.channels = {8, 16};
  cfg.norm_groups = 4;
  cfg.pe_dim = 16;
  return cfg;
}

}  // namespace

TEST_CASE("bernoulli mask at r=1 masks every pixel deterministically") {
  BinaryMap edges = ring_edges(6, 6);
  Rng a(1), b(999);
  TriStateEdgeMap ma = bernoulli_mask(edges, 1.f, a);
  TriStateEdgeMap mb = bernoulli_mask(edges, 1.f, b);
  CHECK(ma.count_masked() == 36u);
  CHECK(mb.count_masked() == 36u);
  // r=1 consumes no randomness, so the generators stay in sync
  Rng c(1);
  CHECK(a.next_u64() == c.next_u64());
}

TEST_CASE("bernoulli mask keeps the revealed pixels' true states") {
  BinaryMap edges = ring_edges(8, 8);
  Rng rng(42);
  TriStateEdgeMap m = bernoulli_mask(edges, 0.5f, rng);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      if (m.at(y, x) == PixelState::Masked) continue;
      PixelState want = edges.at(y, x) ? PixelState::Edge : PixelState::Background;
      CHECK(m.at(y, x) == want);
    }
  CHECK(m.count_masked() > 0u);
  CHECK(m.count_masked() < 64u);
}

TEST_CASE("bernoulli mask replays exactly under the same seed") {
  BinaryMap edges = ring_edges(10, 10);
  Rng a(7), b(7);
  TriStateEdgeMap ma = bernoulli_mask(edges, 0.3f, a);
  TriStateEdgeMap mb = bernoulli_mask(edges, 0.3f, b);
  for (size_t i = 0; i < ma.size(); ++i) CHECK(ma.at_flat(i) == mb.at_flat(i));
}

TEST_CASE("bernoulli mask hits the requested rate within three sigmas") {
  BinaryMap edges(100, 100);  // 10,000 pixels
  for (float r : {0.1f, 0.5f, 0.9f}) {
    Rng rng(static_cast<uint64_t>(r * 1000));
    TriStateEdgeMap m = bernoulli_mask(edges, r, rng);
    const double n = 10000.0;
    const double sigma = std::sqrt(r * (1.0 - r) * n);
    const double got = static_cast<double>(m.count_masked());
    CHECK(std::abs(got - r * n) <= 3.0 * sigma);
  }
}

TEST_CASE("bernoulli mask rejects ratios outside (0,1]") {
  BinaryMap edges = ring_edges(4, 4);
  Rng rng(0);
  CHECK_THROWS_AS(bernoulli_mask(edges, 0.f, rng), std::invalid_argument);
  CHECK_THROWS_AS(bernoulli_mask(edges, -0.5f, rng), std::invalid_argument);
  CHECK_THROWS_AS(bernoulli_mask(edges, 1.01f, rng), std::invalid_argument);
}

TEST_CASE("masked loss on one masked pixel at logit zero equals log 2") {
  // 2x2 map, one masked edge pixel, r=0.25: per-pixel norm = 1/(0.25*4) = 1,
  // so the loss is exactly -log(sigmoid(0)) = log 2.
  BinaryMap edges(2, 2);
  edges.set(0, 0, 1);
  TriStateEdgeMap masked(2, 2, PixelState::Background);
  masked.set(0, 0, PixelState::Masked);
  Tensor logits({1, 2, 2}, 0.f);
  Tensor loss = masked_bce_loss(logits, edges, masked, 0.25f);
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  // ratio-only norm divides by r alone: 4x larger
  Tensor loss_r = masked_bce_loss(logits, edges, masked, 0.25f,
                                  LossNormalization::RatioOnly);
  CHECK(loss_r.item() == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("masked loss vanishes on confident correct predictions") {
  BinaryMap edges(2, 2);
  edges.set(0, 0, 1);
  edges.set(1, 1, 1);
  TriStateEdgeMap masked(2, 2, PixelState::Masked);
  Tensor logits({1, 2, 2},
                std::vector<float>{30.f, -30.f, -30.f, 30.f});
  Tensor loss = masked_bce_loss(logits, edges, masked, 1.f);
  CHECK(loss.item() == doctest::Approx(0.f).epsilon(1e-6));
}

TEST_CASE("masked loss ignores logits at revealed pixels") {
  BinaryMap edges(2, 2);
  edges.set(0, 1, 1);
  TriStateEdgeMap masked(2, 2, PixelState::Background);
  masked.set(0, 1, PixelState::Masked);
  Tensor a({1, 2, 2}, std::vector<float>{0.f, 0.3f, 0.f, 0.f});
  Tensor b({1, 2, 2}, std::vector<float>{50.f, 0.3f, -4.f, 17.f});
  Tensor la = masked_bce_loss(a, edges, masked, 0.25f);
  Tensor lb = masked_bce_loss(b, edges, masked, 0.25f);
  CHECK(la.item() == lb.item());
}

TEST_CASE("masked loss gradient is exactly zero at revealed pixels") {
  // loss locality: revealed pixels contribute nothing to the backward pass
  BinaryMap edges(3, 3);
  edges.set(1, 1, 1);
  TriStateEdgeMap masked(3, 3, PixelState::Background);
  masked.set(1, 1, PixelState::Masked);
  masked.set(0, 2, PixelState::Masked);

  Tensor logits({1, 3, 3});
  for (int i = 0; i < 9; ++i) logits.data()[i] = 0.2f * static_cast<float>(i - 4);
  logits.set_requires_grad(true);

  GradTape tape;
  TapeScope scope(tape);
  Tensor loss = masked_bce_loss(logits, edges, masked, 2.f / 9.f);
  tape.backward(loss);
  const std::vector<float>* g = tape.find_grad(logits);
  REQUIRE(g != nullptr);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      const float gv = (*g)[y * 3 + x];
      if (masked.at(y, x) == PixelState::Masked)
        CHECK(gv != 0.f);
      else
        CHECK(gv == 0.f);
    }
}

TEST_CASE("masked loss over an empty mask is an empty sum") {
  BinaryMap edges(2, 2);
  TriStateEdgeMap none(2, 2, PixelState::Background);
  Tensor logits({1, 2, 2}, std::vector<float>{3.f, -2.f, 0.5f, 9.f});
  logits.set_requires_grad(true);
  GradTape tape;
  TapeScope scope(tape);
  Tensor loss = masked_bce_loss(logits, edges, none, 0.5f);
  CHECK(loss.item() == 0.f);
  tape.backward(loss);
  const std::vector<float>* g = tape.find_grad(logits);
  if (g != nullptr)
    for (float v : *g) CHECK(v == 0.f);
}

TEST_CASE("per-pixel normalization keeps the loss scale flat across ratios") {
  // With logits fixed at 0 every masked pixel costs log 2, so the normalized
  // loss equals log2 * (#masked / (r*H*W)). Averaged over many mask draws the
  // ratio #masked/(r*H*W) concentrates at 1 for any r.
  BinaryMap edges = ring_edges(16, 16);
  Tensor logits({1, 16, 16}, 0.f);
  Rng rng(314);
  for (float r : {0.2f, 0.8f}) {
    double total = 0.0;
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) {
      Rng fork = rng.fork(static_cast<uint64_t>(i));
      TriStateEdgeMap m = bernoulli_mask(edges, r, fork);
      if (m.count_masked() == 0) continue;
      total += masked_bce_loss(logits, edges, m, r).item();
    }
    const double mean = total / draws;
    CHECK(mean == doctest::Approx(std::log(2.0)).epsilon(0.02));
  }
}

TEST_CASE("batch plan draws ratios in range and honors the drop probability") {
  TrainingConfig cfg;
  cfg.seed = 5;
  SUBCASE("drop probability zero never drops the image") {
    cfg.condition_drop_prob = 0.f;
    Rng rng(cfg.seed);
    auto plan = draw_batch_plan(512, cfg, rng);
    REQUIRE(plan.size() == 512u);
    for (const auto& d : plan) {
      CHECK(d.ratio > 0.f);
      CHECK(d.ratio <= 1.f);
      CHECK_FALSE(d.drop_condition);
    }
  }
  SUBCASE("drop probability one always drops it") {
    cfg.condition_drop_prob = 1.f;
    Rng rng(cfg.seed);
    auto plan = draw_batch_plan(64, cfg, rng);
    for (const auto& d : plan) CHECK(d.drop_condition);
  }
  SUBCASE("intermediate probability lands near its expectation") {
    cfg.condition_drop_prob = 0.25f;
    Rng rng(cfg.seed);
    auto plan = draw_batch_plan(4000, cfg, rng);
    int drops = 0;
    for (const auto& d : plan) drops += d.drop_condition ? 1 : 0;
    // 3 sigma around 1000 for n=4000, p=0.25
    CHECK(std::abs(drops - 1000) <= 3.0 * std::sqrt(4000 * 0.25 * 0.75));
  }
  SUBCASE("fixed mask ratio pins every draw") {
    cfg.mask_ratio.kind = MaskRatioDistribution::Kind::Fixed;
    cfg.mask_ratio.fixed_value = 0.35f;
    Rng rng(cfg.seed);
    for (const auto& d : draw_batch_plan(16, cfg, rng))
      CHECK(d.ratio == 0.35f);
  }
}

TEST_CASE("a fresh network starts at the coin-flip loss") {
  // With everything masked (r=1) the per-pixel normalization makes the
  // zero-logit loss exactly -log(0.5), independent of the mask draw.
  MEMONetwork net(tiny_config(), 17);
  std::vector<TrainSample> batch{make_sample(8, 8, 1), make_sample(8, 8, 2)};
  TrainingConfig cfg;
  cfg.seed = 9;
  cfg.mask_ratio.kind = MaskRatioDistribution::Kind::Fixed;
  cfg.mask_ratio.fixed_value = 1.f;
  Rng rng(cfg.seed);
  auto plan = draw_batch_plan(batch.size(), cfg, rng);
  const float loss = batch_loss(net, batch, plan, cfg);
  CHECK(loss == doctest::Approx(std::log(2.f)).epsilon(1e-3));
}

TEST_CASE("ten planned steps at a small rate reduce the planned-batch loss") {
  MEMONetwork net(tiny_config(), 21);
  std::vector<TrainSample> batch{make_sample(8, 8, 11), make_sample(8, 8, 12),
                                 make_sample(8, 8, 13), make_sample(8, 8, 14)};
  TrainingConfig cfg;
  cfg.learning_rate = 1e-3f;
  cfg.weight_decay = 0.f;
  cfg.condition_drop_prob = 0.f;
  cfg.seed = 33;
  AdamWConfig ocfg;
  ocfg.lr = cfg.learning_rate;
  ocfg.weight_decay = 0.f;
  AdamW opt(ocfg);

  Rng rng(cfg.seed);
  auto plan = draw_batch_plan(batch.size(), cfg, rng);
  const float before = batch_loss(net, batch, plan, cfg);
  float last = before;
  for (int i = 0; i < 10; ++i)
    last = train_step_planned(net, batch, plan, cfg, opt);
  const float after = batch_loss(net, batch, plan, cfg);
  CHECK(after < before);
  CHECK(last < before);
}

TEST_CASE("training twice from the same seed yields identical losses") {
  std::vector<TrainSample> data{make_sample(8, 8, 3), make_sample(8, 8, 4),
                                make_sample(8, 8, 5), make_sample(8, 8, 6)};
  TrainingConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 2;
  cfg.learning_rate = 5e-4f;
  cfg.seed = 77;
  cfg.augment = true;

  auto run = [&]() {
    MEMONetwork net(tiny_config(), 55);
    AdamWConfig ocfg;
    ocfg.lr = cfg.learning_rate;
    AdamW opt(ocfg);
    return train(net, data, cfg, opt);
  };
  TrainReport a = run();
  TrainReport b = run();
  REQUIRE(a.epoch_mean_losses.size() == b.epoch_mean_losses.size());
  CHECK(a.total_steps == b.total_steps);
  for (size_t i = 0; i < a.epoch_mean_losses.size(); ++i)
    CHECK(std::abs(a.epoch_mean_losses[i] - b.epoch_mean_losses[i]) <= 1e-6f);
  CHECK(std::abs(a.final_loss - b.final_loss) <= 1e-6f);
}

TEST_CASE("train reports one mean per epoch and invokes the logger per step") {
  std::vector<TrainSample> data{make_sample(8, 8, 30), make_sample(8, 8, 31),
                                make_sample(8, 8, 32)};
  TrainingConfig cfg;
  cfg.batch_size = 2;  // 2 steps per epoch (ceil 3/2)
  cfg.epochs = 3;
  cfg.seed = 4;
  MEMONetwork net(tiny_config(), 8);
  AdamW opt{AdamWConfig{}};
  int calls = 0;
  TrainReport rep = train(net, data, cfg, opt,
                          [&](int, int, float) { ++calls; });
  CHECK(rep.epoch_mean_losses.size() == 3u);
  CHECK(rep.total_steps == 6);
  CHECK(calls == 6);
}

TEST_CASE("dihedral augmentation permutes pixels consistently") {
  TrainSample s = make_sample(4, 4, 60);
  SUBCASE("code 0 is identity") {
    TrainSample t = augment_sample(s, 0);
    for (size_t i = 0; i < s.image.numel(); ++i)
      CHECK(t.image.data()[i] == s.image.data()[i]);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) CHECK(t.edges.at(y, x) == s.edges.at(y, x));
  }
  SUBCASE("every code keeps image and edges aligned") {
    // Mark one asymmetric pixel and verify the image moves with it.
    TrainSample probe{Tensor({3, 4, 4}, 0.f), BinaryMap(4, 4)};
    probe.edges.set(0, 1, 1);
    probe.image.data()[0 * 16 + 0 * 4 + 1] = 1.f;  // channel 0, (0,1)
    for (int code = 0; code < 8; ++code) {
      TrainSample t = augment_sample(probe, code);
      int ey = -1, ex = -1;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
          if (t.edges.at(y, x)) {
            ey = y;
            ex = x;
          }
      REQUIRE(ey >= 0);
      CHECK(t.edges.count() == 1u);
      CHECK(t.image.data()[ey * 4 + ex] == 1.f);
    }
  }
  SUBCASE("the eight codes produce eight distinct corner placements") {
    TrainSample probe{Tensor({3, 4, 4}, 0.f), BinaryMap(4, 4)};
    probe.edges.set(0, 0, 1);
    probe.edges.set(0, 1, 1);
    int distinct = 0;
    std::vector<std::vector<uint8_t>> seen;
    for (int code = 0; code < 8; ++code) {
      TrainSample t = augment_sample(probe, code);
      std::vector<uint8_t> key(16);
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) key[y * 4 + x] = t.edges.at(y, x);
      bool dup = false;
      for (const auto& k : seen) dup = dup || k == key;
      if (!dup) {
        seen.push_back(key);
        ++distinct;
      }
    }
    CHECK(distinct == 8);
  }
  SUBCASE("transposing codes are skipped on non-square samples") {
    TrainSample rect = make_sample(4, 8, 61);
    for (int code = 0; code < 8; ++code) {
      TrainSample t = augment_sample(rect, code);
      CHECK(t.edges.height == 4);
      CHECK(t.edges.width == 8);
    }
  }
}
