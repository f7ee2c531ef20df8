#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "memo/edge_map.hpp"
#include "memo/maps.hpp"
#include "memo/network.hpp"
#include "memo/optim.hpp"
#include "memo/rng.hpp"

namespace memo {

struct MaskRatioDistribution {
  enum class Kind { Uniform, Fixed };
  Kind kind = Kind::Uniform;
  float fixed_value = 1.f;

  // Uniform draws cover (0,1]; r = 1 means everything masked.
  float sample(Rng& rng) const {
    if (kind == Kind::Fixed) return fixed_value;
    return static_cast<float>(1.0 - rng.uniform());
  }
};

enum class LossNormalization {
  PerPixel,   // 1 / (r * H * W)
  RatioOnly,  // 1 / r
};

struct TrainingConfig {
  int batch_size = 16;
  float learning_rate = 5e-5f;
  int epochs = 10;
  float weight_decay = 0.01f;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  float adam_eps = 1e-8f;
  MaskRatioDistribution mask_ratio;
  float condition_drop_prob = 0.10f;
  LossNormalization loss_normalization = LossNormalization::PerPixel;
  uint64_t seed = 0;
  int threads = 1;
  bool augment = true;  // flips and 90-degree rotations
};

struct TrainSample {
  Tensor image;     // [3,H,W] in [0,1]
  BinaryMap edges;  // ground truth
};

// Pixel i becomes MASKED iff U_i < r; other pixels keep their edge state.
// r = 1 masks everything without consuming draws.
TriStateEdgeMap bernoulli_mask(const BinaryMap& edges, float r, Rng& rng);

// Differentiable scalar: -(1/norm) * sum over MASKED pixels of
// [E*log p + (1-E)*log(1-p)], norm = r*H*W or r depending on the mode.
Tensor masked_bce_loss(const Tensor& logits, const BinaryMap& edges,
                       const TriStateEdgeMap& masked, float r,
                       LossNormalization norm = LossNormalization::PerPixel);

// Per-sample randomness for one batch, drawn up front so a step can be
// replayed or evaluated at fixed masks.
struct SampleDraw {
  float ratio;
  uint64_t mask_seed;
  bool drop_condition;
};

std::vector<SampleDraw> draw_batch_plan(size_t batch, const TrainingConfig& cfg,
                                        Rng& rng);

// Mean masked loss of the batch under a fixed plan, no parameter update.
float batch_loss(const MEMONetwork& net, const std::vector<TrainSample>& batch,
                 const std::vector<SampleDraw>& plan, const TrainingConfig& cfg);

// One optimizer step on the batch under a fixed plan; returns the mean loss
// measured before the update.
float train_step_planned(MEMONetwork& net, const std::vector<TrainSample>& batch,
                         const std::vector<SampleDraw>& plan,
                         const TrainingConfig& cfg, AdamW& opt);

float train_step(MEMONetwork& net, const std::vector<TrainSample>& batch,
                 const TrainingConfig& cfg, AdamW& opt, Rng& rng);

struct TrainReport {
  std::vector<float> epoch_mean_losses;
  int total_steps = 0;
  float final_loss = 0.f;
};

using TrainLogger = std::function<void(int epoch, int step, float loss)>;

TrainReport train(MEMONetwork& net, const std::vector<TrainSample>& dataset,
                  const TrainingConfig& cfg, AdamW& opt,
                  const TrainLogger& log = {});

// Dihedral-group augmentation; code in [0,8). Transposing codes require a
// square sample and are skipped otherwise.
TrainSample augment_sample(const TrainSample& s, int code);

}  // namespace memo
