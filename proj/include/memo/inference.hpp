#pragma once

#include <cstdint>
#include <vector>

#include "memo/edge_map.hpp"
#include "memo/maps.hpp"
#include "memo/network.hpp"
#include "memo/rng.hpp"

namespace memo {

enum class UnmaskStrategy { LocMax, Random, TopK };

struct InferenceConfig {
  int steps = 10;  // forward-pass budget; the last step finalizes everything left
  UnmaskStrategy strategy = UnmaskStrategy::LocMax;
  float scale = 1.f;     // granularity guidance scale, > 0
  float fraction = 0.f;  // Random/TopK per-step share; 0 means 1/steps
  float threshold = 0.5f;
  uint64_t seed = 0;  // Random strategy only
};

struct InferenceTrace {
  std::vector<size_t> masked_per_step;  // masked count entering each step
  std::vector<int> finalize_step;       // per pixel; -1 until finalized
  int forward_passes = 0;               // conditioned-branch predictions
};

struct InferenceResult {
  BinaryMap edges;
  ProbabilityMap probabilities;  // per-pixel probability at finalization time
  InferenceTrace trace;
};

// c_i = max(p_i, 1-p_i) on masked pixels, 0 on finalized ones.
ProbabilityMap confidence(const ProbabilityMap& p, const TriStateEdgeMap& edges);

// Masked pixels whose confidence is maximal within their clipped 3x3
// neighborhood; plateau ties select every plateau pixel. Flat indices in
// row-major order.
std::vector<size_t> locmax_select(const ProbabilityMap& c,
                                  const TriStateEdgeMap& edges);

struct StepResult {
  std::vector<size_t> finalized;
  ProbabilityMap probabilities;
};

// One unmasking iteration: predicts at r = current masked fraction and
// finalizes the strategy's selection at the 0.5 threshold. Requires at
// least one masked pixel.
StepResult unmask_step(const MEMONetwork& net, const Tensor& image,
                       TriStateEdgeMap& edges, const InferenceConfig& cfg,
                       Rng& rng);

// Full loop from an all-masked map: cfg.steps-1 selective iterations, then
// one final prediction that finalizes every remaining pixel (or earlier
// natural completion).
InferenceResult run_inference(const MEMONetwork& net, const Tensor& image,
                              const InferenceConfig& cfg);

}  // namespace memo
