#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "memo/params.hpp"
#include "memo/tape.hpp"

namespace memo {

using GradMap = std::unordered_map<std::string, std::vector<float>>;

// Gradients for every trainable parameter in registry order; parameters the
// loss never touched get all-zero gradients.
GradMap collect_gradients(const ParameterRegistry& params, const GradTape& tape);

void accumulate_gradients(GradMap& into, const GradMap& from);

struct AdamWConfig {
  float lr = 5e-5f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

// Adam with decoupled weight decay. Moments are kept per parameter name so
// parameters added later (adapter weights) pick up fresh state.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  AdamWConfig& config() { return cfg_; }
  const AdamWConfig& config() const { return cfg_; }
  int64_t step_count() const { return t_; }

  // Updates every trainable parameter in place. Throws invalid_argument if
  // grads lacks an entry for a trainable parameter.
  void step(ParameterRegistry& params, const GradMap& grads);

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  AdamWConfig cfg_;
  std::unordered_map<std::string, Moments> moments_;
  int64_t t_ = 0;
};

void adamw_step(ParameterRegistry& params, const GradMap& grads, AdamW& state);

}  // namespace memo
