#include "memo/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace memo {

GradMap collect_gradients(const ParameterRegistry& params, const GradTape& tape) {
  GradMap out;
  for (const auto& e : params.entries()) {
    if (!e.tensor.requires_grad()) continue;
    if (const std::vector<float>* g = tape.find_grad(e.tensor))
      out.emplace(e.name, *g);
    else
      out.emplace(e.name, std::vector<float>(static_cast<size_t>(e.tensor.numel()), 0.f));
  }
  return out;
}

void accumulate_gradients(GradMap& into, const GradMap& from) {
  for (const auto& [name, g] : from) {
    auto [it, inserted] = into.try_emplace(name, g);
    if (inserted) continue;
    std::vector<float>& dst = it->second;
    if (dst.size() != g.size())
      throw std::invalid_argument("gradient size mismatch for " + name);
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

void AdamW::step(ParameterRegistry& params, const GradMap& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  for (const auto& e : params.entries()) {
    if (!e.tensor.requires_grad()) continue;
    const auto git = grads.find(e.name);
    if (git == grads.end())
      throw std::invalid_argument("missing gradient for trainable parameter " + e.name);
    const std::vector<float>& g = git->second;
    const size_t n = static_cast<size_t>(e.tensor.numel());
    if (g.size() != n)
      throw std::invalid_argument("gradient size mismatch for " + e.name);
    Moments& mom = moments_[e.name];
    if (mom.m.empty()) {
      mom.m.assign(n, 0.f);
      mom.v.assign(n, 0.f);
    }
    Tensor param = e.tensor;  // shared storage, updated in place
    float* p = param.data();
    for (size_t i = 0; i < n; ++i) {
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.f - cfg_.beta1) * g[i];
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.f - cfg_.beta2) * g[i] * g[i];
      const float mhat = static_cast<float>(mom.m[i] / bc1);
      const float vhat = static_cast<float>(mom.v[i] / bc2);
      p[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[i]);
    }
  }
}

void adamw_step(ParameterRegistry& params, const GradMap& grads, AdamW& state) {
  state.step(params, grads);
}

}  // namespace memo
