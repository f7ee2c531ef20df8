#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "memo/tensor.hpp"

namespace memo {

struct ParamEntry {
  std::string name;
  Tensor tensor;
};

// Ordered, name-addressed collection of model parameters. Registration
// order is the canonical serialization order.
class ParameterRegistry {
 public:
  Tensor add(const std::string& name, Tensor t, bool trainable = true) {
    if (find(name))
      throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_requires_grad(trainable);
    entries_.push_back({name, t});
    return t;
  }

  Tensor* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }

  const std::vector<ParamEntry>& entries() const { return entries_; }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  int64_t trainable_parameter_count() const {
    int64_t n = 0;
    for (const auto& e : entries_)
      if (e.tensor.requires_grad()) n += e.tensor.numel();
    return n;
  }

  void set_all_trainable(bool trainable) {
    for (auto& e : entries_) e.tensor.set_requires_grad(trainable);
  }

 private:
  std::vector<ParamEntry> entries_;
};

}  // namespace memo
