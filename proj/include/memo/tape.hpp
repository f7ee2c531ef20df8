#pragma once

#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "memo/tensor.hpp"

namespace memo {

// Reverse-mode gradient tape. Ops append a backward closure per recorded
// node; backward() seeds the loss gradient with 1 and replays the closures
// in reverse order. Gradients are keyed by storage identity, so several
// tapes can differentiate through the same shared parameters concurrently
// as long as each tape's accumulation stays tape-local.
template <typename T>
class GradTapeT {
 public:
  using BackwardFn = std::function<void(GradTapeT&)>;

  void record(BackwardFn fn) { nodes_.push_back(std::move(fn)); }

  // Gradient buffer for `t`, created zero-filled on first access.
  std::vector<T>& grad(const TensorT<T>& t) {
    auto [it, inserted] = grads_.try_emplace(t.impl());
    if (inserted) it->second.assign(static_cast<size_t>(t.numel()), T(0));
    return it->second;
  }

  const std::vector<T>* find_grad(const TensorT<T>& t) const {
    auto it = grads_.find(t.impl());
    return it == grads_.end() ? nullptr : &it->second;
  }

  void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward() expects a scalar loss");
    grad(loss).assign(1, T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
  }

  size_t node_count() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  std::vector<BackwardFn> nodes_;
  std::unordered_map<const TensorImpl<T>*, std::vector<T>> grads_;
};

using GradTape = GradTapeT<float>;

namespace detail {
template <typename T>
inline GradTapeT<T>*& tape_slot() {
  thread_local GradTapeT<T>* slot = nullptr;
  return slot;
}
}  // namespace detail

template <typename T>
GradTapeT<T>* active_tape() {
  return detail::tape_slot<T>();
}

// Activates a tape for the current thread for the scope's lifetime.
template <typename T>
class TapeScopeT {
 public:
  explicit TapeScopeT(GradTapeT<T>& tape) : prev_(detail::tape_slot<T>()) {
    detail::tape_slot<T>() = &tape;
  }
  ~TapeScopeT() { detail::tape_slot<T>() = prev_; }
  TapeScopeT(const TapeScopeT&) = delete;
  TapeScopeT& operator=(const TapeScopeT&) = delete;

 private:
  GradTapeT<T>* prev_;
};

using TapeScope = TapeScopeT<float>;

}  // namespace memo
