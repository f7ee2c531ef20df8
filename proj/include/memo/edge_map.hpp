#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "memo/tensor.hpp"

namespace memo {

enum class PixelState : uint8_t { Background = 0, Edge = 1, Masked = 2 };

// Per-pixel tri-state map: the partially revealed edge map the network is
// conditioned on. Masked pixels are the ones still to be decided.
class TriStateEdgeMap {
 public:
  TriStateEdgeMap(int height, int width, PixelState fill = PixelState::Masked)
      : height_(height), width_(width) {
    if (height <= 0 || width <= 0)
      throw std::invalid_argument("edge map extents must be positive");
    states_.assign(static_cast<size_t>(height) * width, fill);
  }

  static TriStateEdgeMap all_masked(int height, int width) {
    return TriStateEdgeMap(height, width, PixelState::Masked);
  }

  // edges: H*W flags, nonzero = edge. Every pixel is finalized.
  static TriStateEdgeMap from_binary(const std::vector<uint8_t>& edges, int height,
                                     int width) {
    TriStateEdgeMap m(height, width, PixelState::Background);
    if (edges.size() != m.states_.size())
      throw std::invalid_argument("edge buffer does not match extents");
    for (size_t i = 0; i < edges.size(); ++i)
      if (edges[i]) m.states_[i] = PixelState::Edge;
    return m;
  }

  int height() const { return height_; }
  int width() const { return width_; }
  size_t size() const { return states_.size(); }

  PixelState at(int y, int x) const { return states_[index(y, x)]; }
  void set(int y, int x, PixelState s) { states_[index(y, x)] = s; }
  PixelState at_flat(size_t i) const { return states_[i]; }
  void set_flat(size_t i, PixelState s) { states_[i] = s; }

  const std::vector<PixelState>& states() const { return states_; }

  size_t count(PixelState s) const {
    size_t n = 0;
    for (const PixelState v : states_)
      if (v == s) ++n;
    return n;
  }

  size_t count_masked() const { return count(PixelState::Masked); }

  double masked_fraction() const {
    return static_cast<double>(count_masked()) / static_cast<double>(states_.size());
  }

 private:
  size_t index(int y, int x) const {
    if (y < 0 || y >= height_ || x < 0 || x >= width_)
      throw std::out_of_range("edge map index out of range");
    return static_cast<size_t>(y) * width_ + x;
  }

  int height_, width_;
  std::vector<PixelState> states_;
};

// Two-channel encoding consumed by the edge encoder: channel 0 carries edge
// values (1 at EDGE, 0 elsewhere), channel 1 flags masked pixels.
inline Tensor encode_tristate(const TriStateEdgeMap& m) {
  const int h = m.height(), w = m.width();
  Tensor out({2, h, w});
  float* edge = out.data();
  float* mask = out.data() + static_cast<size_t>(h) * w;
  for (size_t i = 0; i < m.size(); ++i) {
    edge[i] = m.at_flat(i) == PixelState::Edge ? 1.f : 0.f;
    mask[i] = m.at_flat(i) == PixelState::Masked ? 1.f : 0.f;
  }
  return out;
}

inline TriStateEdgeMap decode_tristate(const Tensor& t) {
  if (t.ndim() != 3 || t.dim(0) != 2)
    throw std::invalid_argument("expected a [2,H,W] tri-state encoding, got " +
                                shape_string(t.shape()));
  const int h = t.dim(1), w = t.dim(2);
  TriStateEdgeMap m(h, w, PixelState::Background);
  const float* edge = t.data();
  const float* mask = t.data() + static_cast<size_t>(h) * w;
  for (size_t i = 0; i < m.size(); ++i) {
    const bool e = edge[i] != 0.f, k = mask[i] != 0.f;
    if (e && k)
      throw std::invalid_argument("invalid tri-state encoding: pixel is both edge and masked");
    m.set_flat(i, k ? PixelState::Masked : (e ? PixelState::Edge : PixelState::Background));
  }
  return m;
}

}  // namespace memo
