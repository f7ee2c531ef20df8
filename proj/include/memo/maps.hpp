#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace memo {

struct ProbabilityMap {
  int height = 0, width = 0;
  std::vector<float> values;

  ProbabilityMap() = default;
  ProbabilityMap(int h, int w, float fill = 0.f)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  float at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
  float& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return values.size(); }
};

struct BinaryMap {
  int height = 0, width = 0;
  std::vector<uint8_t> values;

  BinaryMap() = default;
  BinaryMap(int h, int w, uint8_t fill = 0)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  uint8_t at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
  void set(int y, int x, uint8_t v) { values[static_cast<size_t>(y) * width + x] = v; }
  size_t size() const { return values.size(); }

  size_t count() const {
    size_t n = 0;
    for (const uint8_t v : values)
      if (v) ++n;
    return n;
  }
};

inline BinaryMap threshold_map(const ProbabilityMap& p, float t) {
  BinaryMap out(p.height, p.width);
  for (size_t i = 0; i < p.values.size(); ++i) out.values[i] = p.values[i] >= t ? 1 : 0;
  return out;
}

}  // namespace memo
