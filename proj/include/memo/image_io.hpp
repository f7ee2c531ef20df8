#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memo/maps.hpp"
#include "memo/tensor.hpp"

namespace memo {

// Binary P6, maxval 255, planar tensor [3,H,W] in [0,1] quantized to bytes.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Binary P5, maxval 255. Binary maps store edge=255, background=0.
void write_pgm(const std::string& path, const std::vector<uint8_t>& gray, int height,
               int width);
void write_pgm(const std::string& path, const BinaryMap& edges);
void write_pgm(const std::string& path, const ProbabilityMap& probabilities);

struct GrayImage {
  int height = 0, width = 0;
  std::vector<uint8_t> values;
};

GrayImage read_pgm(const std::string& path);

BinaryMap read_binary_map(const std::string& path, uint8_t threshold = 128);
ProbabilityMap read_probability_map(const std::string& path);

// Raw little-endian f32 row-major dump, no header.
void write_raw_f32(const std::string& path, const ProbabilityMap& probabilities);

// Ingests a PPM or PGM as a [3,H,W] tensor in [0,1] (gray replicated).
Tensor read_image_tensor(const std::string& path);

}  // namespace memo
