#include "memo/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace memo {
namespace {

uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.f, 1.f);
  return static_cast<uint8_t>(std::lround(c * 255.f));
}

[[noreturn]] void io_fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) io_fail("cannot open for writing", path);
  return f;
}

struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
};

PnmHeader read_header(std::istream& in, const std::string& path) {
  PnmHeader h;
  auto next_token = [&](std::string& tok) {
    tok.clear();
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) io_fail("truncated header", path);
  };
  std::string tok;
  next_token(tok);
  h.magic = tok;
  next_token(tok);
  h.width = std::stoi(tok);
  next_token(tok);
  h.height = std::stoi(tok);
  next_token(tok);
  h.maxval = std::stoi(tok);
  if (h.width <= 0 || h.height <= 0 || h.maxval != 255)
    io_fail("unsupported image geometry", path);
  return h;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("write_ppm expects a [3,H,W] tensor, got " +
                                shape_string(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<uint8_t> buf(plane * 3);
  for (size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      buf[i * 3 + c] = quantize(image.data()[c * plane + i]);
  std::ofstream f = open_out(path);
  f << "P6\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) io_fail("write failed", path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) io_fail("cannot open", path);
  const PnmHeader h = read_header(f, path);
  if (h.magic != "P6") io_fail("not a binary PPM", path);
  const size_t plane = static_cast<size_t>(h.height) * h.width;
  std::vector<uint8_t> buf(plane * 3);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size())) io_fail("truncated pixel data", path);
  Tensor out({3, h.height, h.width});
  for (size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      out.data()[c * plane + i] = static_cast<float>(buf[i * 3 + c]) / 255.f;
  return out;
}

void write_pgm(const std::string& path, const std::vector<uint8_t>& gray, int height,
               int width) {
  if (gray.size() != static_cast<size_t>(height) * width)
    throw std::invalid_argument("write_pgm: buffer does not match extents");
  std::ofstream f = open_out(path);
  f << "P5\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!f) io_fail("write failed", path);
}

void write_pgm(const std::string& path, const BinaryMap& edges) {
  std::vector<uint8_t> buf(edges.values.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = edges.values[i] ? 255 : 0;
  write_pgm(path, buf, edges.height, edges.width);
}

void write_pgm(const std::string& path, const ProbabilityMap& probabilities) {
  std::vector<uint8_t> buf(probabilities.values.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = quantize(probabilities.values[i]);
  write_pgm(path, buf, probabilities.height, probabilities.width);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) io_fail("cannot open", path);
  const PnmHeader h = read_header(f, path);
  if (h.magic != "P5") io_fail("not a binary PGM", path);
  GrayImage out;
  out.height = h.height;
  out.width = h.width;
  out.values.resize(static_cast<size_t>(h.height) * h.width);
  f.read(reinterpret_cast<char*>(out.values.data()),
         static_cast<std::streamsize>(out.values.size()));
  if (f.gcount() != static_cast<std::streamsize>(out.values.size()))
    io_fail("truncated pixel data", path);
  return out;
}

BinaryMap read_binary_map(const std::string& path, uint8_t threshold) {
  const GrayImage g = read_pgm(path);
  BinaryMap out(g.height, g.width);
  for (size_t i = 0; i < g.values.size(); ++i)
    out.values[i] = g.values[i] >= threshold ? 1 : 0;
  return out;
}

ProbabilityMap read_probability_map(const std::string& path) {
  const GrayImage g = read_pgm(path);
  ProbabilityMap out(g.height, g.width);
  for (size_t i = 0; i < g.values.size(); ++i)
    out.values[i] = static_cast<float>(g.values[i]) / 255.f;
  return out;
}

void write_raw_f32(const std::string& path, const ProbabilityMap& probabilities) {
  std::ofstream f = open_out(path);
  static_assert(sizeof(float) == 4);
  f.write(reinterpret_cast<const char*>(probabilities.values.data()),
          static_cast<std::streamsize>(probabilities.values.size() * 4));
  if (!f) io_fail("write failed", path);
}

Tensor read_image_tensor(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) io_fail("cannot open", path);
  char magic[2] = {0, 0};
  probe.read(magic, 2);
  probe.close();
  if (magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
  if (magic[0] == 'P' && magic[1] == '5') {
    const GrayImage g = read_pgm(path);
    Tensor out({3, g.height, g.width});
    const size_t plane = g.values.size();
    for (size_t i = 0; i < plane; ++i) {
      const float v = static_cast<float>(g.values[i]) / 255.f;
      out.data()[i] = v;
      out.data()[plane + i] = v;
      out.data()[2 * plane + i] = v;
    }
    return out;
  }
  io_fail("unrecognized image format", path);
}

}  // namespace memo
