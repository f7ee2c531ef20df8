#include "memo/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "memo/image_io.hpp"
#include "memo/parallel.hpp"

namespace memo {
namespace {

struct Color {
  float r, g, b;
};

float linf(const Color& a, const Color& b) {
  return std::max({std::abs(a.r - b.r), std::abs(a.g - b.g), std::abs(a.b - b.b)});
}

Color random_color(Rng& rng) {
  return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
          static_cast<float>(rng.uniform())};
}

// Candidate with the best worst-case separation from the taken colors wins
// if no draw clears the threshold outright.
Color separated_color(Rng& rng, const std::vector<Color>& taken, float min_sep) {
  Color best{0.5f, 0.5f, 0.5f};
  float best_sep = -1.f;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const Color c = random_color(rng);
    float sep = 2.f;
    for (const Color& t : taken) sep = std::min(sep, linf(c, t));
    if (sep >= min_sep) return c;
    if (sep > best_sep) {
      best_sep = sep;
      best = c;
    }
  }
  return best;
}

enum class ShapeKind { Ellipse, Polygon, Rectangle };

struct Shape {
  ShapeKind kind;
  float cx, cy;
  float ax, ay;     // semi-extents
  float angle;      // rotation
  std::vector<float> poly_x, poly_y;  // polygon vertices
  Color color;
};

ShapeKind pick_kind(const SceneConfig& cfg, Rng& rng) {
  const float total = cfg.weight_ellipse + cfg.weight_polygon + cfg.weight_rectangle;
  if (total <= 0.f) throw std::invalid_argument("shape family weights sum to zero");
  const float u = static_cast<float>(rng.uniform()) * total;
  if (u < cfg.weight_ellipse) return ShapeKind::Ellipse;
  if (u < cfg.weight_ellipse + cfg.weight_polygon) return ShapeKind::Polygon;
  return ShapeKind::Rectangle;
}

Shape sample_shape(const SceneConfig& cfg, Rng& rng) {
  Shape s;
  s.kind = pick_kind(cfg, rng);
  s.cx = static_cast<float>(rng.uniform(0.0, cfg.width));
  s.cy = static_cast<float>(rng.uniform(0.0, cfg.height));
  s.ax = static_cast<float>(rng.uniform(cfg.min_radius, cfg.max_radius));
  s.ay = static_cast<float>(rng.uniform(cfg.min_radius, cfg.max_radius));
  s.angle = static_cast<float>(rng.uniform(0.0, 3.141592653589793));
  if (s.kind == ShapeKind::Polygon) {
    const int k = static_cast<int>(rng.uniform_int(3, 6));
    std::vector<double> phi(static_cast<size_t>(k));
    for (int attempt = 0; attempt < 32; ++attempt) {
      for (auto& p : phi) p = rng.uniform(0.0, 2.0 * 3.141592653589793);
      std::sort(phi.begin(), phi.end());
      double min_gap = 2.0 * 3.141592653589793 - (phi.back() - phi.front());
      for (size_t i = 1; i < phi.size(); ++i)
        min_gap = std::min(min_gap, phi[i] - phi[i - 1]);
      if (min_gap > 0.35) break;
    }
    const float ca = std::cos(s.angle), sa = std::sin(s.angle);
    for (const double p : phi) {
      const float ex = s.ax * static_cast<float>(std::cos(p));
      const float ey = s.ay * static_cast<float>(std::sin(p));
      s.poly_x.push_back(s.cx + ex * ca - ey * sa);
      s.poly_y.push_back(s.cy + ex * sa + ey * ca);
    }
  }
  return s;
}

bool inside(const Shape& s, float px, float py) {
  switch (s.kind) {
    case ShapeKind::Ellipse: {
      const float dx = px - s.cx, dy = py - s.cy;
      const float ca = std::cos(s.angle), sa = std::sin(s.angle);
      const float u = dx * ca + dy * sa;
      const float v = -dx * sa + dy * ca;
      return (u * u) / (s.ax * s.ax) + (v * v) / (s.ay * s.ay) <= 1.f;
    }
    case ShapeKind::Rectangle: {
      const float dx = px - s.cx, dy = py - s.cy;
      const float ca = std::cos(s.angle), sa = std::sin(s.angle);
      const float u = dx * ca + dy * sa;
      const float v = -dx * sa + dy * ca;
      return std::abs(u) <= s.ax && std::abs(v) <= s.ay;
    }
    case ShapeKind::Polygon: {
      const size_t k = s.poly_x.size();
      for (size_t i = 0; i < k; ++i) {
        const size_t j = (i + 1) % k;
        const float ex = s.poly_x[j] - s.poly_x[i];
        const float ey = s.poly_y[j] - s.poly_y[i];
        const float cross = ex * (py - s.poly_y[i]) - ey * (px - s.poly_x[i]);
        if (cross < 0.f) return false;  // vertices wound counter-clockwise
      }
      return true;
    }
  }
  return false;
}

BinaryMap rasterize(const Shape& s, int height, int width) {
  BinaryMap m(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (inside(s, static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f))
        m.set(y, x, 1);
  return m;
}

// Front-to-back visibility resolution over the full rasterized masks.
std::vector<BinaryMap> visible_masks(const std::vector<BinaryMap>& full, int height,
                                     int width) {
  std::vector<BinaryMap> vis(full.size());
  BinaryMap occupied(height, width);
  for (size_t i = full.size(); i-- > 0;) {
    BinaryMap v(height, width);
    for (size_t p = 0; p < v.values.size(); ++p) {
      v.values[p] = full[i].values[p] && !occupied.values[p];
      occupied.values[p] = occupied.values[p] || full[i].values[p];
    }
    vis[i] = std::move(v);
  }
  return vis;
}

bool contours_stay_thin(const std::vector<BinaryMap>& vis) {
  for (const BinaryMap& v : vis) {
    if (v.count() == 0) continue;
    if (has_solid_2x2_block(mask_to_contour(v))) return false;
  }
  return true;
}

// Union of the visible contours with occlusion borders de-duplicated: a
// boundary between two shapes belongs to the one in front, so contour
// pixels 8-adjacent to a closer shape are dropped. Keeps the aggregate a
// single pixel wide where shapes overlap or touch. vis is indexed by draw
// order (later = closer); empty slots stand for fully occluded shapes.
BinaryMap pruned_scene_edges(const std::vector<BinaryMap>& vis, int h, int w) {
  std::vector<int> owner(static_cast<size_t>(h) * w, -1);
  for (size_t s = 0; s < vis.size(); ++s)
    for (size_t i = 0; i < vis[s].values.size(); ++i)
      if (vis[s].values[i]) owner[i] = static_cast<int>(s);

  BinaryMap out(h, w);
  for (size_t s = 0; s < vis.size(); ++s) {
    if (vis[s].values.empty() || vis[s].count() == 0) continue;
    const BinaryMap contour = mask_to_contour(vis[s]);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!contour.at(y, x)) continue;
        bool behind_neighbor = false;
        for (int dy = -1; dy <= 1 && !behind_neighbor; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            if (owner[static_cast<size_t>(ny) * w + nx] > static_cast<int>(s)) {
              behind_neighbor = true;
              break;
            }
          }
        if (!behind_neighbor) out.set(y, x, 1);
      }
    }
  }
  return out;
}

void gaussian_blur(Tensor& image, float sigma) {
  if (sigma <= 0.f) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.f * sigma)));
  std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
  float total = 0.f;
  for (int i = -radius; i <= radius; ++i) {
    const float v = std::exp(-0.5f * (static_cast<float>(i) / sigma) *
                             (static_cast<float>(i) / sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : kernel) v /= total;

  const int h = image.dim(1), w = image.dim(2);
  std::vector<float> tmp(static_cast<size_t>(h) * w);
  for (int c = 0; c < 3; ++c) {
    float* plane = image.data() + static_cast<size_t>(c) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, w - 1);
          acc += kernel[static_cast<size_t>(i + radius)] *
                 plane[static_cast<size_t>(y) * w + xx];
        }
        tmp[static_cast<size_t>(y) * w + x] = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, h - 1);
          acc += kernel[static_cast<size_t>(i + radius)] *
                 tmp[static_cast<size_t>(yy) * w + x];
        }
        plane[static_cast<size_t>(y) * w + x] = acc;
      }
  }
}

}  // namespace

bool has_solid_2x2_block(const BinaryMap& m) {
  for (int y = 0; y + 1 < m.height; ++y)
    for (int x = 0; x + 1 < m.width; ++x)
      if (m.at(y, x) && m.at(y, x + 1) && m.at(y + 1, x) && m.at(y + 1, x + 1))
        return true;
  return false;
}

BinaryMap mask_to_contour(const BinaryMap& mask) {
  BinaryMap out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      bool eroded = true;
      for (int dy = -1; dy <= 1 && eroded; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          const bool in = ny >= 0 && ny < mask.height && nx >= 0 && nx < mask.width;
          if (!in || !mask.at(ny, nx)) {
            eroded = false;
            break;
          }
        }
      if (!eroded) out.set(y, x, 1);
    }
  }
  return out;
}

BinaryMap aggregate_edges(const std::vector<BinaryMap>& contours) {
  if (contours.empty()) throw std::invalid_argument("no contours to aggregate");
  BinaryMap out(contours.front().height, contours.front().width);
  for (const BinaryMap& c : contours) {
    if (c.height != out.height || c.width != out.width)
      throw std::invalid_argument("aggregate_edges: contour extents differ");
    for (size_t i = 0; i < out.values.size(); ++i)
      out.values[i] = out.values[i] || c.values[i];
  }
  return out;
}

BinaryMap scene_edges(const Scene& scene) {
  const int h = scene.image.dim(1), w = scene.image.dim(2);
  if (scene.masks.empty()) return BinaryMap(h, w);
  int max_z = 0;
  for (const InstanceMask& m : scene.masks) max_z = std::max(max_z, m.z_order);
  std::vector<BinaryMap> vis(static_cast<size_t>(max_z) + 1);
  for (const InstanceMask& m : scene.masks)
    vis[static_cast<size_t>(m.z_order)] = m.mask;
  return pruned_scene_edges(vis, h, w);
}

Scene generate_scene(const SceneConfig& cfg, Rng& rng) {
  if (cfg.width <= 0 || cfg.height <= 0)
    throw std::invalid_argument("scene extents must be positive");
  if (cfg.min_shapes < 1 || cfg.max_shapes < cfg.min_shapes)
    throw std::invalid_argument("shape count range is invalid");
  if (!(cfg.min_radius > 0.f) || cfg.max_radius < cfg.min_radius)
    throw std::invalid_argument("shape radius range is invalid");

  const Color bg0 = random_color(rng);
  const Color bg1 = cfg.gradient_background ? random_color(rng) : bg0;
  std::vector<Color> taken{bg0, bg1};

  const int target = static_cast<int>(
      rng.uniform_int(cfg.min_shapes, cfg.max_shapes));
  std::vector<Shape> shapes;        // draw order: first = backmost
  std::vector<BinaryMap> full;      // matching full rasterizations
  for (int slot = 0; slot < target; ++slot) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      Shape cand = sample_shape(cfg, rng);
      BinaryMap raster = rasterize(cand, cfg.height, cfg.width);
      if (raster.count() == 0) continue;  // degenerate after clipping
      full.push_back(std::move(raster));
      const std::vector<BinaryMap> vis = visible_masks(full, cfg.height, cfg.width);
      if (!contours_stay_thin(vis) ||
          has_solid_2x2_block(pruned_scene_edges(vis, cfg.height, cfg.width))) {
        full.pop_back();
        continue;
      }
      cand.color = separated_color(rng, taken, cfg.min_color_separation);
      taken.push_back(cand.color);
      shapes.push_back(std::move(cand));
      break;
    }
  }

  Scene scene;
  scene.image = Tensor({3, cfg.height, cfg.width});
  const size_t plane = static_cast<size_t>(cfg.height) * cfg.width;

  const float gx = static_cast<float>(rng.uniform(-1.0, 1.0));
  const float gy = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      float t = 0.5f;
      if (cfg.gradient_background) {
        t = 0.5f + 0.5f * (gx * (static_cast<float>(x) / cfg.width - 0.5f) +
                           gy * (static_cast<float>(y) / cfg.height - 0.5f));
        t = std::clamp(t, 0.f, 1.f);
      }
      const size_t i = static_cast<size_t>(y) * cfg.width + x;
      scene.image.data()[i] = bg0.r + (bg1.r - bg0.r) * t;
      scene.image.data()[plane + i] = bg0.g + (bg1.g - bg0.g) * t;
      scene.image.data()[2 * plane + i] = bg0.b + (bg1.b - bg0.b) * t;
    }
  }

  for (size_t s = 0; s < shapes.size(); ++s) {
    const Color& c = shapes[s].color;
    for (size_t i = 0; i < plane; ++i) {
      if (!full[s].values[i]) continue;
      scene.image.data()[i] = c.r;
      scene.image.data()[plane + i] = c.g;
      scene.image.data()[2 * plane + i] = c.b;
    }
  }

  std::vector<BinaryMap> vis = visible_masks(full, cfg.height, cfg.width);
  for (size_t s = 0; s < vis.size(); ++s) {
    if (vis[s].count() == 0) continue;  // fully occluded
    InstanceMask m;
    m.mask = std::move(vis[s]);
    m.z_order = static_cast<int>(s);
    scene.masks.push_back(std::move(m));
  }

  gaussian_blur(scene.image, cfg.blur_sigma);
  if (cfg.noise_sigma > 0.f)
    for (auto& v : scene.image.values())
      v += cfg.noise_sigma * static_cast<float>(rng.gaussian());
  for (auto& v : scene.image.values()) v = std::clamp(v, 0.f, 1.f);
  if (cfg.invert_colors)
    for (auto& v : scene.image.values()) v = 1.f - v;
  return scene;
}

namespace {

std::string sample_name(int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.%s", index, ext);
  return buf;
}

}  // namespace

DatasetManifest build_dataset(int n, const SceneConfig& cfg,
                              const std::string& out_dir, int threads) {
  namespace fs = std::filesystem;
  if (n < 0) throw std::invalid_argument("sample count must be >= 0");
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "edges");

  DatasetManifest manifest;
  manifest.entries.resize(static_cast<size_t>(n));
  parallel_for(n, threads, [&](int64_t i, int) {
    const int index = static_cast<int>(i);
    const uint64_t sample_seed = mix_seed(cfg.seed, static_cast<uint64_t>(index));
    Rng rng(sample_seed);
    const Scene scene = generate_scene(cfg, rng);
    const std::string image_rel = "images/" + sample_name(index, "ppm");
    const std::string edge_rel = "edges/" + sample_name(index, "pgm");
    write_ppm((fs::path(out_dir) / image_rel).string(), scene.image);
    write_pgm((fs::path(out_dir) / edge_rel).string(), scene_edges(scene));
    manifest.entries[static_cast<size_t>(i)] = {index, sample_seed, image_rel, edge_rel};
  });
  write_manifest(manifest, (fs::path(out_dir) / "manifest.txt").string());
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& e : manifest.entries)
    f << e.index << "\t" << e.seed << "\t" << e.image_path << "\t" << e.edge_path
      << "\n";
  if (!f) throw std::runtime_error("write failed: " + path);
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  DatasetManifest manifest;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    ManifestEntry e;
    size_t pos = 0;
    auto next_field = [&]() {
      const size_t tab = line.find('\t', pos);
      const std::string field = line.substr(pos, tab == std::string::npos
                                                     ? std::string::npos
                                                     : tab - pos);
      pos = tab == std::string::npos ? line.size() : tab + 1;
      return field;
    };
    e.index = std::stoi(next_field());
    e.seed = std::stoull(next_field());
    e.image_path = next_field();
    e.edge_path = next_field();
    if (e.image_path.empty() || e.edge_path.empty())
      throw std::runtime_error("malformed manifest line: " + line);
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

}  // namespace memo
