#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memo/maps.hpp"
#include "memo/rng.hpp"
#include "memo/tensor.hpp"

namespace memo {

struct SceneConfig {
  int width = 64, height = 64;
  int min_shapes = 3, max_shapes = 7;
  float weight_ellipse = 1.f, weight_polygon = 1.f, weight_rectangle = 1.f;
  float min_radius = 5.f, max_radius = 20.f;
  bool gradient_background = true;
  float noise_sigma = 0.02f;
  float blur_sigma = 0.8f;
  float min_color_separation = 0.25f;
  bool invert_colors = false;  // photographic-negative variant domain
  uint64_t seed = 0;
};

struct InstanceMask {
  BinaryMap mask;  // visible (occlusion-resolved) region
  int z_order = 0;
};

struct Scene {
  Tensor image;  // [3,H,W] in [0,1]
  std::vector<InstanceMask> masks;
};

// Scenes of overlapping colored shapes drawn back-to-front. Visible masks
// are pairwise disjoint; fully occluded shapes contribute none. Blur and
// noise touch only the image, never the masks, and placements whose
// contours would contain a solid 2x2 edge block are resampled so ground
// truth stays one pixel wide.
Scene generate_scene(const SceneConfig& cfg, Rng& rng);

// mask AND NOT erode(mask, 3x3 full structuring element); out-of-image
// counts as background, so border-touching masks produce border contours.
BinaryMap mask_to_contour(const BinaryMap& mask);

// Pixelwise OR.
BinaryMap aggregate_edges(const std::vector<BinaryMap>& contours);

// Scene ground truth: union of visible-mask contours with occlusion borders
// de-duplicated, so the boundary between two shapes is the front shape's
// single-pixel ring rather than a two-pixel band.
BinaryMap scene_edges(const Scene& scene);

bool has_solid_2x2_block(const BinaryMap& m);

struct ManifestEntry {
  int index = 0;
  uint64_t seed = 0;
  std::string image_path, edge_path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
};

// Writes images/{index:06}.ppm, edges/{index:06}.pgm, and manifest.txt
// under out_dir. Per-sample RNG streams derive from (cfg.seed, index), so
// regeneration is byte-identical.
DatasetManifest build_dataset(int n, const SceneConfig& cfg,
                              const std::string& out_dir, int threads = 1);

DatasetManifest read_manifest(const std::string& path);
void write_manifest(const DatasetManifest& manifest, const std::string& path);

}  // namespace memo
