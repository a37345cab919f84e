#pragma once

#include <cstdint>
#include <vector>

#include "cxs/rng.hpp"
#include "cxs/tensor.hpp"

namespace cxs {

/// Geometry and content knobs for one synthetic dataset. The LR overview has
/// side tile_px, so each tile footprint covers tile_px/grid LR pixels, which
/// must divide evenly.
struct SceneSpec {
  int grid = 10;      // tiles per side G; P = grid^2
  int tile_px = 20;   // HR tile side in pixels
  int channels = 1;
  int concepts = 8;   // vocabulary size C, <= 64
  int objects_min = 1;
  int objects_max = 4;
  double hf_amplitude = 1.0;        // period-2 texture amplitude
  double background_smoothness = 0.5;  // low-frequency field scale

  int tiles() const { return grid * grid; }
  int mosaic_px() const { return grid * tile_px; }
  int lr_px() const { return tile_px; }
  int lr_per_tile() const { return tile_px / grid; }
  void validate() const;  // throws std::invalid_argument
};

struct PlacedObject {
  int tile = 0;
  int concept_id = 0;
};

struct Scene {
  uint64_t scene_id = 0;
  Tensor hr_mosaic;        // [channels, grid*tile_px, grid*tile_px]
  uint64_t labels = 0;     // multi-hot bitmask over concepts
  // Generator-side metadata; not serialized.
  std::vector<PlacedObject> objects;

  bool has_label(int concept_id) const { return (labels >> concept_id) & 1u; }
  std::vector<int> label_list(int concepts) const;
  int label_count(int concepts) const;
};

/// Background field plus 0..4 tile-footprint objects. Each object carries a
/// concept-specific zero-mean period-2 texture (killed exactly by the box
/// downsample) and a weak concept-specific mean shift that survives at LR.
Scene generate_scene(const SceneSpec& spec, RngStream& rng);

/// Per-concept texture pattern (2x2, zero mean, unit RMS) and LR-visible mean
/// shift; fixed independently of any scene stream.
void concept_signature(int concept_id, double pattern[4], double* mean_shift);

Tensor downsample_lr(const Tensor& hr_mosaic, int factor);
std::vector<Tensor> tessellate(const Tensor& hr_mosaic, int grid);
Tensor stitch(const std::vector<Tensor>& tiles, int grid);

/// Mean squared deviation from the mean over a pixel block; the texture
/// energy statistic used by the HR-informativeness checks.
double pixel_variance(const Tensor& image, int channel, int row0, int col0,
                      int rows, int cols);

}  // namespace cxs
