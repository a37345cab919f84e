#include "cxs/scene.hpp"

#include <cmath>
#include <stdexcept>

namespace cxs {

void SceneSpec::validate() const {
  if (grid < 2) throw std::invalid_argument("scene spec: grid must be >= 2");
  if (channels != 1) throw std::invalid_argument("scene spec: channels must be 1");
  if (concepts < 1 || concepts > 64)
    throw std::invalid_argument("scene spec: concepts must be in [1,64]");
  if (tile_px < grid || tile_px % grid != 0)
    throw std::invalid_argument("scene spec: grid must divide tile_px");
  if (objects_min < 0 || objects_max < objects_min)
    throw std::invalid_argument("scene spec: bad objects_per_scene range");
  if (objects_max > tiles())
    throw std::invalid_argument("scene spec: more objects than tiles");
  if (hf_amplitude < 0) throw std::invalid_argument("scene spec: negative hf_amplitude");
}

std::vector<int> Scene::label_list(int concepts) const {
  std::vector<int> out;
  for (int c = 0; c < concepts; ++c)
    if (has_label(c)) out.push_back(c);
  return out;
}

int Scene::label_count(int concepts) const {
  return static_cast<int>(label_list(concepts).size());
}

void concept_signature(int concept_id, double pattern[4], double* mean_shift) {
  RngStream rng(0x5C3A9E1DULL, static_cast<uint64_t>(concept_id));
  double g[4];
  double mean = 0.0;
  for (int i = 0; i < 4; ++i) {
    g[i] = rng.normal();
    mean += g[i];
  }
  mean /= 4.0;
  double rms = 0.0;
  for (int i = 0; i < 4; ++i) {
    g[i] -= mean;
    rms += g[i] * g[i];
  }
  rms = std::sqrt(rms / 4.0);
  if (rms < 1e-9) {  // practically unreachable; keep the pattern well defined
    g[0] = 1.0; g[1] = -1.0; g[2] = -1.0; g[3] = 1.0;
    rms = 1.0;
  }
  for (int i = 0; i < 4; ++i) pattern[i] = g[i] / rms;
  if (mean_shift) {
    // Magnitude bounded away from zero so every concept stays visible in the
    // box-averaged LR overview; sign random.
    double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
    *mean_shift = sign * (0.3 + 0.4 * rng.uniform01());
  }
}

Scene generate_scene(const SceneSpec& spec, RngStream& rng) {
  spec.validate();
  const int side = spec.mosaic_px();
  Scene scene;
  scene.hr_mosaic = Tensor::zeros({spec.channels, side, side});
  double* px = scene.hr_mosaic.data();

  // Smooth background: bilinear interpolation of a coarse knot grid.
  const int knots = 5;
  std::vector<double> knot(static_cast<size_t>(knots) * knots);
  for (auto& v : knot) v = spec.background_smoothness * rng.normal();
  for (int i = 0; i < side; ++i) {
    double fy = static_cast<double>(i) / (side - 1) * (knots - 1);
    int y0 = std::min(static_cast<int>(fy), knots - 2);
    double ty = fy - y0;
    for (int j = 0; j < side; ++j) {
      double fx = static_cast<double>(j) / (side - 1) * (knots - 1);
      int x0 = std::min(static_cast<int>(fx), knots - 2);
      double tx = fx - x0;
      double v00 = knot[y0 * knots + x0], v01 = knot[y0 * knots + x0 + 1];
      double v10 = knot[(y0 + 1) * knots + x0], v11 = knot[(y0 + 1) * knots + x0 + 1];
      px[i * side + j] = (1 - ty) * ((1 - tx) * v00 + tx * v01) +
                         ty * ((1 - tx) * v10 + tx * v11);
    }
  }

  int n_objects = spec.objects_min;
  if (spec.objects_max > spec.objects_min)
    n_objects += rng.uniform_int(spec.objects_max - spec.objects_min + 1);
  std::vector<int> order = rng.permutation(spec.tiles());
  for (int k = 0; k < n_objects; ++k) {
    int tile = order[k];
    int concept_id = rng.uniform_int(spec.concepts);
    double pat[4];
    double shift;
    concept_signature(concept_id, pat, &shift);
    int r0 = (tile / spec.grid) * spec.tile_px;
    int c0 = (tile % spec.grid) * spec.tile_px;
    for (int r = 0; r < spec.tile_px; ++r)
      for (int c = 0; c < spec.tile_px; ++c)
        px[(r0 + r) * side + (c0 + c)] +=
            shift + spec.hf_amplitude * pat[(r % 2) * 2 + (c % 2)];
    scene.labels |= 1ULL << concept_id;
    scene.objects.push_back({tile, concept_id});
  }
  return scene;
}

Tensor downsample_lr(const Tensor& hr_mosaic, int factor) {
  const Shape& s = hr_mosaic.shape();
  if (s.size() != 3 || factor <= 0 || s[1] % factor != 0 || s[2] % factor != 0)
    throw ShapeError("downsample_lr: sides of " + shape_str(s) +
                     " not divisible by " + std::to_string(factor));
  int ch = s[0], h = s[1], w = s[2];
  int oh = h / factor, ow = w / factor;
  Tensor out = Tensor::zeros({ch, oh, ow});
  const double* in = hr_mosaic.data();
  double* o = out.data();
  double inv = 1.0 / (factor * factor);
  for (int c = 0; c < ch; ++c)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double sum = 0.0;
        for (int u = 0; u < factor; ++u)
          for (int v = 0; v < factor; ++v)
            sum += in[(c * h + i * factor + u) * w + j * factor + v];
        o[(c * oh + i) * ow + j] = sum * inv;
      }
  return out;
}

std::vector<Tensor> tessellate(const Tensor& hr_mosaic, int grid) {
  const Shape& s = hr_mosaic.shape();
  if (s.size() != 3 || s[1] % grid != 0 || s[2] % grid != 0)
    throw ShapeError("tessellate: sides of " + shape_str(s) +
                     " not divisible by grid " + std::to_string(grid));
  int ch = s[0], h = s[1], w = s[2];
  int th = h / grid, tw = w / grid;
  std::vector<Tensor> tiles;
  tiles.reserve(static_cast<size_t>(grid) * grid);
  for (int ti = 0; ti < grid; ++ti)
    for (int tj = 0; tj < grid; ++tj) {
      Tensor t = Tensor::zeros({ch, th, tw});
      for (int c = 0; c < ch; ++c)
        for (int r = 0; r < th; ++r)
          for (int cc = 0; cc < tw; ++cc)
            t.data()[(c * th + r) * tw + cc] =
                hr_mosaic.data()[(c * h + ti * th + r) * w + tj * tw + cc];
      tiles.push_back(std::move(t));
    }
  return tiles;
}

Tensor stitch(const std::vector<Tensor>& tiles, int grid) {
  if (tiles.size() != static_cast<size_t>(grid) * grid)
    throw ShapeError("stitch: expected " + std::to_string(grid * grid) + " tiles, got " +
                     std::to_string(tiles.size()));
  const Shape& ts = tiles[0].shape();
  int ch = ts[0], th = ts[1], tw = ts[2];
  int h = grid * th, w = grid * tw;
  Tensor out = Tensor::zeros({ch, h, w});
  for (int ti = 0; ti < grid; ++ti)
    for (int tj = 0; tj < grid; ++tj) {
      const Tensor& t = tiles[ti * grid + tj];
      if (t.shape() != ts) throw ShapeError("stitch: inconsistent tile shapes");
      for (int c = 0; c < ch; ++c)
        for (int r = 0; r < th; ++r)
          for (int cc = 0; cc < tw; ++cc)
            out.data()[(c * h + ti * th + r) * w + tj * tw + cc] =
                t.data()[(c * th + r) * tw + cc];
    }
  return out;
}

double pixel_variance(const Tensor& image, int channel, int row0, int col0,
                      int rows, int cols) {
  const Shape& s = image.shape();
  int h = s[1], w = s[2];
  double mean = 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      mean += image.data()[(channel * h + row0 + r) * w + col0 + c];
  mean /= rows * cols;
  double var = 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double d = image.data()[(channel * h + row0 + r) * w + col0 + c] - mean;
      var += d * d;
    }
  return var / (rows * cols);
}

}  // namespace cxs
