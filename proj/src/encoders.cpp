#include "cxs/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace cxs {

namespace {

std::vector<double> random_matrix(RngStream& rng, int rows, int cols, double std_dev) {
  std::vector<double> w(static_cast<size_t>(rows) * cols);
  for (auto& v : w) v = std_dev * rng.normal();
  return w;
}

}  // namespace

OracleEncoders::OracleEncoders(const SceneSpec& spec, uint64_t seed, int dim)
    : spec_(spec), seed_(seed), dim_(dim) {
  spec.validate();
  if (spec.tile_px % 2 != 0)
    throw std::invalid_argument("oracle encoders: tile_px must be even");
  if (spec.lr_px() % kLrPatch != 0)
    throw std::invalid_argument("oracle encoders: LR side must be divisible by 4");

  const int hp = hr_patch();
  RngStream rng(seed, 0);
  hr_w_ = random_matrix(rng, dim_, hp * hp, 1.0 / std::sqrt(hp * hp));
  hr_b_ = random_matrix(rng, dim_, 1, 0.2);
  lr_w_ = random_matrix(rng, dim_, kLrPatch * kLrPatch, 1.0 / std::sqrt(kLrPatch * kLrPatch));
  lr_b_ = random_matrix(rng, dim_, 1, 0.2);
  proj_ = random_matrix(rng, dim_, dim_, 1.0 / std::sqrt(dim_));

  // Concept embeddings: the shared space is "aligned" by construction — each
  // concept's text vector is the projected visual encoding of a canonical
  // tile carrying only that concept's signature, the stand-in for a
  // pretrained vision-language pairing. Pairwise similarity is kept below 0.5
  // by deterministic seeded perturbation when two signatures land too close.
  concept_table_.resize(spec.concepts);
  auto pool_tile = [&](const Tensor& tile) {
    Tensor toks = encode_tile(tile);
    std::vector<double> pooled(dim_, 0.0);
    int n_tok = toks.size() / dim_;
    for (int t = 0; t < n_tok; ++t)
      for (int j = 0; j < dim_; ++j) pooled[j] += toks.data()[t * dim_ + j] / n_tok;
    return pooled;
  };
  std::vector<double> blank = pool_tile(Tensor::zeros({1, spec.tile_px, spec.tile_px}));
  for (int c = 0; c < spec.concepts; ++c) {
    double pat[4];
    double shift;
    concept_signature(c, pat, &shift);
    Tensor tile = Tensor::zeros({1, spec.tile_px, spec.tile_px});
    for (int r = 0; r < spec.tile_px; ++r)
      for (int col = 0; col < spec.tile_px; ++col)
        tile.data()[r * spec.tile_px + col] =
            shift + spec.hf_amplitude * pat[(r % 2) * 2 + (col % 2)];
    // Embed the delta the concept adds over a blank tile, not the absolute
    // encoding: the bias response shared by all tiles would otherwise give
    // every pair of concepts a large common component.
    std::vector<double> pooled = pool_tile(tile);
    for (int j = 0; j < dim_; ++j) pooled[j] -= blank[j];
    std::vector<double> v = project_visual(pooled);
    for (int attempt = 0;; ++attempt) {
      double n2 = 0.0;
      for (double x : v) n2 += x * x;
      double inv = 1.0 / std::sqrt(std::max(n2, 1e-30));
      for (auto& x : v) x *= inv;
      bool ok = true;
      for (int o = 0; o < c && ok; ++o) {
        double dot = 0.0;
        for (int j = 0; j < dim_; ++j) dot += v[j] * concept_table_[o][j];
        if (dot >= 0.5) ok = false;
      }
      if (ok) {
        concept_table_[c] = std::move(v);
        break;
      }
      if (attempt > 10000)
        throw std::runtime_error("oracle encoders: concept table perturbation stalled");
      for (auto& x : v) x += 0.2 * rng.normal();
    }
  }
}

Tensor OracleEncoders::encode_patches(const Tensor& image, int patch,
                                      const std::vector<double>& w,
                                      const std::vector<double>& b) const {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 1 || s[1] % patch != 0 || s[2] % patch != 0)
    throw ShapeError("encode: image " + shape_str(s) + " incompatible with patch " +
                     std::to_string(patch));
  int th = s[1] / patch, tw = s[2] / patch;
  Tensor out = Tensor::zeros({th, tw, dim_});
  const double* px = image.data();
  int wpx = s[2];
  std::vector<double> pvec(static_cast<size_t>(patch) * patch);
  for (int i = 0; i < th; ++i)
    for (int j = 0; j < tw; ++j) {
      for (int r = 0; r < patch; ++r)
        for (int c = 0; c < patch; ++c)
          pvec[r * patch + c] = px[(i * patch + r) * wpx + j * patch + c];
      double* tok = out.data() + (i * tw + j) * dim_;
      for (int k = 0; k < dim_; ++k) {
        double acc = b[k];
        const double* wrow = w.data() + static_cast<size_t>(k) * patch * patch;
        for (size_t p = 0; p < pvec.size(); ++p) acc += wrow[p] * pvec[p];
        tok[k] = std::tanh(acc);
      }
    }
  return out;
}

Tensor OracleEncoders::encode_target(const Tensor& hr_mosaic) const {
  const Shape& s = hr_mosaic.shape();
  if (s.size() != 3 || s[1] != spec_.mosaic_px() || s[2] != spec_.mosaic_px())
    throw ShapeError("encode_target: mosaic " + shape_str(s) + " does not match spec");
  return encode_patches(hr_mosaic, hr_patch(), hr_w_, hr_b_);
}

Tensor OracleEncoders::encode_tile(const Tensor& tile) const {
  const Shape& s = tile.shape();
  if (s.size() != 3 || s[1] != spec_.tile_px || s[2] != spec_.tile_px)
    throw ShapeError("encode_tile: tile " + shape_str(s) + " does not match spec");
  return encode_patches(tile, hr_patch(), hr_w_, hr_b_);
}

Tensor OracleEncoders::encode_lr(const Tensor& lr_image) const {
  const Shape& s = lr_image.shape();
  if (s.size() != 3 || s[1] != spec_.lr_px() || s[2] != spec_.lr_px())
    throw ShapeError("encode_lr: image " + shape_str(s) + " does not match spec");
  return encode_patches(lr_image, kLrPatch, lr_w_, lr_b_);
}

std::vector<double> OracleEncoders::project_visual(const std::vector<double>& pooled) const {
  if (static_cast<int>(pooled.size()) != dim_)
    throw ShapeError("project_visual: expected length " + std::to_string(dim_));
  std::vector<double> out(dim_, 0.0);
  for (int k = 0; k < dim_; ++k) {
    const double* row = proj_.data() + static_cast<size_t>(k) * dim_;
    double acc = 0.0;
    for (int j = 0; j < dim_; ++j) acc += pooled[j] * row[j];
    out[k] = acc;
  }
  return out;
}

const std::vector<double>& OracleEncoders::concept_embedding(int concept_id) const {
  if (concept_id < 0 || concept_id >= spec_.concepts)
    throw std::out_of_range("unknown concept " + std::to_string(concept_id));
  return concept_table_[concept_id];
}

double OracleEncoders::shared_space_similarity(const Tensor& visual_tokens,
                                               int concept_id) const {
  const std::vector<double>& text = concept_embedding(concept_id);
  int d = visual_tokens.shape().back();
  if (d != dim_)
    throw ShapeError("shared_space_similarity: token dim " + std::to_string(d));
  int tokens = visual_tokens.size() / d;
  std::vector<double> pooled(d, 0.0);
  for (int t = 0; t < tokens; ++t)
    for (int j = 0; j < d; ++j) pooled[j] += visual_tokens.data()[t * d + j];
  for (auto& v : pooled) v /= tokens;
  std::vector<double> z = project_visual(pooled);
  double n2 = 0.0;
  for (double v : z) n2 += v * v;
  double nrm = std::sqrt(n2);
  if (nrm < 1e-30) return 0.0;
  double dot = 0.0;
  for (int j = 0; j < dim_; ++j) dot += z[j] / nrm * text[j];
  return dot;
}

std::vector<double> OracleEncoders::weight_snapshot() const {
  std::vector<double> snap;
  auto app = [&](const std::vector<double>& v) { snap.insert(snap.end(), v.begin(), v.end()); };
  app(hr_w_);
  app(hr_b_);
  app(lr_w_);
  app(lr_b_);
  app(proj_);
  for (const auto& c : concept_table_) app(c);
  return snap;
}

}  // namespace cxs
