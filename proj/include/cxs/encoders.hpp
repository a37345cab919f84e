#pragma once

#include <cstdint>
#include <vector>

#include "cxs/scene.hpp"
#include "cxs/tensor.hpp"

namespace cxs {

/// Frozen seeded random feature extractors standing in for pretrained visual
/// and text backbones. All weights derive from a single seed and are never
/// updated; the tile encoder shares the target encoder's patch weights, so a
/// fully observed completion has an exact target.
class OracleEncoders {
 public:
  static constexpr int kLrPatch = 4;  // LR patch side

  /// dim: visual token dimension d (= shared-space dimension d_t here). The
  /// HR patch side is tile_px/2, so every tile yields 2x2 tokens; the LR
  /// overview must be divisible by the fixed 4-pixel LR patch.
  OracleEncoders(const SceneSpec& spec, uint64_t seed = 7, int dim = 32);

  const SceneSpec& spec() const { return spec_; }
  uint64_t seed() const { return seed_; }
  int dim() const { return dim_; }
  int hr_patch() const { return spec_.tile_px / 2; }
  int lr_tokens_side() const { return spec_.lr_px() / kLrPatch; }
  int token_grid_side() const { return 2 * spec_.grid; }

  /// Dense full-observation target H*: [2G, 2G, d].
  Tensor encode_target(const Tensor& hr_mosaic) const;
  /// One tile -> [2, 2, d]; equals the matching block of encode_target.
  Tensor encode_tile(const Tensor& tile) const;
  /// LR overview -> [lr_px/4, lr_px/4, d] (5x5 at defaults).
  Tensor encode_lr(const Tensor& lr_image) const;

  /// Mean-pool tokens, project into the shared space, L2-normalize, cosine
  /// against the concept embedding. Throws std::out_of_range on bad ids.
  double shared_space_similarity(const Tensor& visual_tokens, int concept_id) const;

  /// Project a pooled d-vector into the shared space (no normalization).
  std::vector<double> project_visual(const std::vector<double>& pooled) const;

  const std::vector<double>& concept_embedding(int concept_id) const;
  int concept_count() const { return spec_.concepts; }

  /// Bit-exact snapshot of every weight, for frozen-ness checks.
  std::vector<double> weight_snapshot() const;

 private:
  Tensor encode_patches(const Tensor& image, int patch, const std::vector<double>& w,
                        const std::vector<double>& b) const;

  SceneSpec spec_;
  uint64_t seed_;
  int dim_;
  std::vector<double> hr_w_, hr_b_;   // shared by target and tile encoders
  std::vector<double> lr_w_, lr_b_;
  std::vector<double> proj_;          // d x d_t visual projection
  std::vector<std::vector<double>> concept_table_;
};

}  // namespace cxs
