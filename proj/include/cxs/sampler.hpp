#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cxs/encoders.hpp"
#include "cxs/rng.hpp"
#include "cxs/scene.hpp"
#include "cxs/tensor.hpp"

namespace cxs {

enum class SupervisionMode { kMultiplicative, kAdditive, kStructuralOnly, kSemanticOnly };

SupervisionMode supervision_mode_from_string(const std::string& s);
std::string to_string(SupervisionMode mode);

struct SupervisionMap {
  std::vector<double> s_vis;   // structural saliency, [0,1]
  std::vector<double> s_gain;  // cross-scale semantic gain, >= 0
  std::vector<double> g_star;  // fused, normalized target
  SupervisionMode mode = SupervisionMode::kMultiplicative;
};

/// Per-tile standard deviation over the tile's 2x2xd token block of H*,
/// min-max normalized across tiles (all zeros when every tile is identical).
std::vector<double> structural_saliency(const Tensor& target_tokens, int grid);

/// Eq-style semantic gain: max over ground-truth concepts of
/// max(0, s(tile, c) - lambda * s(lr, c)). Empty labels yield zeros.
std::vector<double> semantic_gain(const std::vector<Tensor>& tiles,
                                  const Tensor& lr_image, uint64_t labels,
                                  const OracleEncoders& enc, double lambda);

SupervisionMap build_supervision(const std::vector<double>& s_vis,
                                 const std::vector<double>& s_gain,
                                 SupervisionMode mode);

/// Builds the full supervision map for one scene.
SupervisionMap make_supervision(const Scene& scene, const OracleEncoders& enc,
                                SupervisionMode mode, double lambda);

/// Lightweight LR-only scorer: 3x3 conv (channels->8) + tanh, then a
/// stride-(tile_px/grid) conv (8->1) to a GxG map, then sigmoid.
struct SamplerParams {
  Tensor conv1_w;  // [8, channels, 3, 3]
  Tensor conv1_b;  // [8]
  Tensor conv2_w;  // [1, 8, s, s], s = lr pixels per tile
  Tensor conv2_b;  // [1]

  SamplerParams() = default;
  SamplerParams(const SceneSpec& spec, RngStream& rng);
  std::vector<Tensor> all();
  int parameter_count() const;
};

/// Scores for all P tiles, row-major, each strictly inside (0,1).
Tensor sampler_forward(const Tensor& lr_image, const SamplerParams& params,
                       const SceneSpec& spec);

struct SamplerTrainResult {
  SamplerParams params;
  std::vector<double> loss_trace;  // per-step MSE
};

/// Plain SGD regression of sampler scores onto g_star. Scene order is a
/// fixed per-epoch shuffle drawn from rng.
SamplerTrainResult train_sampler(const std::vector<Tensor>& lr_images,
                                 const std::vector<std::vector<double>>& g_star,
                                 const SceneSpec& spec, SamplerParams params,
                                 int epochs, double lr, RngStream& rng);

struct SelectionPolicy {
  enum class Kind { kThreshold, kTopB, kRandom, kOracleGstar };
  Kind kind = Kind::kThreshold;
  double tau = 0.55;    // threshold / oracle_gstar
  int budget = 0;       // top_b
  double rate = 0.0;    // random
  RngStream* stream = nullptr;  // random

  static SelectionPolicy threshold(double tau);
  static SelectionPolicy top_b(int budget);
  static SelectionPolicy random(double rate, RngStream& stream);
  static SelectionPolicy oracle_gstar(double tau);
};

struct ObservationSet {
  std::vector<int> selected;  // sorted ascending, unique
  SelectionPolicy policy_snapshot;
  uint64_t scene_id = 0;
};

/// For oracle_gstar pass the scene's g_star as `oracle_scores`.
ObservationSet select(const std::vector<double>& scores, const SelectionPolicy& policy,
                      const std::vector<double>* oracle_scores = nullptr,
                      uint64_t scene_id = 0);

/// Smallest candidate tau (observed score values plus 0 and 1) whose mean
/// realized OBR over the calibration scenes is <= target_obr.
double calibrate_threshold(const std::vector<std::vector<double>>& score_sets,
                           double target_obr);

}  // namespace cxs
