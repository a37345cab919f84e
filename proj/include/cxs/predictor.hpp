#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cxs/rng.hpp"
#include "cxs/sampler.hpp"
#include "cxs/tensor.hpp"

namespace cxs {

enum class PredictorVariant { kFull, kNoPredictor, kDirectLrFill, kNoLrContext };

PredictorVariant predictor_variant_from_string(const std::string& s);
std::string to_string(PredictorVariant variant);

/// One pre-norm cross-attention block: single-head attention with HR latent
/// tokens as queries and LR tokens as keys/values, then a tanh feed-forward,
/// both on residual paths.
struct CrossAttentionBlock {
  Tensor wq, wk, wv, wo;      // [d, d]
  Tensor ff_w1, ff_b1;        // [d, 2d], [2d]
  Tensor ff_w2, ff_b2;        // [2d, d], [d]
  Tensor ln1_g, ln1_b;        // pre-attention normalization
  Tensor ln2_g, ln2_b;        // pre-feedforward normalization
};

struct PredictorConfig {
  int grid = 10;
  int dim = 32;
  int blocks = 4;      // paper-scale depth is 12; 4 is the desk-scale default
  int lr_tokens = 25;  // informational; forward accepts any [L, d] context
};

struct PredictorParams {
  PredictorConfig config;
  Tensor mask_embed;   // [d]
  Tensor e_tile;       // [G, G, d]
  Tensor e_hr;         // [2G, 2G, d]
  Tensor null_token;   // [1, d], keys/values for the no-LR-context variant
  Tensor e_lr;         // [L, d], positional embedding added to the LR context
  std::vector<CrossAttentionBlock> blocks;

  PredictorParams() = default;
  PredictorParams(const PredictorConfig& config, RngStream& rng);
  std::vector<Tensor> all();
  std::vector<std::pair<std::string, Tensor>> named();
  int parameter_count() const;
};

struct ObservedTile {
  int tile = 0;
  Tensor tokens;  // [2, 2, d]
};

struct CompletedRepresentation {
  Tensor h_tilde;              // [2G, 2G, d]
  std::vector<double> pooled;  // token mean, length d
  ObservationSet provenance;
};

/// Observed tiles scattered into the 2Gx2Gxd grid, mask embedding elsewhere,
/// then E^tile (broadcast per tile) and E^hr (positionwise) added.
Tensor rasterize(const std::vector<ObservedTile>& observed, const PredictorParams& params);

CompletedRepresentation predict(const std::vector<ObservedTile>& observed,
                                const Tensor& lr_tokens, const PredictorParams& params);

CompletedRepresentation predict_variant(const std::vector<ObservedTile>& observed,
                                        const Tensor& lr_tokens,
                                        const PredictorParams& params,
                                        PredictorVariant variant);

/// Exponential running mean of target tokens; never recorded on a tape.
struct RunningMean {
  std::vector<double> mu;
  double momentum = 0.99;

  explicit RunningMean(int dim, double momentum = 0.99)
      : mu(dim, 0.0), momentum(momentum) {}
  void update(const Tensor& target_tokens);
};

/// Centered cosine regression: 1 - mean token cosine between (h_tilde - mu)
/// and (h_star - mu); tokens with a degenerate centered norm contribute
/// similarity 0. h_star is consumed as constant data (stop-gradient).
Tensor loss_rep(const Tensor& h_tilde, const Tensor& h_star,
                const std::vector<double>& mu);

/// Variance statistic used by the anti-collapse trace: mean over channels of
/// the per-channel variance across tokens.
double token_variance(const Tensor& tokens);

struct Stage1Result {
  PredictorParams params;
  std::vector<double> epoch_loss;       // mean loss per epoch
  std::vector<double> epoch_var_ratio;  // var(h_tilde)/var(h_star) per epoch
};

/// Per-scene cached features for training and evaluation.
struct EncodedScene {
  uint64_t scene_id = 0;
  uint64_t labels = 0;
  Tensor target_tokens;  // H*, [2G, 2G, d]
  Tensor lr_tokens;      // [L, L, d]
  Tensor lr_image;       // raw LR overview for the sampler
  std::vector<PlacedObject> objects;

  /// Tokens of tile p, sliced out of the cached target grid (the tile and
  /// target encoders share weights).
  Tensor tile_tokens(int tile, int grid) const;
};

std::vector<ObservedTile> gather_observed(const EncodedScene& scene, int grid,
                                          const std::vector<int>& selected);

/// Stage I: random budgeted masks (per-scene Bernoulli rate drawn uniformly),
/// SGD on the centered cosine loss against the frozen target tokens.
Stage1Result train_stage1(const std::vector<EncodedScene>& scenes,
                          PredictorParams params, int epochs, double lr,
                          RngStream& rng,
                          PredictorVariant variant = PredictorVariant::kFull,
                          RunningMean* mean_state = nullptr);

}  // namespace cxs
