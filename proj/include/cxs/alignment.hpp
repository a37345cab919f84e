#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cxs/encoders.hpp"
#include "cxs/predictor.hpp"
#include "cxs/rng.hpp"
#include "cxs/tensor.hpp"

namespace cxs {

/// Vision-text head trained in stage II: a linear map into the shared space
/// plus the learnable temperature and bias of the pairwise sigmoid loss.
struct AlignHead {
  Tensor projection;  // [d, d_t]
  Tensor log_tau;     // scalar, tau = exp(log_tau), init tau = 10
  Tensor bias;        // scalar, init -10

  AlignHead() = default;
  AlignHead(int dim, int dim_t, RngStream& rng);
  std::vector<Tensor> all();
  std::vector<std::pair<std::string, Tensor>> named();
};

/// Token mean of a [2G, 2G, d] grid as a [1, d] tensor; stays on the tape
/// when the grid does.
Tensor pool_representation(const Tensor& h_tilde);

/// Pooled rows [K, d] -> unit rows [K, d_t] through the head's projection.
Tensor project_to_shared(const Tensor& pooled_rows, const AlignHead& head);

/// Pairwise sigmoid loss: -mean_{i,j} log sigmoid(y_ij (<z_i, f_j>/tau + b)).
/// `match` holds +1/-1 per (image i, text j) pair.
Tensor loss_siglip(const Tensor& z_rows, const Tensor& text_rows,
                   const std::vector<std::vector<int>>& match, const AlignHead& head);

/// Cosine of a shared-space vector against every concept embedding, ranked
/// descending with ties broken toward the lower concept id.
std::vector<std::pair<int, double>> zero_shot_classify(const std::vector<double>& shared_vec,
                                                       const OracleEncoders& enc);

/// Convenience: pooled d-vector -> head projection -> normalize -> rank.
std::vector<std::pair<int, double>> classify_pooled(const std::vector<double>& pooled,
                                                    const AlignHead& head,
                                                    const OracleEncoders& enc);

struct Stage2Result {
  AlignHead head;
  std::vector<double> epoch_loss;
};

/// Stage II with the predictor frozen: pooled vectors are fixed per scene, so
/// the caller passes them precomputed. One ground-truth concept is drawn per
/// scene as its text; multi-label truth enters through the match matrix.
Stage2Result train_stage2(const std::vector<std::vector<double>>& pooled,
                          const std::vector<uint64_t>& labels,
                          const OracleEncoders& enc, AlignHead head, int epochs,
                          double lr, int batch, RngStream& rng);

/// Stage II with the predictor unfrozen: each batch re-runs the predictor on
/// the tape over the fixed per-scene selections and updates both parameter
/// sets.
Stage2Result train_stage2_joint(const std::vector<EncodedScene>& scenes,
                                const std::vector<std::vector<int>>& selections,
                                PredictorParams& predictor, const OracleEncoders& enc,
                                AlignHead head, int epochs, double lr, int batch,
                                RngStream& rng);

}  // namespace cxs
