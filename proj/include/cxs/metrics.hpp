#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cxs/encoders.hpp"
#include "cxs/predictor.hpp"
#include "cxs/sampler.hpp"
#include "cxs/tensor.hpp"

namespace cxs {

/// Abstract observation cost accounting: total area A, per-resolution unit
/// costs c(r), and the reference resolution r_max defining the full-cost
/// denominator A * c(r_max).
struct CostModel {
  double area_total = 0.0;
  std::map<std::string, double> cost_per_unit_area;
  std::string r_max;

  void validate() const;
};

struct CostRequest {
  double area = 0.0;
  std::string resolution;
};

/// Sum a_i * c(r_i) normalized by the full high-resolution cost.
double mocr(const std::vector<CostRequest>& requests, const CostModel& model);

struct ObrResult {
  std::vector<double> per_scene;
  double mean = 0.0;
};

ObrResult obr(const std::vector<ObservationSet>& sets, int tiles_total);

/// AP@K with denominator min(|relevant|, K); 0 when relevant is empty.
/// Throws on duplicate ids in the ranking.
double average_precision_at_k(const std::vector<int>& ranking,
                              const std::set<int>& relevant, int k);

/// Concept-as-query retrieval: for each concept with at least one labeled
/// scene, rank scenes by cosine between their shared-space vector and the
/// concept embedding (ties toward lower scene index) and take AP@k; mean over
/// those concepts.
double retrieval_map(const std::vector<std::vector<double>>& shared_vecs,
                     const std::vector<uint64_t>& labels, const OracleEncoders& enc,
                     int k);

struct RecognitionMetrics {
  double top1_acc = 0.0;       // over single-label scenes only
  int single_label_count = 0;
  double multilabel_map = 0.0; // mean AP@C per scene
};

RecognitionMetrics recognition_metrics(
    const std::vector<std::vector<std::pair<int, double>>>& ranked,
    const std::vector<uint64_t>& labels, int concepts);

struct RankedTile {
  int index = 0;  // gallery index
  double score = 0.0;
};

/// Appendix-style diagnostic: pool the completed 2x2 token block of an
/// unobserved tile and cosine-rank a gallery of pooled tile features.
/// Throws std::invalid_argument when the tile was observed.
std::vector<RankedTile> tile_completion_retrieval(
    const Tensor& h_tilde, int tile, int grid, const ObservationSet& observation,
    const std::vector<std::vector<double>>& gallery_pooled, int top_n);

/// Pooled d-vector of one tile's 2x2 token block inside a [2G, 2G, d] grid.
std::vector<double> pool_tile_block(const Tensor& token_grid, int tile, int grid);

struct SweepRow {
  double threshold = 0.0;
  double mean_obr = 0.0;
  double map100 = 0.0;
  double map20 = 0.0;
  double top1 = 0.0;
  double mlmap = 0.0;
  long long wall_ms = 0;
};

struct AblationRow {
  std::string sampler;
  std::string predictor;
  std::string supervision;
  uint64_t seed = 0;
  double map100 = 0.0;
  double map20 = 0.0;
  double mean_obr = 0.0;
  long long wall_ms = 0;
};

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// One full evaluation summary at a fixed operating point.
struct BudgetReport {
  double realized_obr_mean = 0.0;
  std::vector<double> realized_obr_per_scene;
  double mocr = 0.0;
  double map_at_100 = 0.0;
  double map_at_20 = 0.0;
  double top1_acc = 0.0;
  double multilabel_map = 0.0;
  long long wall_ms_total = 0;
  uint64_t config_digest = 0;
};

/// Default threshold grid for budget sweeps.
const std::vector<double>& default_sweep_thresholds();

}  // namespace cxs
