#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cxs/alignment.hpp"
#include "cxs/encoders.hpp"
#include "cxs/metrics.hpp"
#include "cxs/predictor.hpp"
#include "cxs/sampler.hpp"
#include "cxs/scene.hpp"

namespace cxs {

struct MissingFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Every tunable of the pipeline; resolvable entirely from defaults.
struct RunConfig {
  int grid = 10;
  int tile_px = 20;
  int channels = 1;
  int concepts = 8;
  int objects_min = 1;
  int objects_max = 4;
  double hf_amplitude = 1.0;
  double background_smoothness = 0.5;

  int dim = 32;
  int blocks = 4;
  uint64_t encoder_seed = 7;

  double lambda = 1.0;
  std::string supervision = "multiplicative";

  int sampler_epochs = 10;
  double sampler_lr = 0.0005;
  int stage1_epochs = 40;
  double stage1_lr = 0.02;
  double momentum = 0.99;
  int stage2_epochs = 3000;
  double stage2_lr = 0.5;
  int stage2_batch = 16;

  uint64_t seed = 7;
  double tau = 0.55;
  double target_obr = 0.15;
  std::string predictor_variant = "full";

  int train_scenes = 512;
  int test_scenes = 128;
  uint64_t test_id_offset = 1u << 20;

  int workers = 1;
  bool fixed_timing = false;  // report wall_ms as 0 for byte-stable CSVs
  double lr_unit_cost = 0.01; // c(LR) relative to c(HR)=1 in the cost report

  SceneSpec scene_spec() const;
  void validate() const;

  /// Ordered key=value view; the manifest serialization.
  std::vector<std::pair<std::string, std::string>> items() const;
  void set(const std::string& key, const std::string& value);  // ConfigError on unknown key
};

/// Plain-text `key = value` config with '#' comments. Unknown keys and
/// malformed lines raise ConfigError; a missing file raises MissingFileError.
RunConfig load_config(const std::string& path, RunConfig base = {});

uint64_t fnv1a64(const void* data, size_t len);
uint64_t file_digest(const std::string& path);  // MissingFileError if absent

/// Runs fn(0..n-1) across at most `workers` threads in contiguous index
/// blocks; outputs written by index stay deterministic for any worker count.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

/// Writes `<out_path>.manifest.json` capturing the config, seed, digests of
/// the named inputs and outputs, and wall time.
void write_manifest(const std::string& out_path, const RunConfig& config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, long long wall_ms);

std::vector<Scene> generate_scenes(const SceneSpec& spec, int count, uint64_t seed,
                                   uint64_t id_offset);
std::vector<EncodedScene> encode_scenes(const std::vector<Scene>& scenes,
                                        const OracleEncoders& enc, int workers);

struct TrainedPipeline {
  RunConfig config;
  SamplerParams sampler;
  double threshold = 0.55;     // calibrated acquisition cut
  PredictorParams predictor;
  AlignHead head;
};

/// Stage-wise training on pre-encoded scenes: supervision -> sampler ->
/// threshold calibration -> stage I -> stage II (frozen predictor, cached
/// pooled vectors under the calibrated policy). Passing `pretrained` skips
/// stage I and adopts those predictor weights; stage I does not depend on the
/// supervision mode, so sweeps over modes can share one trained predictor.
TrainedPipeline train_pipeline(const RunConfig& config, const OracleEncoders& enc,
                               const std::vector<EncodedScene>& train,
                               const PredictorParams* pretrained = nullptr);

/// Per-scene frozen inference: select under `policy`, complete, pool, project.
struct SceneEval {
  ObservationSet observation;
  std::vector<double> pooled;      // predictor space, length d
  std::vector<double> shared_vec;  // head projection, length d_t
};

SceneEval evaluate_scene(const EncodedScene& scene, const TrainedPipeline& pipe,
                         const SelectionPolicy& policy, PredictorVariant variant);

BudgetReport evaluate(const TrainedPipeline& pipe, const OracleEncoders& enc,
                      const std::vector<EncodedScene>& test,
                      const SelectionPolicy& policy, PredictorVariant variant);

std::vector<SweepRow> budget_sweep(const TrainedPipeline& pipe, const OracleEncoders& enc,
                                   const std::vector<EncodedScene>& test,
                                   const std::vector<double>& thresholds);

/// The four matched-budget ablation cells for one trained pipeline/seed:
/// learned+full, random+full (rate matched to the learned OBR within 0.01,
/// else MismatchError), learned+no_predictor, and LR-only (no selection,
/// no_predictor). All cells are evaluated under the single trained head and
/// calibrated budget (matched evaluation settings). Rows carry the
/// supervision mode the sampler was trained on.
std::vector<AblationRow> run_ablation(const TrainedPipeline& pipe,
                                      const OracleEncoders& enc,
                                      const std::vector<EncodedScene>& test,
                                      uint64_t seed);

}  // namespace cxs
