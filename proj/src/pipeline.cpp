#include "cxs/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace cxs {

SceneSpec RunConfig::scene_spec() const {
  SceneSpec spec;
  spec.grid = grid;
  spec.tile_px = tile_px;
  spec.channels = channels;
  spec.concepts = concepts;
  spec.objects_min = objects_min;
  spec.objects_max = objects_max;
  spec.hf_amplitude = hf_amplitude;
  spec.background_smoothness = background_smoothness;
  return spec;
}

void RunConfig::validate() const {
  try {
    scene_spec().validate();
    supervision_mode_from_string(supervision);
    predictor_variant_from_string(predictor_variant);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (dim < 1 || blocks < 1) throw ConfigError("config: dim and blocks must be >= 1");
  if (tau < 0.0 || tau > 1.0) throw ConfigError("config: tau must be in [0,1]");
  if (target_obr < 0.0 || target_obr > 1.0)
    throw ConfigError("config: target_obr must be in [0,1]");
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
  if (train_scenes < 1 || test_scenes < 1)
    throw ConfigError("config: scene counts must be >= 1");
  if (stage2_batch < 1) throw ConfigError("config: stage2_batch must be >= 1");
}

namespace {

template <typename T>
std::string to_cfg_string(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
  } else {
    return std::to_string(v);
  }
}

template <typename T>
void from_cfg_string(const std::string& key, const std::string& s, T& out) {
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      out = s;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (s == "true" || s == "1") out = true;
      else if (s == "false" || s == "0") out = false;
      else throw std::invalid_argument("not a bool");
    } else if constexpr (std::is_same_v<T, double>) {
      size_t pos = 0;
      out = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
    } else if constexpr (std::is_same_v<T, uint64_t>) {
      size_t pos = 0;
      out = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
    } else {
      size_t pos = 0;
      out = static_cast<T>(std::stoll(s, &pos));
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
    }
  } catch (const std::exception&) {
    throw ConfigError("config: bad value '" + s + "' for key '" + key + "'");
  }
}

// Single listing of every config field, shared by items() and set().
template <typename Fn>
void for_each_field(RunConfig& c, Fn&& fn) {
  fn("grid", c.grid);
  fn("tile_px", c.tile_px);
  fn("channels", c.channels);
  fn("concepts", c.concepts);
  fn("objects_min", c.objects_min);
  fn("objects_max", c.objects_max);
  fn("hf_amplitude", c.hf_amplitude);
  fn("background_smoothness", c.background_smoothness);
  fn("dim", c.dim);
  fn("blocks", c.blocks);
  fn("encoder_seed", c.encoder_seed);
  fn("lambda", c.lambda);
  fn("supervision", c.supervision);
  fn("sampler_epochs", c.sampler_epochs);
  fn("sampler_lr", c.sampler_lr);
  fn("stage1_epochs", c.stage1_epochs);
  fn("stage1_lr", c.stage1_lr);
  fn("momentum", c.momentum);
  fn("stage2_epochs", c.stage2_epochs);
  fn("stage2_lr", c.stage2_lr);
  fn("stage2_batch", c.stage2_batch);
  fn("seed", c.seed);
  fn("tau", c.tau);
  fn("target_obr", c.target_obr);
  fn("predictor_variant", c.predictor_variant);
  fn("train_scenes", c.train_scenes);
  fn("test_scenes", c.test_scenes);
  fn("test_id_offset", c.test_id_offset);
  fn("workers", c.workers);
  fn("fixed_timing", c.fixed_timing);
  fn("lr_unit_cost", c.lr_unit_cost);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  std::vector<std::pair<std::string, std::string>> out;
  for_each_field(const_cast<RunConfig&>(*this), [&](const char* key, auto& field) {
    out.emplace_back(key, to_cfg_string(field));
  });
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  bool found = false;
  for_each_field(*this, [&](const char* k, auto& field) {
    if (key == k) {
      from_cfg_string(key, value, field);
      found = true;
    }
  });
  if (!found) throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("missing config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
    line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
    line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config " + path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
    value.erase(value.begin(), std::find_if(value.begin(), value.end(), notspace));
    base.set(key, value);
  }
  return base;
}

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("missing file " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size());
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < workers; ++w) {
    int lo = static_cast<int>(static_cast<long long>(n) * w / workers);
    int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
    pool.emplace_back([&, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void write_manifest(const std::string& out_path, const RunConfig& config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, long long wall_ms) {
  nlohmann::json m;
  for (const auto& [k, v] : config.items()) m["config"][k] = v;
  m["seed"] = config.seed;
  for (const auto& p : inputs) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(file_digest(p)));
    m["inputs"][p] = buf;
  }
  for (const auto& p : outputs) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(file_digest(p)));
    m["outputs"][p] = buf;
  }
  m["wall_ms"] = config.fixed_timing ? 0 : wall_ms;
  std::ofstream out(out_path + ".manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_path + ".manifest.json");
  out << m.dump(2) << "\n";
}

std::vector<Scene> generate_scenes(const SceneSpec& spec, int count, uint64_t seed,
                                   uint64_t id_offset) {
  spec.validate();
  std::vector<Scene> out(count);
  for (int i = 0; i < count; ++i) {
    RngStream rng(seed, id_offset + static_cast<uint64_t>(i));
    out[i] = generate_scene(spec, rng);
    out[i].scene_id = id_offset + static_cast<uint64_t>(i);
  }
  return out;
}

std::vector<EncodedScene> encode_scenes(const std::vector<Scene>& scenes,
                                        const OracleEncoders& enc, int workers) {
  std::vector<EncodedScene> out(scenes.size());
  parallel_for(static_cast<int>(scenes.size()), workers, [&](int i) {
    const Scene& s = scenes[i];
    EncodedScene e;
    e.scene_id = s.scene_id;
    e.labels = s.labels;
    e.lr_image = downsample_lr(s.hr_mosaic, enc.spec().grid);
    e.target_tokens = enc.encode_target(s.hr_mosaic);
    e.lr_tokens = enc.encode_lr(e.lr_image);
    e.objects = s.objects;
    out[i] = std::move(e);
  });
  return out;
}

namespace {

long long now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<double> supervision_for(const EncodedScene& scene, const OracleEncoders& enc,
                                    SupervisionMode mode, double lambda, int grid) {
  std::vector<double> s_vis = structural_saliency(scene.target_tokens, grid);
  std::vector<double> s_gain(grid * grid, 0.0);
  // Semantic gain in token space: tile similarity from the cached target
  // block, LR similarity from the LR tokens.
  for (int c = 0; c < enc.concept_count(); ++c) {
    if (!(scene.labels >> c & 1)) continue;
    double s_lr = enc.shared_space_similarity(scene.lr_tokens, c);
    for (int p = 0; p < grid * grid; ++p) {
      double s_h = enc.shared_space_similarity(scene.tile_tokens(p, grid), c);
      s_gain[p] = std::max(s_gain[p], std::max(0.0, s_h - lambda * s_lr));
    }
  }
  return build_supervision(s_vis, s_gain, mode).g_star;
}

// Stage II on frozen parts: cache the pooled vector every training scene gets
// under (policy, variant), then fit an alignment head on them.
AlignHead fit_head(const TrainedPipeline& pipe, const OracleEncoders& enc,
                   const std::vector<EncodedScene>& train, const SelectionPolicy& policy,
                   PredictorVariant variant, uint64_t stream) {
  const RunConfig& cfg = pipe.config;
  SceneSpec spec = cfg.scene_spec();
  int n = static_cast<int>(train.size());
  std::vector<std::vector<double>> pooled(n);
  std::vector<uint64_t> labels(n);
  int workers = policy.kind == SelectionPolicy::Kind::kRandom ? 1 : cfg.workers;
  parallel_for(n, workers, [&](int i) {
    std::vector<double> scores = sampler_forward(train[i].lr_image, pipe.sampler, spec).vec();
    ObservationSet obs = select(scores, policy, nullptr, train[i].scene_id);
    auto observed = gather_observed(train[i], cfg.grid, obs.selected);
    pooled[i] = predict_variant(observed, train[i].lr_tokens, pipe.predictor, variant).pooled;
    labels[i] = train[i].labels;
  });
  RngStream rng(cfg.seed, stream);
  AlignHead head(cfg.dim, static_cast<int>(enc.concept_embedding(0).size()), rng);
  return train_stage2(pooled, labels, enc, head, cfg.stage2_epochs, cfg.stage2_lr,
                      cfg.stage2_batch, rng)
      .head;
}

}  // namespace

TrainedPipeline train_pipeline(const RunConfig& config, const OracleEncoders& enc,
                               const std::vector<EncodedScene>& train,
                               const PredictorParams* pretrained) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train_pipeline: empty training set");
  SceneSpec spec = config.scene_spec();
  SupervisionMode mode = supervision_mode_from_string(config.supervision);
  int n = static_cast<int>(train.size());

  std::vector<std::vector<double>> g_star(n);
  parallel_for(n, config.workers, [&](int i) {
    g_star[i] = supervision_for(train[i], enc, mode, config.lambda, config.grid);
  });

  std::vector<Tensor> lr_images(n);
  for (int i = 0; i < n; ++i) lr_images[i] = train[i].lr_image;

  TrainedPipeline pipe;
  pipe.config = config;

  {
    RngStream rng(config.seed, 101);
    SamplerParams init(spec, rng);
    pipe.sampler = train_sampler(lr_images, g_star, spec, init, config.sampler_epochs,
                                 config.sampler_lr, rng)
                       .params;
  }

  {
    std::vector<std::vector<double>> score_sets(n);
    for (int i = 0; i < n; ++i)
      score_sets[i] = sampler_forward(lr_images[i], pipe.sampler, spec).vec();
    pipe.threshold = calibrate_threshold(score_sets, config.target_obr);
  }

  if (pretrained != nullptr) {
    pipe.predictor = *pretrained;
  } else {
    RngStream rng(config.seed, 102);
    PredictorConfig pc;
    pc.grid = config.grid;
    pc.dim = config.dim;
    pc.blocks = config.blocks;
    pc.lr_tokens = enc.lr_tokens_side() * enc.lr_tokens_side();
    PredictorParams init(pc, rng);
    RunningMean mean(config.dim, config.momentum);
    PredictorVariant variant = predictor_variant_from_string(config.predictor_variant);
    PredictorVariant train_variant =
        (variant == PredictorVariant::kFull || variant == PredictorVariant::kNoLrContext)
            ? variant
            : PredictorVariant::kFull;
    pipe.predictor = train_stage1(train, init, config.stage1_epochs, config.stage1_lr,
                                  rng, train_variant, &mean)
                         .params;
  }

  pipe.head = fit_head(pipe, enc, train, SelectionPolicy::threshold(pipe.threshold),
                       predictor_variant_from_string(config.predictor_variant), 103);

  return pipe;
}

SceneEval evaluate_scene(const EncodedScene& scene, const TrainedPipeline& pipe,
                         const SelectionPolicy& policy, PredictorVariant variant) {
  SceneSpec spec = pipe.config.scene_spec();
  std::vector<double> scores = sampler_forward(scene.lr_image, pipe.sampler, spec).vec();
  SceneEval out;
  out.observation = select(scores, policy, nullptr, scene.scene_id);
  auto observed = gather_observed(scene, pipe.config.grid, out.observation.selected);
  out.pooled = predict_variant(observed, scene.lr_tokens, pipe.predictor, variant).pooled;
  int d = pipe.head.projection.shape()[0], dt = pipe.head.projection.shape()[1];
  out.shared_vec.assign(dt, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < dt; ++j)
      out.shared_vec[j] += out.pooled[i] * pipe.head.projection.data()[i * dt + j];
  return out;
}

BudgetReport evaluate(const TrainedPipeline& pipe, const OracleEncoders& enc,
                      const std::vector<EncodedScene>& test,
                      const SelectionPolicy& policy, PredictorVariant variant) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  long long t0 = now_ms();
  int n = static_cast<int>(test.size());
  int tiles = pipe.config.grid * pipe.config.grid;
  std::vector<SceneEval> evals(n);
  // Random policies mutate their stream; keep those sequential for
  // reproducibility across worker counts.
  int workers = policy.kind == SelectionPolicy::Kind::kRandom ? 1 : pipe.config.workers;
  parallel_for(n, workers,
               [&](int i) { evals[i] = evaluate_scene(test[i], pipe, policy, variant); });

  BudgetReport report;
  std::vector<ObservationSet> sets(n);
  for (int i = 0; i < n; ++i) sets[i] = evals[i].observation;
  ObrResult obr_result = obr(sets, tiles);
  report.realized_obr_per_scene = obr_result.per_scene;
  report.realized_obr_mean = obr_result.mean;

  CostModel cost;
  cost.area_total = static_cast<double>(n) * tiles;
  cost.cost_per_unit_area = {{"hr", 1.0}, {"lr", pipe.config.lr_unit_cost}};
  cost.r_max = "hr";
  std::vector<CostRequest> requests;
  requests.reserve(2 * n);
  for (int i = 0; i < n; ++i) {
    requests.push_back({static_cast<double>(tiles), "lr"});
    requests.push_back({static_cast<double>(evals[i].observation.selected.size()), "hr"});
  }
  report.mocr = mocr(requests, cost);

  std::vector<std::vector<double>> shared(n);
  std::vector<uint64_t> labels(n);
  std::vector<std::vector<std::pair<int, double>>> ranked(n);
  for (int i = 0; i < n; ++i) {
    shared[i] = evals[i].shared_vec;
    labels[i] = test[i].labels;
    ranked[i] = zero_shot_classify(evals[i].shared_vec, enc);
  }
  report.map_at_100 = retrieval_map(shared, labels, enc, 100);
  report.map_at_20 = retrieval_map(shared, labels, enc, 20);
  RecognitionMetrics rec = recognition_metrics(ranked, labels, pipe.config.concepts);
  report.top1_acc = rec.top1_acc;
  report.multilabel_map = rec.multilabel_map;

  std::string cfg;
  for (const auto& [k, v] : pipe.config.items()) cfg += k + "=" + v + ";";
  report.config_digest = fnv1a64(cfg.data(), cfg.size());
  report.wall_ms_total = pipe.config.fixed_timing ? 0 : now_ms() - t0;
  return report;
}

std::vector<SweepRow> budget_sweep(const TrainedPipeline& pipe, const OracleEncoders& enc,
                                   const std::vector<EncodedScene>& test,
                                   const std::vector<double>& thresholds) {
  PredictorVariant variant =
      predictor_variant_from_string(pipe.config.predictor_variant);
  std::vector<SweepRow> rows;
  rows.reserve(thresholds.size());
  for (double tau : thresholds) {
    BudgetReport r =
        evaluate(pipe, enc, test, SelectionPolicy::threshold(tau), variant);
    SweepRow row;
    row.threshold = tau;
    row.mean_obr = r.realized_obr_mean;
    row.map100 = r.map_at_100;
    row.map20 = r.map_at_20;
    row.top1 = r.top1_acc;
    row.mlmap = r.multilabel_map;
    row.wall_ms = r.wall_ms_total;
    rows.push_back(row);
  }
  return rows;
}

std::vector<AblationRow> run_ablation(const TrainedPipeline& pipe,
                                      const OracleEncoders& enc,
                                      const std::vector<EncodedScene>& test,
                                      uint64_t seed) {
  std::vector<AblationRow> rows;
  auto add = [&](const std::string& sampler, const std::string& predictor,
                 const BudgetReport& r) {
    AblationRow row;
    row.sampler = sampler;
    row.predictor = predictor;
    row.supervision = pipe.config.supervision;
    row.seed = seed;
    row.map100 = r.map_at_100;
    row.map20 = r.map_at_20;
    row.mean_obr = r.realized_obr_mean;
    row.wall_ms = r.wall_ms_total;
    rows.push_back(row);
  };

  // Matched evaluation: every cell runs under the one trained pipeline (same
  // head, same calibrated budget) with components swapped out at inference.
  SelectionPolicy learned = SelectionPolicy::threshold(pipe.threshold);
  BudgetReport full = evaluate(pipe, enc, test, learned, PredictorVariant::kFull);
  add("learned", "full", full);

  // The random policy draws at the learned policy's realized rate.
  RngStream random_stream(seed, 201);
  SelectionPolicy random_policy =
      SelectionPolicy::random(full.realized_obr_mean, random_stream);
  BudgetReport random_full =
      evaluate(pipe, enc, test, random_policy, PredictorVariant::kFull);
  if (std::abs(random_full.realized_obr_mean - full.realized_obr_mean) > 0.01)
    throw MismatchError("ablation: unmatched budgets, learned OBR " +
                        std::to_string(full.realized_obr_mean) + " vs random OBR " +
                        std::to_string(random_full.realized_obr_mean));
  add("random", "full", random_full);

  BudgetReport sampler_only =
      evaluate(pipe, enc, test, learned, PredictorVariant::kNoPredictor);
  add("learned", "no_predictor", sampler_only);

  BudgetReport lr_only = evaluate(pipe, enc, test, SelectionPolicy::threshold(1.0),
                                  PredictorVariant::kNoPredictor);
  add("none", "none", lr_only);
  return rows;
}

}  // namespace cxs
