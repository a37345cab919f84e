#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cxs/checkpoint.hpp"
#include "cxs/dataset.hpp"
#include "cxs/gradcheck.hpp"
#include "cxs/pipeline.hpp"

using namespace cxs;

namespace {

long long now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct Common {
  std::string config_path;
  RunConfig config;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--seed", config.seed, "run seed");
    cmd->add_option("--workers", config.workers, "per-scene parallelism");
    cmd->add_flag("--fixed-timing", config.fixed_timing,
                  "report wall_ms as 0 for byte-stable outputs");
  }

  /// File values load first, then CLI flags re-apply on top.
  void resolve(CLI::App* cmd) {
    if (config_path.empty()) return;
    RunConfig from_file = load_config(config_path);
    uint64_t seed = config.seed;
    int workers = config.workers;
    bool fixed = config.fixed_timing;
    bool seed_set = cmd->count("--seed") > 0;
    bool workers_set = cmd->count("--workers") > 0;
    bool fixed_set = cmd->count("--fixed-timing") > 0;
    config = from_file;
    if (seed_set) config.seed = seed;
    if (workers_set) config.workers = workers;
    if (fixed_set) config.fixed_timing = fixed;
  }
};

std::vector<Scene> load_scenes(const std::string& path, const RunConfig& config) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw MissingFileError("missing dataset " + path);
  probe.close();
  SceneSpec spec;
  std::vector<Scene> scenes = read_dataset(path, &spec);
  SceneSpec want = config.scene_spec();
  if (spec.grid != want.grid || spec.tile_px != want.tile_px ||
      spec.channels != want.channels || spec.concepts != want.concepts)
    throw MismatchError("dataset " + path + " geometry does not match config");
  return scenes;
}

void save_sampler(const SamplerParams& p, const std::string& base) {
  SamplerParams& m = const_cast<SamplerParams&>(p);
  save_checkpoint({{"conv1_w", m.conv1_w},
                   {"conv1_b", m.conv1_b},
                   {"conv2_w", m.conv2_w},
                   {"conv2_b", m.conv2_b}},
                  base);
}

SamplerParams load_sampler(const RunConfig& config, const std::string& base) {
  std::ifstream probe(base + ".json");
  if (!probe) throw MissingFileError("missing checkpoint " + base + ".json");
  probe.close();
  RngStream rng(0, 0);
  SamplerParams p(config.scene_spec(), rng);
  auto loaded = load_checkpoint(base);
  try {
    checkpoint_fill(loaded, "conv1_w", p.conv1_w);
    checkpoint_fill(loaded, "conv1_b", p.conv1_b);
    checkpoint_fill(loaded, "conv2_w", p.conv2_w);
    checkpoint_fill(loaded, "conv2_b", p.conv2_b);
  } catch (const std::runtime_error& e) {
    throw MismatchError(e.what());
  }
  return p;
}

void save_predictor(PredictorParams& p, const std::string& base) {
  save_checkpoint(p.named(), base);
}

PredictorParams load_predictor(const RunConfig& config, const OracleEncoders& enc,
                               const std::string& base) {
  std::ifstream probe(base + ".json");
  if (!probe) throw MissingFileError("missing checkpoint " + base + ".json");
  probe.close();
  RngStream rng(0, 0);
  PredictorConfig pc;
  pc.grid = config.grid;
  pc.dim = config.dim;
  pc.blocks = config.blocks;
  pc.lr_tokens = enc.lr_tokens_side() * enc.lr_tokens_side();
  PredictorParams p(pc, rng);
  auto loaded = load_checkpoint(base);
  try {
    for (auto& [name, t] : p.named()) checkpoint_fill(loaded, name, t);
  } catch (const std::runtime_error& e) {
    throw MismatchError(e.what());
  }
  return p;
}

void save_head(AlignHead& h, const std::string& base) { save_checkpoint(h.named(), base); }

AlignHead load_head(const RunConfig& config, const OracleEncoders& enc,
                    const std::string& base) {
  std::ifstream probe(base + ".json");
  if (!probe) throw MissingFileError("missing checkpoint " + base + ".json");
  probe.close();
  RngStream rng(0, 0);
  AlignHead h(config.dim, static_cast<int>(enc.concept_embedding(0).size()), rng);
  auto loaded = load_checkpoint(base);
  try {
    for (auto& [name, t] : h.named()) checkpoint_fill(loaded, name, t);
  } catch (const std::runtime_error& e) {
    throw MismatchError(e.what());
  }
  return h;
}

double load_tau(const CLI::App* cmd, const RunConfig& config,
                const std::string& calibration_path) {
  if (cmd->count("--tau")) return config.tau;
  if (!calibration_path.empty()) {
    std::ifstream in(calibration_path);
    if (!in) throw MissingFileError("missing calibration file " + calibration_path);
    double tau = config.tau;
    std::string key;
    if (!(in >> key >> tau) || key != "tau")
      throw ConfigError("calibration file " + calibration_path + ": expected 'tau <value>'");
    return tau;
  }
  return config.tau;
}

TrainedPipeline assemble(const RunConfig& config, const OracleEncoders& enc,
                         const std::string& sampler_path,
                         const std::string& predictor_path, const std::string& head_path,
                         double tau) {
  TrainedPipeline pipe;
  pipe.config = config;
  pipe.sampler = load_sampler(config, sampler_path);
  pipe.predictor = load_predictor(config, enc, predictor_path);
  pipe.head = load_head(config, enc, head_path);
  pipe.threshold = tau;
  return pipe;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

int run(int argc, char** argv) {
  CLI::App app{"cost-aware cross-scale observation pipeline"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
  Common gen_c;
  gen_c.attach(gen);
  int gen_count = 64;
  uint64_t gen_offset = 0;
  std::string gen_out = "dataset.cxsd";
  gen->add_option("--scenes", gen_count, "scene count");
  gen->add_option("--id-offset", gen_offset, "first scene id");
  gen->add_option("--out", gen_out, "output dataset path");

  // make-supervision
  auto* sup = app.add_subcommand("make-supervision", "build per-tile supervision maps");
  Common sup_c;
  sup_c.attach(sup);
  std::string sup_dataset, sup_out = "supervision.cxsg";
  sup->add_option("--dataset", sup_dataset, "input dataset")->required();
  sup->add_option("--out", sup_out, "output supervision sidecar");
  sup->add_option("--supervision", sup_c.config.supervision, "fusion mode");
  sup->add_option("--lambda", sup_c.config.lambda, "LR-similarity discount");

  // train-sampler
  auto* tsam = app.add_subcommand("train-sampler", "train the LR tile scorer");
  Common tsam_c;
  tsam_c.attach(tsam);
  std::string tsam_dataset, tsam_sup, tsam_out = "sampler";
  tsam->add_option("--dataset", tsam_dataset, "training dataset")->required();
  tsam->add_option("--supervision-file", tsam_sup, "supervision sidecar")->required();
  tsam->add_option("--out", tsam_out, "checkpoint base path");
  tsam->add_option("--epochs", tsam_c.config.sampler_epochs, "epochs");
  tsam->add_option("--lr", tsam_c.config.sampler_lr, "learning rate");

  // train-predictor
  auto* tpred = app.add_subcommand("train-predictor", "stage I latent completion training");
  Common tpred_c;
  tpred_c.attach(tpred);
  std::string tpred_dataset, tpred_out = "predictor";
  tpred->add_option("--dataset", tpred_dataset, "training dataset")->required();
  tpred->add_option("--out", tpred_out, "checkpoint base path");
  tpred->add_option("--epochs", tpred_c.config.stage1_epochs, "epochs");
  tpred->add_option("--lr", tpred_c.config.stage1_lr, "learning rate");
  tpred->add_option("--predictor-variant", tpred_c.config.predictor_variant, "variant");

  // train-align
  auto* tal = app.add_subcommand("train-align", "stage II vision-text alignment");
  Common tal_c;
  tal_c.attach(tal);
  std::string tal_dataset, tal_sampler, tal_predictor, tal_out = "align", tal_cal;
  bool unfreeze = false;
  tal->add_option("--dataset", tal_dataset, "training dataset")->required();
  tal->add_option("--sampler", tal_sampler, "sampler checkpoint base")->required();
  tal->add_option("--predictor", tal_predictor, "predictor checkpoint base")->required();
  tal->add_option("--out", tal_out, "checkpoint base path");
  tal->add_option("--tau", tal_c.config.tau, "acquisition threshold");
  tal->add_option("--calibration", tal_cal, "calibration file with the threshold");
  tal->add_option("--epochs", tal_c.config.stage2_epochs, "epochs");
  tal->add_option("--lr", tal_c.config.stage2_lr, "learning rate");
  tal->add_option("--batch", tal_c.config.stage2_batch, "batch size");
  tal->add_flag("--unfreeze-predictor", unfreeze, "also update the predictor");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "pick the threshold for a target budget");
  Common cal_c;
  cal_c.attach(cal);
  std::string cal_dataset, cal_sampler, cal_out = "calibration.txt";
  cal->add_option("--dataset", cal_dataset, "calibration dataset")->required();
  cal->add_option("--sampler", cal_sampler, "sampler checkpoint base")->required();
  cal->add_option("--target-obr", cal_c.config.target_obr, "target mean OBR");
  cal->add_option("--out", cal_out, "output calibration file");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "full-pipeline evaluation report");
  Common ev_c;
  ev_c.attach(ev);
  std::string ev_dataset, ev_sampler, ev_predictor, ev_head, ev_out = "report.json", ev_cal;
  ev->add_option("--dataset", ev_dataset, "evaluation dataset")->required();
  ev->add_option("--sampler", ev_sampler, "sampler checkpoint base")->required();
  ev->add_option("--predictor", ev_predictor, "predictor checkpoint base")->required();
  ev->add_option("--align", ev_head, "alignment head checkpoint base")->required();
  ev->add_option("--tau", ev_c.config.tau, "acquisition threshold");
  ev->add_option("--calibration", ev_cal, "calibration file with the threshold");
  ev->add_option("--predictor-variant", ev_c.config.predictor_variant, "variant");
  ev->add_option("--out", ev_out, "output report path");

  // sweep
  auto* sw = app.add_subcommand("sweep", "threshold sweep CSV");
  Common sw_c;
  sw_c.attach(sw);
  std::string sw_dataset, sw_sampler, sw_predictor, sw_head, sw_out = "sweep.csv";
  sw->add_option("--dataset", sw_dataset, "evaluation dataset")->required();
  sw->add_option("--sampler", sw_sampler, "sampler checkpoint base")->required();
  sw->add_option("--predictor", sw_predictor, "predictor checkpoint base")->required();
  sw->add_option("--align", sw_head, "alignment head checkpoint base")->required();
  sw->add_option("--out", sw_out, "output CSV path");

  // ablate
  auto* ab = app.add_subcommand("ablate", "matched-budget ablation CSV");
  Common ab_c;
  ab_c.attach(ab);
  std::string ab_train, ab_test, ab_out = "ablation.csv";
  std::vector<uint64_t> ab_seeds;
  ab->add_option("--train-dataset", ab_train, "training dataset")->required();
  ab->add_option("--test-dataset", ab_test, "evaluation dataset")->required();
  ab->add_option("--seeds", ab_seeds, "run seeds (default: the single --seed)");
  ab->add_option("--supervision", ab_c.config.supervision, "supervision fusion mode");
  ab->add_option("--out", ab_out, "output CSV path");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  Common gc_c;
  gc_c.attach(gc);

  CLI11_PARSE(app, argc, argv);
  long long t0 = now_ms();

  if (gen->parsed()) {
    gen_c.resolve(gen);
    gen_c.config.validate();
    auto scenes = generate_scenes(gen_c.config.scene_spec(), gen_count,
                                  gen_c.config.seed, gen_offset);
    write_dataset(scenes, gen_c.config.scene_spec(), gen_out);
    write_manifest(gen_out, gen_c.config, {}, {gen_out}, now_ms() - t0);
    std::cout << "wrote " << gen_out << " (" << scenes.size() << " scenes)\n";
  } else if (sup->parsed()) {
    sup_c.resolve(sup);
    sup_c.config.validate();
    auto scenes = load_scenes(sup_dataset, sup_c.config);
    OracleEncoders enc(sup_c.config.scene_spec(), sup_c.config.encoder_seed,
                       sup_c.config.dim);
    SupervisionMode mode = supervision_mode_from_string(sup_c.config.supervision);
    std::vector<std::vector<double>> g_star(scenes.size());
    parallel_for(static_cast<int>(scenes.size()), sup_c.config.workers, [&](int i) {
      g_star[i] = make_supervision(scenes[i], enc, mode, sup_c.config.lambda).g_star;
    });
    write_supervision(g_star, sup_out);
    write_manifest(sup_out, sup_c.config, {sup_dataset}, {sup_out}, now_ms() - t0);
    std::cout << "wrote " << sup_out << "\n";
  } else if (tsam->parsed()) {
    tsam_c.resolve(tsam);
    tsam_c.config.validate();
    auto scenes = load_scenes(tsam_dataset, tsam_c.config);
    auto g_star = read_supervision(tsam_sup);
    if (g_star.size() != scenes.size())
      throw MismatchError("supervision scene count does not match dataset");
    SceneSpec spec = tsam_c.config.scene_spec();
    std::vector<Tensor> lr(scenes.size());
    for (size_t i = 0; i < scenes.size(); ++i)
      lr[i] = downsample_lr(scenes[i].hr_mosaic, spec.grid);
    RngStream rng(tsam_c.config.seed, 101);
    SamplerParams init(spec, rng);
    auto result = train_sampler(lr, g_star, spec, init, tsam_c.config.sampler_epochs,
                                tsam_c.config.sampler_lr, rng);
    save_sampler(result.params, tsam_out);
    write_manifest(tsam_out, tsam_c.config, {tsam_dataset, tsam_sup},
                   {tsam_out + ".json", tsam_out + ".bin"}, now_ms() - t0);
    std::cout << "wrote " << tsam_out << ".{json,bin}, final loss "
              << (result.loss_trace.empty() ? 0.0 : result.loss_trace.back()) << "\n";
  } else if (tpred->parsed()) {
    tpred_c.resolve(tpred);
    tpred_c.config.validate();
    auto scenes = load_scenes(tpred_dataset, tpred_c.config);
    OracleEncoders enc(tpred_c.config.scene_spec(), tpred_c.config.encoder_seed,
                       tpred_c.config.dim);
    auto encoded = encode_scenes(scenes, enc, tpred_c.config.workers);
    RngStream rng(tpred_c.config.seed, 102);
    PredictorConfig pc;
    pc.grid = tpred_c.config.grid;
    pc.dim = tpred_c.config.dim;
    pc.blocks = tpred_c.config.blocks;
    pc.lr_tokens = enc.lr_tokens_side() * enc.lr_tokens_side();
    PredictorParams init(pc, rng);
    PredictorVariant variant =
        predictor_variant_from_string(tpred_c.config.predictor_variant);
    auto result = train_stage1(encoded, init, tpred_c.config.stage1_epochs,
                               tpred_c.config.stage1_lr, rng, variant);
    save_predictor(result.params, tpred_out);
    write_manifest(tpred_out, tpred_c.config, {tpred_dataset},
                   {tpred_out + ".json", tpred_out + ".bin"}, now_ms() - t0);
    std::cout << "wrote " << tpred_out << ".{json,bin}, final loss "
              << result.epoch_loss.back() << ", var ratio "
              << result.epoch_var_ratio.back() << "\n";
  } else if (tal->parsed()) {
    tal_c.resolve(tal);
    tal_c.config.validate();
    auto scenes = load_scenes(tal_dataset, tal_c.config);
    OracleEncoders enc(tal_c.config.scene_spec(), tal_c.config.encoder_seed,
                       tal_c.config.dim);
    auto encoded = encode_scenes(scenes, enc, tal_c.config.workers);
    SceneSpec spec = tal_c.config.scene_spec();
    SamplerParams sampler = load_sampler(tal_c.config, tal_sampler);
    PredictorParams predictor = load_predictor(tal_c.config, enc, tal_predictor);
    double tau = load_tau(tal, tal_c.config, tal_cal);
    SelectionPolicy policy = SelectionPolicy::threshold(tau);
    int n = static_cast<int>(encoded.size());
    std::vector<std::vector<int>> selections(n);
    parallel_for(n, tal_c.config.workers, [&](int i) {
      auto scores = sampler_forward(encoded[i].lr_image, sampler, spec).vec();
      selections[i] = select(scores, policy, nullptr, encoded[i].scene_id).selected;
    });
    RngStream rng(tal_c.config.seed, 103);
    AlignHead head(tal_c.config.dim,
                   static_cast<int>(enc.concept_embedding(0).size()), rng);
    Stage2Result result;
    if (unfreeze) {
      result = train_stage2_joint(encoded, selections, predictor, enc, head,
                                  tal_c.config.stage2_epochs, tal_c.config.stage2_lr,
                                  tal_c.config.stage2_batch, rng);
      save_predictor(predictor, tal_out + "_predictor");
    } else {
      std::vector<std::vector<double>> pooled(n);
      std::vector<uint64_t> labels(n);
      parallel_for(n, tal_c.config.workers, [&](int i) {
        auto observed = gather_observed(encoded[i], spec.grid, selections[i]);
        pooled[i] = predict(observed, encoded[i].lr_tokens, predictor).pooled;
        labels[i] = encoded[i].labels;
      });
      result = train_stage2(pooled, labels, enc, head, tal_c.config.stage2_epochs,
                            tal_c.config.stage2_lr, tal_c.config.stage2_batch, rng);
    }
    save_head(result.head, tal_out);
    write_manifest(tal_out, tal_c.config, {tal_dataset},
                   {tal_out + ".json", tal_out + ".bin"}, now_ms() - t0);
    std::cout << "wrote " << tal_out << ".{json,bin}, final loss "
              << result.epoch_loss.back() << "\n";
  } else if (cal->parsed()) {
    cal_c.resolve(cal);
    cal_c.config.validate();
    auto scenes = load_scenes(cal_dataset, cal_c.config);
    SceneSpec spec = cal_c.config.scene_spec();
    SamplerParams sampler = load_sampler(cal_c.config, cal_sampler);
    std::vector<std::vector<double>> score_sets(scenes.size());
    parallel_for(static_cast<int>(scenes.size()), cal_c.config.workers, [&](int i) {
      Tensor lr = downsample_lr(scenes[i].hr_mosaic, spec.grid);
      score_sets[i] = sampler_forward(lr, sampler, spec).vec();
    });
    double tau = calibrate_threshold(score_sets, cal_c.config.target_obr);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "tau %.17g\n", tau);
    write_text(cal_out, buf);
    write_manifest(cal_out, cal_c.config, {cal_dataset}, {cal_out}, now_ms() - t0);
    std::cout << "tau " << tau << "\n";
  } else if (ev->parsed()) {
    ev_c.resolve(ev);
    ev_c.config.validate();
    auto scenes = load_scenes(ev_dataset, ev_c.config);
    OracleEncoders enc(ev_c.config.scene_spec(), ev_c.config.encoder_seed,
                       ev_c.config.dim);
    auto encoded = encode_scenes(scenes, enc, ev_c.config.workers);
    double tau = load_tau(ev, ev_c.config, ev_cal);
    TrainedPipeline pipe =
        assemble(ev_c.config, enc, ev_sampler, ev_predictor, ev_head, tau);
    PredictorVariant variant =
        predictor_variant_from_string(ev_c.config.predictor_variant);
    BudgetReport r = evaluate(pipe, enc, encoded, SelectionPolicy::threshold(tau), variant);
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "{\n  \"mean_obr\": %.6f,\n  \"mocr\": %.6f,\n  \"map100\": %.6f,\n"
                  "  \"map20\": %.6f,\n  \"top1\": %.6f,\n  \"mlmap\": %.6f,\n"
                  "  \"wall_ms\": %lld\n}\n",
                  r.realized_obr_mean, r.mocr, r.map_at_100, r.map_at_20, r.top1_acc,
                  r.multilabel_map, static_cast<long long>(r.wall_ms_total));
    write_text(ev_out, buf);
    write_manifest(ev_out, ev_c.config, {ev_dataset}, {ev_out}, now_ms() - t0);
    std::cout << buf;
  } else if (sw->parsed()) {
    sw_c.resolve(sw);
    sw_c.config.validate();
    auto scenes = load_scenes(sw_dataset, sw_c.config);
    OracleEncoders enc(sw_c.config.scene_spec(), sw_c.config.encoder_seed,
                       sw_c.config.dim);
    auto encoded = encode_scenes(scenes, enc, sw_c.config.workers);
    TrainedPipeline pipe = assemble(sw_c.config, enc, sw_sampler, sw_predictor, sw_head,
                                    sw_c.config.tau);
    auto rows = budget_sweep(pipe, enc, encoded, default_sweep_thresholds());
    write_text(sw_out, sweep_csv(rows));
    write_manifest(sw_out, sw_c.config, {sw_dataset}, {sw_out}, now_ms() - t0);
    std::cout << "wrote " << sw_out << "\n";
  } else if (ab->parsed()) {
    ab_c.resolve(ab);
    ab_c.config.validate();
    if (ab_seeds.empty()) ab_seeds.push_back(ab_c.config.seed);
    auto train_raw = load_scenes(ab_train, ab_c.config);
    auto test_raw = load_scenes(ab_test, ab_c.config);
    OracleEncoders enc(ab_c.config.scene_spec(), ab_c.config.encoder_seed,
                       ab_c.config.dim);
    auto train = encode_scenes(train_raw, enc, ab_c.config.workers);
    auto test = encode_scenes(test_raw, enc, ab_c.config.workers);
    std::vector<AblationRow> rows;
    for (uint64_t seed : ab_seeds) {
      RunConfig cfg = ab_c.config;
      cfg.seed = seed;
      TrainedPipeline pipe = train_pipeline(cfg, enc, train);
      auto cell_rows = run_ablation(pipe, enc, test, seed);
      rows.insert(rows.end(), cell_rows.begin(), cell_rows.end());
    }
    write_text(ab_out, ablation_csv(rows));
    write_manifest(ab_out, ab_c.config, {ab_train, ab_test}, {ab_out}, now_ms() - t0);
    std::cout << "wrote " << ab_out << " (" << rows.size() << " rows)\n";
  } else if (gc->parsed()) {
    gc_c.resolve(gc);
    double worst = run_gradient_suite(
        [](const std::string& name, double err) {
          std::printf("%-32s %.3e\n", name.c_str(), err);
        },
        gc_c.config.seed);
    std::printf("%-32s %.3e\n", "max", worst);
    if (worst >= 1e-4) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const MissingFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const MismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const DatasetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
