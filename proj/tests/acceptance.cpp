// End-to-end acceptance gate: one line per criterion, nonzero exit on any
// failure. argv[1] is the CLI binary, used by the determinism criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <string>
#include <cstdarg>
#include <sys/wait.h>
#include <vector>

#include "cxs/gradcheck.hpp"
#include "cxs/pipeline.hpp"

using namespace cxs;

namespace {

int g_failures = 0;

void report(int idx, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  (%s)\n", idx, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double now_s() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// ---- criterion 1: gradient suite ----

void criterion_gradients() {
  double t0 = now_s();
  double worst = run_gradient_suite([](const std::string&, double) {});
  double dt = now_s() - t0;
  report(1, worst < 1e-4 && dt < 120.0,
         fmt("max rel err %.3g, %.1fs", worst, dt));
}

// ---- criterion 2: metric oracles ----

double brute_ap(const std::vector<int>& ranking, const std::set<int>& relevant, int k) {
  double hits = 0.0, psum = 0.0;
  int upto = std::min<int>(k, static_cast<int>(ranking.size()));
  for (int r = 0; r < upto; ++r)
    if (relevant.count(ranking[r])) {
      hits += 1.0;
      psum += hits / (r + 1);
    }
  int denom = std::min<int>(static_cast<int>(relevant.size()), k);
  return denom == 0 ? 0.0 : psum / denom;
}

double cosine_of(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double n = std::sqrt(na) * std::sqrt(nb);
  return n > 0 ? dot / n : 0.0;
}

double brute_retrieval_map(const std::vector<std::vector<double>>& vecs,
                           const std::vector<uint64_t>& labels,
                           const OracleEncoders& enc, int k) {
  int n = static_cast<int>(vecs.size());
  double total = 0.0;
  int queries = 0;
  for (int c = 0; c < enc.concept_count(); ++c) {
    std::set<int> relevant;
    for (int i = 0; i < n; ++i)
      if (labels[i] >> c & 1) relevant.insert(i);
    if (relevant.empty()) continue;
    std::vector<std::pair<int, double>> scored;
    for (int i = 0; i < n; ++i)
      scored.push_back({i, cosine_of(vecs[i], enc.concept_embedding(c))});
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<int> ranking;
    for (auto& [i, s] : scored) ranking.push_back(i);
    total += brute_ap(ranking, relevant, k);
    ++queries;
  }
  return queries ? total / queries : 0.0;
}

void criterion_metric_oracles() {
  RngStream rng(2024, 0);
  OracleEncoders enc(SceneSpec{}, 7, 32);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    // AP@K against the enumerated definition
    int n = 1 + rng.uniform_int(10);
    int k = 1 + rng.uniform_int(8);
    auto perm = rng.permutation(n);
    std::set<int> rel;
    for (int i = 0; i < n; ++i)
      if (rng.bernoulli(0.4)) rel.insert(i);
    worst = std::max(worst, std::abs(average_precision_at_k(perm, rel, k) -
                                     brute_ap(perm, rel, k)));

    // mAP@K of concept-as-query retrieval
    int scenes = 1 + rng.uniform_int(10);
    std::vector<std::vector<double>> vecs(scenes, std::vector<double>(32));
    std::vector<uint64_t> labels(scenes);
    for (int i = 0; i < scenes; ++i) {
      double norm = 0.0;
      for (auto& v : vecs[i]) {
        v = rng.normal();
        norm += v * v;
      }
      for (auto& v : vecs[i]) v /= std::sqrt(norm);
      labels[i] = 1ull << rng.uniform_int(enc.concept_count());
      if (rng.bernoulli(0.3)) labels[i] |= 1ull << rng.uniform_int(enc.concept_count());
    }
    worst = std::max(worst, std::abs(retrieval_map(vecs, labels, enc, k) -
                                     brute_retrieval_map(vecs, labels, enc, k)));

    // pairwise sigmoid loss against the per-pair sum
    int K = 1 + rng.uniform_int(8);
    int d = 4 + rng.uniform_int(5);
    Tensor z = Tensor::zeros({K, d}), f = Tensor::zeros({K, d});
    for (int i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    for (int i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    z = l2_normalize(z);
    f = l2_normalize(f);
    std::vector<std::vector<int>> match(K, std::vector<int>(K));
    for (auto& row : match)
      for (auto& y : row) y = rng.bernoulli(0.4) ? 1 : -1;
    RngStream hr(2025, trial);
    AlignHead head(d, d, hr);
    double got = loss_siglip(z, f, match, head).item();
    double tau = std::exp(head.log_tau.item()), b = head.bias.item();
    double expect = 0.0;
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j) {
        double dot = 0.0;
        for (int t = 0; t < d; ++t) dot += z.data()[i * d + t] * f.data()[j * d + t];
        double x = match[i][j] * (dot / tau + b);
        expect -= x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
      }
    expect /= static_cast<double>(K) * K;
    worst = std::max(worst, std::abs(got - expect));
  }
  report(2, worst <= 1e-10, fmt("max |diff| %.3g over 100 instances", worst));
}

// ---- criterion 3: cost identities ----

void criterion_cost_identities() {
  RngStream rng(303, 0);
  const int P = 100;
  bool exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    CostModel model;
    model.area_total = P;
    model.cost_per_unit_area = {{"hr", 1.0}, {"lr", 0.0}};
    model.r_max = "hr";
    double rate = rng.uniform01();
    std::vector<CostRequest> reqs = {{static_cast<double>(P), "lr"}};
    int selected = 0;
    for (int p = 0; p < P; ++p)
      if (rng.bernoulli(rate)) {
        reqs.push_back({1.0, "hr"});
        ++selected;
      }
    ObservationSet s;
    for (int p = 0; p < selected; ++p) s.selected.push_back(p);
    double lhs = mocr(reqs, model);
    double rhs = obr({s}, P).mean;
    exact &= lhs == rhs;
  }

  std::vector<double> scores(P);
  for (auto& v : scores) v = 0.001 + 0.998 * rng.uniform01();
  bool mono = true;
  double prev = 2.0, first = -1.0, last = -1.0;
  for (double tau : default_sweep_thresholds()) {
    auto sel = select(scores, SelectionPolicy::threshold(tau));
    double r = obr({sel}, P).mean;
    mono &= r <= prev;
    prev = r;
    if (first < 0) first = r;
    last = r;
  }
  report(3, exact && mono && first == 1.0 && last == 0.0,
         fmt("mocr==obr %s, obr(tau) monotone %s, endpoints %.2f/%.2f",
             exact ? "exact" : "broken", mono ? "yes" : "no", first, last));
}

// ---- criteria 4-8, 10: end-to-end runs over 5 seeds ----

struct SeedRun {
  double full = 0, random = 0, no_pred = 0, none = 0;
  double obr_full = 0, obr_random = 0;
  double structural = 0, semantic = 0, additive = 0;
  double top1 = 0;
  double var_ratio = 0;
};

SeedRun run_seed(uint64_t seed, const OracleEncoders& enc, TrainedPipeline* keep,
                 std::vector<EncodedScene>* keep_train,
                 std::vector<EncodedScene>* keep_test, double* c4_seconds) {
  RunConfig cfg;
  cfg.seed = seed;
  SceneSpec spec = cfg.scene_spec();

  double t0 = now_s();
  auto train = encode_scenes(generate_scenes(spec, cfg.train_scenes, seed, 0), enc,
                             cfg.workers);
  auto test = encode_scenes(
      generate_scenes(spec, cfg.test_scenes, seed, cfg.test_id_offset), enc,
      cfg.workers);

  SeedRun out;
  TrainedPipeline base = train_pipeline(cfg, enc, train);
  auto rows = run_ablation(base, enc, test, seed);
  for (const auto& r : rows) {
    if (r.sampler == "learned" && r.predictor == "full") {
      out.full = r.map100;
      out.obr_full = r.mean_obr;
    } else if (r.sampler == "random") {
      out.random = r.map100;
      out.obr_random = r.mean_obr;
    } else if (r.predictor == "no_predictor") {
      out.no_pred = r.map100;
    } else {
      out.none = r.map100;
    }
  }
  *c4_seconds += now_s() - t0;

  auto rep = evaluate(base, enc, test, SelectionPolicy::threshold(base.threshold),
                      PredictorVariant::kFull);
  out.top1 = rep.top1_acc;

  for (const char* mode : {"structural_only", "semantic_only", "additive"}) {
    RunConfig c = cfg;
    c.supervision = mode;
    TrainedPipeline pipe = train_pipeline(c, enc, train, &base.predictor);
    double m = evaluate(pipe, enc, test, SelectionPolicy::threshold(pipe.threshold),
                        PredictorVariant::kFull)
                   .map_at_100;
    if (std::string(mode) == "structural_only") out.structural = m;
    else if (std::string(mode) == "semantic_only") out.semantic = m;
    else out.additive = m;
  }

  double vh = 0, vs = 0;
  for (const auto& sc : test) {
    auto scores = sampler_forward(sc.lr_image, base.sampler, spec).vec();
    auto obs = select(scores, SelectionPolicy::threshold(base.threshold), nullptr,
                      sc.scene_id);
    auto rep_sc = predict_variant(gather_observed(sc, cfg.grid, obs.selected),
                                  sc.lr_tokens, base.predictor, PredictorVariant::kFull);
    vh += token_variance(rep_sc.h_tilde);
    vs += token_variance(sc.target_tokens);
  }
  out.var_ratio = vh / vs;

  if (keep) *keep = base;
  if (keep_train) *keep_train = std::move(train);
  if (keep_test) *keep_test = std::move(test);
  return out;
}

void criterion_calibration(const TrainedPipeline& pipe,
                           const std::vector<EncodedScene>& held_out) {
  RunConfig cfg = pipe.config;
  SceneSpec spec = cfg.scene_spec();
  const int P = spec.tiles();
  auto train = encode_scenes(generate_scenes(spec, cfg.train_scenes, cfg.seed, 0),
                             OracleEncoders(spec, cfg.encoder_seed, cfg.dim),
                             cfg.workers);
  std::vector<std::vector<double>> cal_scores, held_scores;
  for (const auto& sc : train)
    cal_scores.push_back(sampler_forward(sc.lr_image, pipe.sampler, spec).vec());
  for (const auto& sc : held_out)
    held_scores.push_back(sampler_forward(sc.lr_image, pipe.sampler, spec).vec());

  bool ok = true;
  std::string detail;
  for (double target : {0.05, 0.15, 0.5}) {
    double tau = calibrate_threshold(cal_scores, target);
    auto realized = [&](const std::vector<std::vector<double>>& sets) {
      double s = 0;
      for (const auto& sc : sets)
        s += static_cast<double>(
                 select(sc, SelectionPolicy::threshold(tau)).selected.size()) /
             P;
      return s / sets.size();
    };
    double cal = realized(cal_scores), held = realized(held_scores);
    ok &= std::abs(cal - target) <= 0.02 && std::abs(held - target) <= 0.05;
    detail += fmt("%.2f->%.3f/%.3f ", target, cal, held);
  }
  report(7, ok, "target->cal/held " + detail);
}

void criterion_completion_retrieval(const TrainedPipeline& pipe,
                                    const std::vector<EncodedScene>& train,
                                    const std::vector<EncodedScene>& test) {
  SceneSpec spec = pipe.config.scene_spec();
  const int G = spec.grid;

  // Retrieval database: pooled target features of every training object tile,
  // labeled by concept. Background tiles are excluded — they form one dense
  // near-duplicate cluster that would fill the whole top-5 for any query.
  std::vector<std::vector<double>> gallery;
  std::vector<int> gallery_concept;
  for (const auto& sc : train) {
    for (const auto& obj : sc.objects) {
      gallery.push_back(pool_tile_block(sc.target_tokens, obj.tile, G));
      gallery_concept.push_back(obj.concept_id);
    }
  }

  int wins_full = 0, wins_nolr = 0, queries = 0;
  for (const auto& sc : test) {
    if (queries == 50) break;
    auto scores = sampler_forward(sc.lr_image, pipe.sampler, spec).vec();
    auto obs = select(scores, SelectionPolicy::threshold(pipe.threshold), nullptr,
                      sc.scene_id);
    int tile = -1, concept_id = -1;
    for (const auto& obj : sc.objects) {
      if (std::find(obs.selected.begin(), obs.selected.end(), obj.tile) ==
          obs.selected.end()) {
        tile = obj.tile;
        concept_id = obj.concept_id;
        break;
      }
    }
    if (tile < 0) continue;
    auto observed = gather_observed(sc, G, obs.selected);
    for (auto variant : {PredictorVariant::kFull, PredictorVariant::kNoLrContext}) {
      auto rep = predict_variant(observed, sc.lr_tokens, pipe.predictor, variant);
      auto ranked = tile_completion_retrieval(rep.h_tilde, tile, G, obs, gallery, 5);
      bool hit = false;
      for (const auto& r : ranked) hit |= gallery_concept[r.index] == concept_id;
      (variant == PredictorVariant::kFull ? wins_full : wins_nolr) += hit;
    }
    ++queries;
  }
  report(10, queries == 50 && wins_full > wins_nolr,
         fmt("%d queries, top-5 hits full %d vs no_lr_context %d", queries, wins_full,
             wins_nolr));
}

// ---- criterion 9: CLI determinism ----

std::string g_binary;

int run_cli(const std::string& args) {
  std::string cmd = g_binary + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void criterion_cli_determinism() {
  std::string dir = "/tmp/cxs_acceptance";
  std::system(("rm -rf " + dir + " && mkdir -p " + dir).c_str());
  std::string cfg = dir + "/cfg.txt";
  {
    std::ofstream out(cfg);
    out << "sampler_epochs = 4\nstage1_epochs = 3\nstage2_epochs = 120\n"
           "stage2_batch = 16\ntrain_scenes = 48\ntest_scenes = 16\n";
  }
  auto path = [&](const char* name) { return dir + "/" + name; };
  bool ok = true;
  ok &= run_cli("gen-data --scenes 48 --seed 7 --out " + path("train.cxsd")) == 0;
  ok &= run_cli("gen-data --scenes 16 --seed 7 --id-offset 1048576 --out " +
                path("test.cxsd")) == 0;
  std::string base = " --config " + cfg + " --seed 7 ";
  ok &= run_cli("make-supervision" + base + "--dataset " + path("train.cxsd") +
                " --out " + path("sup.cxsg")) == 0;
  ok &= run_cli("train-sampler" + base + "--dataset " + path("train.cxsd") +
                " --supervision-file " + path("sup.cxsg") + " --out " +
                path("sampler")) == 0;
  ok &= run_cli("train-predictor" + base + "--dataset " + path("train.cxsd") +
                " --out " + path("predictor")) == 0;
  ok &= run_cli("calibrate" + base + "--dataset " + path("train.cxsd") +
                " --sampler " + path("sampler") + " --target-obr 0.15 --out " +
                path("cal.txt")) == 0;
  ok &= run_cli("train-align" + base + "--dataset " + path("train.cxsd") +
                " --sampler " + path("sampler") + " --predictor " + path("predictor") +
                " --calibration " + path("cal.txt") + " --out " + path("align")) == 0;
  if (!ok) {
    report(9, false, "pipeline command failed");
    return;
  }

  std::string eval_args = base + "--dataset " + path("test.cxsd") + " --sampler " +
                          path("sampler") + " --predictor " + path("predictor") +
                          " --align " + path("align") + " --fixed-timing --out ";
  ok &= run_cli("sweep" + eval_args + path("sweep1.csv")) == 0;
  ok &= run_cli("sweep" + eval_args + path("sweep2.csv") + " --workers 4") == 0;
  ok &= run_cli("sweep" + eval_args + path("sweep3.csv")) == 0;

  std::string abl_args = base + "--train-dataset " + path("train.cxsd") +
                         " --test-dataset " + path("test.cxsd") +
                         " --seeds 7 --fixed-timing --out ";
  ok &= run_cli("ablate" + abl_args + path("abl1.csv")) == 0;
  ok &= run_cli("ablate" + abl_args + path("abl2.csv") + " --workers 4") == 0;
  ok &= run_cli("ablate" + abl_args + path("abl3.csv")) == 0;

  std::string s1 = slurp(path("sweep1.csv"));
  bool sweep_ok = !s1.empty() && s1 == slurp(path("sweep2.csv")) &&
                  s1 == slurp(path("sweep3.csv"));
  std::string a1 = slurp(path("abl1.csv"));
  bool abl_ok = !a1.empty() && a1 == slurp(path("abl2.csv")) &&
                a1 == slurp(path("abl3.csv"));
  report(9, ok && sweep_ok && abl_ok,
         fmt("commands %s, sweep byte-identical %s, ablate byte-identical %s",
             ok ? "ok" : "failed", sweep_ok ? "yes" : "no", abl_ok ? "yes" : "no"));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_binary = argv[1];

  criterion_gradients();
  criterion_metric_oracles();
  criterion_cost_identities();

  const std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  OracleEncoders enc(SceneSpec{}, 7, 32);
  std::vector<SeedRun> runs;
  TrainedPipeline first_pipe;
  std::vector<EncodedScene> first_train;
  std::vector<EncodedScene> first_test;
  double c4_seconds = 0.0;
  bool seeds_ok = true;
  std::string seed_err;
  for (uint64_t s : seeds) {
    try {
      runs.push_back(run_seed(s, enc, runs.empty() ? &first_pipe : nullptr,
                              runs.empty() ? &first_train : nullptr,
                              runs.empty() ? &first_test : nullptr, &c4_seconds));
    } catch (const std::exception& e) {
      seeds_ok = false;
      seed_err = e.what();
      break;
    }
  }

  if (!seeds_ok) {
    report(4, false, "seed run failed: " + seed_err);
    report(5, false, "seed run failed");
    report(6, false, "seed run failed");
    report(7, false, "seed run failed");
    report(8, false, "seed run failed");
  } else {
    int g1 = 0, g2 = 0, g3 = 0, matched = 0;
    double mean_obr = 0.0;
    for (const auto& r : runs) {
      g1 += r.full > r.random;
      g2 += r.random > r.no_pred;
      g3 += r.no_pred > r.none;
      matched += std::abs(r.obr_full - r.obr_random) <= 0.01;
      mean_obr += r.obr_full / runs.size();
    }
    bool c4 = g1 >= 4 && g2 >= 4 && g3 >= 4 && matched == 5 &&
              std::abs(mean_obr - 0.15) <= 0.05 && c4_seconds < 900.0;
    report(4, c4,
           fmt("gaps %d/%d/%d of 5, obr matched %d/5, mean obr %.3f, %.0fs", g1, g2,
               g3, matched, mean_obr, c4_seconds));

    double mult = 0, stru = 0, sem = 0, add = 0, top1_hits = 0;
    bool collapse_ok = true;
    std::string ratios;
    for (const auto& r : runs) {
      mult += r.full / runs.size();
      stru += r.structural / runs.size();
      sem += r.semantic / runs.size();
      add += r.additive / runs.size();
      top1_hits += r.top1 >= 0.25;
      collapse_ok &= r.var_ratio >= 0.10;
      ratios += fmt("%.2f ", r.var_ratio);
    }
    report(5, mult >= stru && mult >= sem,
           fmt("mean map100 mult %.3f vs structural %.3f / semantic %.3f (additive %.3f)",
               mult, stru, sem, add));
    report(6, collapse_ok, "held-out var ratios " + ratios);
    criterion_calibration(first_pipe, first_test);
    report(8, top1_hits >= 4, fmt("top1 >= 0.25 in %.0f/5 seeds", top1_hits));
  }

  if (g_binary.empty())
    report(9, false, "no CLI binary path given");
  else
    criterion_cli_determinism();

  if (seeds_ok)
    criterion_completion_retrieval(first_pipe, first_train, first_test);
  else
    report(10, false, "seed run failed");

  std::printf("%s\n", g_failures == 0 ? "all criteria passed"
                                      : fmt("%d criteria failed", g_failures).c_str());
  return g_failures == 0 ? 0 : 1;
}
