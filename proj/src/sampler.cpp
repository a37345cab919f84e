#include "cxs/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace cxs {

SupervisionMode supervision_mode_from_string(const std::string& s) {
  if (s == "multiplicative") return SupervisionMode::kMultiplicative;
  if (s == "additive") return SupervisionMode::kAdditive;
  if (s == "structural_only") return SupervisionMode::kStructuralOnly;
  if (s == "semantic_only") return SupervisionMode::kSemanticOnly;
  throw std::invalid_argument("unknown supervision mode '" + s + "'");
}

std::string to_string(SupervisionMode mode) {
  switch (mode) {
    case SupervisionMode::kMultiplicative: return "multiplicative";
    case SupervisionMode::kAdditive: return "additive";
    case SupervisionMode::kStructuralOnly: return "structural_only";
    case SupervisionMode::kSemanticOnly: return "semantic_only";
  }
  return "?";
}

namespace {

std::vector<double> minmax_normalize(std::vector<double> v) {
  if (v.empty()) return v;
  double lo = *std::min_element(v.begin(), v.end());
  double hi = *std::max_element(v.begin(), v.end());
  if (hi - lo <= 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    return v;
  }
  for (auto& x : v) x = (x - lo) / (hi - lo);
  return v;
}

}  // namespace

std::vector<double> structural_saliency(const Tensor& target_tokens, int grid) {
  const Shape& s = target_tokens.shape();
  if (s.size() != 3 || s[0] != 2 * grid || s[1] != 2 * grid)
    throw ShapeError("structural_saliency: token grid " + shape_str(s) +
                     " does not match grid " + std::to_string(grid));
  int d = s[2];
  std::vector<double> raw(static_cast<size_t>(grid) * grid);
  for (int ti = 0; ti < grid; ++ti)
    for (int tj = 0; tj < grid; ++tj) {
      double mean = 0.0;
      for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v)
          for (int k = 0; k < d; ++k)
            mean += target_tokens.data()[((2 * ti + u) * 2 * grid + 2 * tj + v) * d + k];
      mean /= 4.0 * d;
      double var = 0.0;
      for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v)
          for (int k = 0; k < d; ++k) {
            double x =
                target_tokens.data()[((2 * ti + u) * 2 * grid + 2 * tj + v) * d + k];
            var += (x - mean) * (x - mean);
          }
      raw[ti * grid + tj] = std::sqrt(var / (4.0 * d));
    }
  return minmax_normalize(std::move(raw));
}

std::vector<double> semantic_gain(const std::vector<Tensor>& tiles,
                                  const Tensor& lr_image, uint64_t labels,
                                  const OracleEncoders& enc, double lambda) {
  std::vector<double> gain(tiles.size(), 0.0);
  std::vector<int> concepts;
  for (int c = 0; c < enc.concept_count(); ++c)
    if ((labels >> c) & 1u) concepts.push_back(c);
  if (concepts.empty()) return gain;

  Tensor lr_tokens = enc.encode_lr(lr_image);
  std::vector<double> lr_sim(concepts.size());
  for (size_t i = 0; i < concepts.size(); ++i)
    lr_sim[i] = enc.shared_space_similarity(lr_tokens, concepts[i]);

  for (size_t p = 0; p < tiles.size(); ++p) {
    Tensor tokens = enc.encode_tile(tiles[p]);
    double best = 0.0;
    for (size_t i = 0; i < concepts.size(); ++i) {
      double s_h = enc.shared_space_similarity(tokens, concepts[i]);
      best = std::max(best, std::max(0.0, s_h - lambda * lr_sim[i]));
    }
    gain[p] = best;
  }
  return gain;
}

SupervisionMap build_supervision(const std::vector<double>& s_vis,
                                 const std::vector<double>& s_gain,
                                 SupervisionMode mode) {
  if (s_vis.size() != s_gain.size())
    throw std::invalid_argument("build_supervision: length mismatch " +
                                std::to_string(s_vis.size()) + " vs " +
                                std::to_string(s_gain.size()));
  SupervisionMap map;
  map.s_vis = s_vis;
  map.s_gain = s_gain;
  map.mode = mode;
  std::vector<double> raw(s_vis.size());
  switch (mode) {
    case SupervisionMode::kMultiplicative:
      for (size_t i = 0; i < raw.size(); ++i) raw[i] = s_vis[i] * s_gain[i];
      break;
    case SupervisionMode::kAdditive: {
      auto nv = minmax_normalize(s_vis);
      auto ng = minmax_normalize(s_gain);
      for (size_t i = 0; i < raw.size(); ++i) raw[i] = 0.5 * (nv[i] + ng[i]);
      break;
    }
    case SupervisionMode::kStructuralOnly:
      raw = s_vis;
      break;
    case SupervisionMode::kSemanticOnly:
      raw = s_gain;
      break;
  }
  double mx = raw.empty() ? 0.0 : *std::max_element(raw.begin(), raw.end());
  if (mx > 0.0)
    for (auto& v : raw) v /= mx;
  map.g_star = std::move(raw);
  return map;
}

SupervisionMap make_supervision(const Scene& scene, const OracleEncoders& enc,
                                SupervisionMode mode, double lambda) {
  const SceneSpec& spec = enc.spec();
  Tensor target = enc.encode_target(scene.hr_mosaic);
  std::vector<double> s_vis = structural_saliency(target, spec.grid);
  Tensor lr = downsample_lr(scene.hr_mosaic, spec.grid);
  std::vector<Tensor> tiles = tessellate(scene.hr_mosaic, spec.grid);
  std::vector<double> s_gain = semantic_gain(tiles, lr, scene.labels, enc, lambda);
  return build_supervision(s_vis, s_gain, mode);
}

SamplerParams::SamplerParams(const SceneSpec& spec, RngStream& rng) {
  int s = spec.lr_per_tile();
  auto init = [&](Shape shape, double std_dev) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (int i = 0; i < t.size(); ++i) t.data()[i] = std_dev * rng.normal();
    return t;
  };
  conv1_w = init({8, spec.channels, 3, 3}, 0.3);
  conv1_b = init({8}, 0.0);
  conv2_w = init({1, 8, s, s}, 0.3);
  conv2_b = init({1}, 0.0);
}

std::vector<Tensor> SamplerParams::all() { return {conv1_w, conv1_b, conv2_w, conv2_b}; }

int SamplerParams::parameter_count() const {
  return conv1_w.size() + conv1_b.size() + conv2_w.size() + conv2_b.size();
}

Tensor sampler_forward(const Tensor& lr_image, const SamplerParams& params,
                       const SceneSpec& spec) {
  const Shape& s = lr_image.shape();
  if (s.size() != 3 || s[0] != spec.channels || s[1] != spec.lr_px() || s[2] != spec.lr_px())
    throw ShapeError("sampler_forward: LR image " + shape_str(s) + " does not match spec");
  int stride = spec.lr_per_tile();
  Tensor h = tanh(conv2d(lr_image, params.conv1_w, params.conv1_b, 1, 1));
  Tensor m = conv2d(h, params.conv2_w, params.conv2_b, stride, 0);  // [1,G,G]
  return reshape(sigmoid(m), {spec.tiles()});
}

SamplerTrainResult train_sampler(const std::vector<Tensor>& lr_images,
                                 const std::vector<std::vector<double>>& g_star,
                                 const SceneSpec& spec, SamplerParams params,
                                 int epochs, double lr, RngStream& rng) {
  if (lr_images.empty()) throw std::invalid_argument("train_sampler: empty dataset");
  if (lr_images.size() != g_star.size())
    throw std::invalid_argument("train_sampler: dataset/supervision size mismatch");
  SamplerTrainResult result;
  result.params = params;
  auto param_list = result.params.all();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> order = rng.permutation(static_cast<int>(lr_images.size()));
    for (int idx : order) {
      Tensor target(Shape{spec.tiles()}, std::vector<double>(g_star[idx]));
      for (auto& p : param_list) p.zero_grad();
      Tape tape;
      Tensor scores = sampler_forward(lr_images[idx], result.params, spec);
      Tensor diff = subtract(scores, target);
      Tensor mse = mean_all(multiply(diff, diff));
      // Step on the tile-summed error so the per-tile signal does not shrink
      // with P; the trace reports plain MSE.
      Tensor loss = scale(mse, static_cast<double>(spec.tiles()));
      tape.backward(loss);
      result.loss_trace.push_back(mse.item());
      for (auto& p : param_list) {
        const auto& g = p.grad();
        for (int i = 0; i < p.size(); ++i) p.data()[i] -= lr * g[i];
      }
    }
  }
  return result;
}

SelectionPolicy SelectionPolicy::threshold(double tau) {
  SelectionPolicy p;
  p.kind = Kind::kThreshold;
  p.tau = tau;
  return p;
}

SelectionPolicy SelectionPolicy::top_b(int budget) {
  SelectionPolicy p;
  p.kind = Kind::kTopB;
  p.budget = budget;
  return p;
}

SelectionPolicy SelectionPolicy::random(double rate, RngStream& stream) {
  SelectionPolicy p;
  p.kind = Kind::kRandom;
  p.rate = rate;
  p.stream = &stream;
  return p;
}

SelectionPolicy SelectionPolicy::oracle_gstar(double tau) {
  SelectionPolicy p;
  p.kind = Kind::kOracleGstar;
  p.tau = tau;
  return p;
}

ObservationSet select(const std::vector<double>& scores, const SelectionPolicy& policy,
                      const std::vector<double>* oracle_scores, uint64_t scene_id) {
  int P = static_cast<int>(scores.size());
  ObservationSet out;
  out.policy_snapshot = policy;
  out.scene_id = scene_id;
  switch (policy.kind) {
    case SelectionPolicy::Kind::kThreshold: {
      if (policy.tau < 0.0 || policy.tau > 1.0)
        throw std::invalid_argument("select: tau outside [0,1]");
      for (int p = 0; p < P; ++p)
        if (scores[p] >= policy.tau) out.selected.push_back(p);
      break;
    }
    case SelectionPolicy::Kind::kTopB: {
      if (policy.budget < 0)
        throw std::invalid_argument("select: negative budget");
      // budget above P just selects everything
      std::vector<int> idx(P);
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;  // ties to the lower tile index
      });
      out.selected.assign(idx.begin(), idx.begin() + std::min(policy.budget, P));
      std::sort(out.selected.begin(), out.selected.end());
      break;
    }
    case SelectionPolicy::Kind::kRandom: {
      if (!policy.stream) throw std::invalid_argument("select: random policy needs a stream");
      for (int p = 0; p < P; ++p)
        if (policy.stream->bernoulli(policy.rate)) out.selected.push_back(p);
      break;
    }
    case SelectionPolicy::Kind::kOracleGstar: {
      if (policy.tau < 0.0 || policy.tau > 1.0)
        throw std::invalid_argument("select: tau outside [0,1]");
      if (!oracle_scores || oracle_scores->size() != static_cast<size_t>(P))
        throw std::invalid_argument("select: oracle policy needs g_star scores");
      for (int p = 0; p < P; ++p)
        if ((*oracle_scores)[p] >= policy.tau) out.selected.push_back(p);
      break;
    }
  }
  return out;
}

double calibrate_threshold(const std::vector<std::vector<double>>& score_sets,
                           double target_obr) {
  if (score_sets.empty())
    throw std::invalid_argument("calibrate_threshold: empty calibration set");
  if (target_obr < 0.0 || target_obr > 1.0)
    throw std::invalid_argument("calibrate_threshold: target outside [0,1]");
  std::set<double> candidates = {0.0, 1.0};
  for (const auto& scores : score_sets)
    for (double s : scores) candidates.insert(s);
  auto mean_obr = [&](double tau) {
    double acc = 0.0;
    for (const auto& scores : score_sets) {
      int sel = 0;
      for (double s : scores)
        if (s >= tau) ++sel;
      acc += static_cast<double>(sel) / static_cast<double>(scores.size());
    }
    return acc / score_sets.size();
  };
  // OBR is nonincreasing in tau, so the smallest admissible candidate is the
  // first one (in ascending order) whose realized OBR is within target.
  for (double tau : candidates)
    if (mean_obr(tau) <= target_obr) return tau;
  return 1.0;
}

}  // namespace cxs
