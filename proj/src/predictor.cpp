#include "cxs/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace cxs {

PredictorVariant predictor_variant_from_string(const std::string& s) {
  if (s == "full") return PredictorVariant::kFull;
  if (s == "no_predictor") return PredictorVariant::kNoPredictor;
  if (s == "direct_lr_fill") return PredictorVariant::kDirectLrFill;
  if (s == "no_lr_context") return PredictorVariant::kNoLrContext;
  throw std::invalid_argument("unknown predictor variant '" + s + "'");
}

std::string to_string(PredictorVariant variant) {
  switch (variant) {
    case PredictorVariant::kFull: return "full";
    case PredictorVariant::kNoPredictor: return "no_predictor";
    case PredictorVariant::kDirectLrFill: return "direct_lr_fill";
    case PredictorVariant::kNoLrContext: return "no_lr_context";
  }
  return "?";
}

PredictorParams::PredictorParams(const PredictorConfig& cfg, RngStream& rng) {
  config = cfg;
  int d = cfg.dim;
  auto init = [&](Shape shape, double std_dev) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (int i = 0; i < t.size(); ++i) t.data()[i] = std_dev * rng.normal();
    return t;
  };
  double ws = 1.0 / std::sqrt(static_cast<double>(d));
  mask_embed = init({d}, 0.02);
  e_tile = init({cfg.grid, cfg.grid, d}, 0.02);
  e_hr = init({2 * cfg.grid, 2 * cfg.grid, d}, 0.02);
  null_token = init({1, d}, 0.02);
  e_lr = init({cfg.lr_tokens, d}, 0.02);
  blocks.resize(cfg.blocks);
  for (auto& b : blocks) {
    b.wq = init({d, d}, ws);
    b.wk = init({d, d}, ws);
    b.wv = init({d, d}, ws);
    // Residual branch outputs start small so the stack begins near the
    // identity and observed tokens pass through uncorrupted.
    b.wo = init({d, d}, 0.05 * ws);
    b.ff_w1 = init({d, 2 * d}, ws);
    b.ff_b1 = init({2 * d}, 0.0);
    b.ff_w2 = init({2 * d, d}, 0.05 / std::sqrt(2.0 * d));
    b.ff_b2 = init({d}, 0.0);
    b.ln1_g = Tensor::full({d}, 1.0, true);
    b.ln1_b = Tensor::zeros({d}, true);
    b.ln2_g = Tensor::full({d}, 1.0, true);
    b.ln2_b = Tensor::zeros({d}, true);
  }
}

std::vector<Tensor> PredictorParams::all() {
  std::vector<Tensor> out = {mask_embed, e_tile, e_hr, null_token, e_lr};
  for (auto& b : blocks)
    for (auto* t : {&b.wq, &b.wk, &b.wv, &b.wo, &b.ff_w1, &b.ff_b1, &b.ff_w2,
                    &b.ff_b2, &b.ln1_g, &b.ln1_b, &b.ln2_g, &b.ln2_b})
      out.push_back(*t);
  return out;
}

std::vector<std::pair<std::string, Tensor>> PredictorParams::named() {
  std::vector<std::pair<std::string, Tensor>> out = {
      {"mask_embed", mask_embed}, {"e_tile", e_tile}, {"e_hr", e_hr},
      {"null_token", null_token}, {"e_lr", e_lr}};
  for (size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    std::string p = "block" + std::to_string(i) + ".";
    out.emplace_back(p + "wq", b.wq);
    out.emplace_back(p + "wk", b.wk);
    out.emplace_back(p + "wv", b.wv);
    out.emplace_back(p + "wo", b.wo);
    out.emplace_back(p + "ff_w1", b.ff_w1);
    out.emplace_back(p + "ff_b1", b.ff_b1);
    out.emplace_back(p + "ff_w2", b.ff_w2);
    out.emplace_back(p + "ff_b2", b.ff_b2);
    out.emplace_back(p + "ln1_g", b.ln1_g);
    out.emplace_back(p + "ln1_b", b.ln1_b);
    out.emplace_back(p + "ln2_g", b.ln2_g);
    out.emplace_back(p + "ln2_b", b.ln2_b);
  }
  return out;
}

int PredictorParams::parameter_count() const {
  int n = 0;
  auto self = const_cast<PredictorParams*>(this);
  for (auto& t : self->all()) n += t.size();
  return n;
}

namespace {

void check_observed(const std::vector<ObservedTile>& observed, int grid, int d) {
  std::set<int> seen;
  for (const auto& o : observed) {
    if (o.tile < 0 || o.tile >= grid * grid)
      throw std::out_of_range("rasterize: tile index " + std::to_string(o.tile) +
                              " out of range");
    if (!seen.insert(o.tile).second)
      throw std::invalid_argument("rasterize: duplicate tile index " +
                                  std::to_string(o.tile));
    const Shape& s = o.tokens.shape();
    if (s.size() != 3 || s[0] != 2 || s[1] != 2 || s[2] != d)
      throw ShapeError("rasterize: tile tokens " + shape_str(s) + " must be [2,2," +
                       std::to_string(d) + "]");
  }
}

/// Scatter of observed tokens over a mask-embedding background. Custom tape
/// node: only mask positions route gradient to the mask embedding; observed
/// tokens are constants.
Tensor scatter_observed(const std::vector<ObservedTile>& observed,
                        const Tensor& mask_embed, int grid) {
  int d = mask_embed.shape()[0];
  int side = 2 * grid;
  std::vector<double> out(static_cast<size_t>(side) * side * d);
  for (int i = 0; i < side * side; ++i)
    for (int k = 0; k < d; ++k) out[i * d + k] = mask_embed.data()[k];
  std::vector<char> is_observed(static_cast<size_t>(side) * side, 0);
  for (const auto& o : observed) {
    int ti = o.tile / grid, tj = o.tile % grid;
    for (int u = 0; u < 2; ++u)
      for (int v = 0; v < 2; ++v) {
        int pos = (2 * ti + u) * side + 2 * tj + v;
        is_observed[pos] = 1;
        for (int k = 0; k < d; ++k)
          out[pos * d + k] = o.tokens.data()[(u * 2 + v) * d + k];
      }
  }
  bool tr = Tape::active() && mask_embed.requires_grad();
  Tensor y({side, side, d}, std::move(out), tr);
  if (tr) {
    Tensor me = mask_embed;
    Tape::active()->record([me, y, is_observed, side, d]() mutable {
      const auto& g = y.grad();
      auto& gm = me.grad();
      for (int i = 0; i < side * side; ++i) {
        if (is_observed[i]) continue;
        for (int k = 0; k < d; ++k) gm[k] += g[i * d + k];
      }
    });
  }
  return y;
}

}  // namespace

Tensor rasterize(const std::vector<ObservedTile>& observed, const PredictorParams& params) {
  int grid = params.config.grid, d = params.config.dim;
  check_observed(observed, grid, d);
  Tensor grid_tokens = scatter_observed(observed, params.mask_embed, grid);
  Tensor tile_pos = nearest_upsample_2x(params.e_tile);  // broadcast per tile block
  return add(add(grid_tokens, tile_pos), params.e_hr);
}

namespace {

Tensor run_blocks(Tensor x, const Tensor& context, const PredictorParams& params) {
  int d = params.config.dim;
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (const auto& b : params.blocks) {
    Tensor xn = add_rowvec(mul_rowvec(norm_rows(x), b.ln1_g), b.ln1_b);
    Tensor q = matmul(xn, b.wq);
    Tensor k = matmul(context, b.wk);
    Tensor v = matmul(context, b.wv);
    Tensor attn = row_softmax(scale(matmul(q, transpose(k)), inv_sqrt_d));
    x = add(x, matmul(matmul(attn, v), b.wo));
    Tensor x2 = add_rowvec(mul_rowvec(norm_rows(x), b.ln2_g), b.ln2_b);
    Tensor h = tanh(add_rowvec(matmul(x2, b.ff_w1), b.ff_b1));
    x = add(x, add_rowvec(matmul(h, b.ff_w2), b.ff_b2));
  }
  return x;
}

std::vector<double> pool_tokens(const Tensor& grid_tokens) {
  int d = grid_tokens.shape().back();
  int tokens = grid_tokens.size() / d;
  std::vector<double> pooled(d, 0.0);
  for (int t = 0; t < tokens; ++t)
    for (int k = 0; k < d; ++k) pooled[k] += grid_tokens.data()[t * d + k];
  for (auto& v : pooled) v /= tokens;
  return pooled;
}

Tensor flatten_lr_context(const Tensor& lr_tokens, int d) {
  const Shape& s = lr_tokens.shape();
  if (s.back() != d)
    throw ShapeError("predict: LR token dim " + shape_str(s) + " does not match d=" +
                     std::to_string(d));
  int n = lr_tokens.size() / d;
  return reshape(lr_tokens, {n, d});
}

}  // namespace

CompletedRepresentation predict(const std::vector<ObservedTile>& observed,
                                const Tensor& lr_tokens, const PredictorParams& params) {
  int grid = params.config.grid, d = params.config.dim;
  Tensor sparse = rasterize(observed, params);
  Tensor bottleneck = avg_pool_2x2(sparse);  // [G, G, d]
  Tensor x = reshape(bottleneck, {grid * grid, d});
  // The LR encoder is position-blind, so the context carries its own learned
  // positional embedding; without it queries cannot attend to their region.
  Tensor context = add(flatten_lr_context(lr_tokens, d), params.e_lr);
  x = run_blocks(std::move(x), context, params);
  Tensor out = nearest_upsample_2x(reshape(x, {grid, grid, d}));
  CompletedRepresentation rep;
  rep.h_tilde = out;
  rep.pooled = pool_tokens(out);
  return rep;
}

CompletedRepresentation predict_variant(const std::vector<ObservedTile>& observed,
                                        const Tensor& lr_tokens,
                                        const PredictorParams& params,
                                        PredictorVariant variant) {
  int grid = params.config.grid, d = params.config.dim;
  switch (variant) {
    case PredictorVariant::kFull:
      return predict(observed, lr_tokens, params);
    case PredictorVariant::kNoLrContext: {
      Tensor sparse = rasterize(observed, params);
      Tensor x = reshape(avg_pool_2x2(sparse), {grid * grid, d});
      x = run_blocks(std::move(x), params.null_token, params);
      Tensor out = nearest_upsample_2x(reshape(x, {grid, grid, d}));
      CompletedRepresentation rep;
      rep.h_tilde = out;
      rep.pooled = pool_tokens(out);
      return rep;
    }
    case PredictorVariant::kNoPredictor: {
      // Rasterized grid with every mask position overwritten by the global
      // LR-token mean; observed blocks keep their rasterized values.
      Tensor out = rasterize(observed, params);
      std::vector<double> lr_mean = pool_tokens(lr_tokens);
      int side = 2 * grid;
      std::vector<char> is_observed(static_cast<size_t>(side) * side, 0);
      for (const auto& o : observed) {
        int ti = o.tile / grid, tj = o.tile % grid;
        for (int u = 0; u < 2; ++u)
          for (int v = 0; v < 2; ++v) is_observed[(2 * ti + u) * side + 2 * tj + v] = 1;
      }
      for (int i = 0; i < side * side; ++i) {
        if (is_observed[i]) continue;
        for (int k = 0; k < d; ++k) out.data()[i * d + k] = lr_mean[k];
      }
      CompletedRepresentation rep;
      rep.h_tilde = out;
      rep.pooled = pool_tokens(out);
      return rep;
    }
    case PredictorVariant::kDirectLrFill: {
      // Rasterized grid with mask positions overwritten by the nearest LR
      // token, passed through a frozen identity-initialized d->d projection
      // (a no-op by construction).
      Tensor out = rasterize(observed, params);
      const Shape& ls = lr_tokens.shape();
      int side = 2 * grid;
      std::vector<char> is_observed(static_cast<size_t>(side) * side, 0);
      for (const auto& o : observed) {
        int ti = o.tile / grid, tj = o.tile % grid;
        for (int u = 0; u < 2; ++u)
          for (int v = 0; v < 2; ++v) is_observed[(2 * ti + u) * side + 2 * tj + v] = 1;
      }
      int lh = ls[0], lw = ls[1];
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
          if (is_observed[i * side + j]) continue;
          int li = std::min(i * lh / side, lh - 1);
          int lj = std::min(j * lw / side, lw - 1);
          for (int k = 0; k < d; ++k)
            out.data()[(i * side + j) * d + k] = lr_tokens.data()[(li * lw + lj) * d + k];
        }
      CompletedRepresentation rep;
      rep.h_tilde = out;
      rep.pooled = pool_tokens(out);
      return rep;
    }
  }
  throw std::invalid_argument("predict_variant: unknown variant");
}

void RunningMean::update(const Tensor& target_tokens) {
  int d = static_cast<int>(mu.size());
  if (target_tokens.shape().back() != d)
    throw ShapeError("running mean: token dim mismatch");
  std::vector<double> batch_mean(d, 0.0);
  int tokens = target_tokens.size() / d;
  for (int t = 0; t < tokens; ++t)
    for (int k = 0; k < d; ++k) batch_mean[k] += target_tokens.data()[t * d + k];
  for (int k = 0; k < d; ++k)
    mu[k] = momentum * mu[k] + (1.0 - momentum) * batch_mean[k] / tokens;
}

Tensor loss_rep(const Tensor& h_tilde, const Tensor& h_star,
                const std::vector<double>& mu) {
  if (h_tilde.shape() != h_star.shape())
    throw ShapeError("loss_rep: grid mismatch " + shape_str(h_tilde.shape()) + " vs " +
                     shape_str(h_star.shape()));
  int d = h_tilde.shape().back();
  if (static_cast<int>(mu.size()) != d) throw ShapeError("loss_rep: mu length mismatch");
  int tokens = h_tilde.size() / d;

  std::vector<double> neg_mu(mu);
  for (auto& v : neg_mu) v = -v;
  Tensor neg_mu_t(Shape{d}, std::move(neg_mu));

  std::vector<double> star_centered(h_star.size());
  for (int t = 0; t < tokens; ++t)
    for (int k = 0; k < d; ++k)
      star_centered[t * d + k] = h_star.data()[t * d + k] - mu[k];
  Tensor star(Shape{tokens, d}, std::move(star_centered));  // constant: stop-gradient

  Tensor pred = add_rowvec(reshape(h_tilde, {tokens, d}), neg_mu_t);
  Tensor sims = cosine_similarity(pred, star);
  return add(Tensor::scalar(1.0), scale(mean_all(sims), -1.0));
}

double token_variance(const Tensor& tokens) {
  int d = tokens.shape().back();
  int n = tokens.size() / d;
  double total = 0.0;
  for (int k = 0; k < d; ++k) {
    double mean = 0.0;
    for (int t = 0; t < n; ++t) mean += tokens.data()[t * d + k];
    mean /= n;
    double var = 0.0;
    for (int t = 0; t < n; ++t) {
      double x = tokens.data()[t * d + k] - mean;
      var += x * x;
    }
    total += var / n;
  }
  return total / d;
}

Tensor EncodedScene::tile_tokens(int tile, int grid) const {
  int d = target_tokens.shape().back();
  int side = 2 * grid;
  int ti = tile / grid, tj = tile % grid;
  Tensor out = Tensor::zeros({2, 2, d});
  for (int u = 0; u < 2; ++u)
    for (int v = 0; v < 2; ++v)
      for (int k = 0; k < d; ++k)
        out.data()[(u * 2 + v) * d + k] =
            target_tokens.data()[((2 * ti + u) * side + 2 * tj + v) * d + k];
  return out;
}

std::vector<ObservedTile> gather_observed(const EncodedScene& scene, int grid,
                                          const std::vector<int>& selected) {
  std::vector<ObservedTile> out;
  out.reserve(selected.size());
  for (int p : selected) out.push_back({p, scene.tile_tokens(p, grid)});
  return out;
}

Stage1Result train_stage1(const std::vector<EncodedScene>& scenes,
                          PredictorParams params, int epochs, double lr,
                          RngStream& rng, PredictorVariant variant,
                          RunningMean* mean_state) {
  if (scenes.empty()) throw std::invalid_argument("train_stage1: empty dataset");
  if (variant != PredictorVariant::kFull && variant != PredictorVariant::kNoLrContext)
    throw std::invalid_argument("train_stage1: variant has no trainable predictor");
  Stage1Result result;
  result.params = params;
  auto param_list = result.params.all();
  int grid = params.config.grid;
  int P = grid * grid;
  RunningMean local_mean(params.config.dim);
  RunningMean& mean = mean_state ? *mean_state : local_mean;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> order = rng.permutation(static_cast<int>(scenes.size()));
    double loss_acc = 0.0, var_pred = 0.0, var_star = 0.0;
    for (int idx : order) {
      const EncodedScene& scene = scenes[idx];
      double mask_rate = rng.uniform01();
      std::vector<int> selected;
      for (int p = 0; p < P; ++p)
        if (rng.bernoulli(mask_rate)) selected.push_back(p);
      auto observed = gather_observed(scene, grid, selected);

      mean.update(scene.target_tokens);
      for (auto& p : param_list) p.zero_grad();
      Tape tape;
      CompletedRepresentation rep =
          predict_variant(observed, scene.lr_tokens, result.params, variant);
      Tensor loss = loss_rep(rep.h_tilde, scene.target_tokens, mean.mu);
      tape.backward(loss);
      loss_acc += loss.item();
      var_pred += token_variance(rep.h_tilde);
      var_star += token_variance(scene.target_tokens);
      for (auto& p : param_list) {
        const auto& g = p.grad();
        for (int i = 0; i < p.size(); ++i) p.data()[i] -= lr * g[i];
      }
    }
    result.epoch_loss.push_back(loss_acc / scenes.size());
    result.epoch_var_ratio.push_back(var_star > 0 ? var_pred / var_star : 0.0);
  }
  return result;
}

}  // namespace cxs
