#include <cmath>
#include <stdexcept>

#include "cxs/alignment.hpp"
#include "cxs/encoders.hpp"
#include "cxs/gradcheck.hpp"
#include "cxs/pipeline.hpp"
#include "cxs/predictor.hpp"
#include "cxs/sampler.hpp"
#include "cxs/scene.hpp"

namespace cxs {

namespace {

Tensor randn(Shape shape, RngStream& rng, bool requires_grad, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
  return t;
}

/// Scalarizes an arbitrary output with fixed random weights so every output
/// entry contributes a distinct gradient path.
Tensor weighted_sum(const Tensor& y, const Tensor& weights) {
  return mean_all(multiply(y, weights));
}

double check_primitive(const std::string& op, RngStream& rng) {
  PrimitiveAttrs attrs;
  std::vector<Tensor> inputs;
  if (op == "add" || op == "subtract" || op == "multiply" ||
      op == "cosine-similarity") {
    inputs = {randn({3, 4}, rng, true), randn({3, 4}, rng, true)};
  } else if (op == "scale") {
    attrs.value = -1.7;
    inputs = {randn({3, 4}, rng, true)};
  } else if (op == "matmul") {
    inputs = {randn({3, 4}, rng, true), randn({4, 2}, rng, true)};
  } else if (op == "transpose" || op == "row-softmax" || op == "tanh" ||
             op == "sigmoid" || op == "log-sigmoid" || op == "l2-normalize" ||
             op == "mean-all") {
    inputs = {randn({3, 4}, rng, true)};
  } else if (op == "exp") {
    inputs = {randn({3, 4}, rng, true, 0.5)};
  } else if (op == "reshape") {
    attrs.shape = {2, 6};
    inputs = {randn({3, 4}, rng, true)};
  } else if (op == "concat") {
    attrs.axis = 0;
    inputs = {randn({2, 3}, rng, true), randn({2, 3}, rng, true)};
  } else if (op == "slice") {
    attrs.axis = 1;
    attrs.start = 1;
    attrs.len = 2;
    inputs = {randn({3, 4}, rng, true)};
  } else if (op == "mean-axis" || op == "var-axis") {
    attrs.axis = 1;
    inputs = {randn({3, 4}, rng, true)};
  } else if (op == "avg-pool-2x2") {
    inputs = {randn({4, 4, 3}, rng, true)};
  } else if (op == "nearest-upsample-2x") {
    inputs = {randn({2, 3, 2}, rng, true)};
  } else if (op == "conv2d") {
    attrs.stride = 1;
    attrs.pad = 1;
    inputs = {randn({2, 5, 5}, rng, true), randn({3, 2, 3, 3}, rng, true),
              randn({3}, rng, true)};
  } else if (op == "norm-rows") {
    inputs = {randn({3, 4}, rng, true)};
  } else if (op == "mul-rowvec" || op == "add-rowvec") {
    inputs = {randn({3, 4}, rng, true), randn({4}, rng, true)};
  } else if (op == "scalar-mul" || op == "scalar-add") {
    inputs = {randn({3, 4}, rng, true), randn({1}, rng, true)};
  } else {
    throw std::invalid_argument("gradient suite: no case for primitive '" + op + "'");
  }

  Tensor probe = apply_primitive(op, inputs, attrs);
  Tensor weights = randn(probe.shape(), rng, false);
  auto builder = [op, inputs, attrs, weights]() {
    return weighted_sum(apply_primitive(op, inputs, attrs), weights);
  };
  return finite_difference_check(builder, inputs);
}

double check_loss_rep(RngStream& rng) {
  Tensor h_tilde = randn({4, 4, 3}, rng, true);
  Tensor h_star = randn({4, 4, 3}, rng, false);
  std::vector<double> mu = {0.1, -0.2, 0.05};
  std::vector<Tensor> params = {h_tilde};
  auto builder = [h_tilde, h_star, mu]() { return loss_rep(h_tilde, h_star, mu); };
  return finite_difference_check(builder, params);
}

double check_loss_siglip(RngStream& rng) {
  int k = 3, d = 4;
  AlignHead head(d, d, rng);
  // Move off the saturated init point so gradients are O(1).
  head.log_tau.data()[0] = 0.3;
  head.bias.data()[0] = -0.5;
  Tensor pooled = randn({k, d}, rng, false);
  Tensor texts = l2_normalize(randn({k, d}, rng, false));
  std::vector<std::vector<int>> match = {{1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  auto params = head.all();
  auto builder = [pooled, texts, match, head]() {
    return loss_siglip(project_to_shared(pooled, head), texts, match, head);
  };
  return finite_difference_check(builder, params);
}

double check_sampler_loss(RngStream& rng) {
  SceneSpec spec;
  spec.grid = 2;
  spec.tile_px = 8;
  SamplerParams params(spec, rng);
  Tensor lr = randn({spec.channels, spec.lr_px(), spec.lr_px()}, rng, false);
  Tensor target = randn({spec.tiles()}, rng, false, 0.3);
  auto plist = params.all();
  auto builder = [lr, target, params, spec]() {
    Tensor diff = subtract(sampler_forward(lr, params, spec), target);
    return mean_all(multiply(diff, diff));
  };
  return finite_difference_check(builder, plist);
}

double check_stage1_loss(RngStream& rng) {
  SceneSpec spec;
  spec.grid = 2;
  spec.tile_px = 8;
  spec.concepts = 4;
  OracleEncoders enc(spec, 7, 4);
  Scene scene = generate_scene(spec, rng);
  EncodedScene es;
  es.labels = scene.labels;
  es.lr_image = downsample_lr(scene.hr_mosaic, spec.grid);
  es.target_tokens = enc.encode_target(scene.hr_mosaic);
  es.lr_tokens = enc.encode_lr(es.lr_image);

  PredictorConfig pc;
  pc.grid = spec.grid;
  pc.dim = 4;
  pc.blocks = 2;
  pc.lr_tokens = enc.lr_tokens_side() * enc.lr_tokens_side();
  PredictorParams params(pc, rng);
  std::vector<int> selected = {0, 3};
  auto observed = gather_observed(es, spec.grid, selected);
  std::vector<double> mu = {0.05, -0.1, 0.02, 0.0};

  auto plist = params.all();
  auto builder = [observed, es, params, mu]() {
    CompletedRepresentation rep = predict(observed, es.lr_tokens, params);
    return loss_rep(rep.h_tilde, es.target_tokens, mu);
  };
  return finite_difference_check(builder, plist);
}

}  // namespace

double run_gradient_suite(const SuiteReporter& report, uint64_t seed) {
  double worst = 0.0;
  auto note = [&](const std::string& name, double err) {
    worst = std::max(worst, err);
    if (report) report(name, err);
  };
  uint64_t stream = 1000;
  for (const auto& op : primitive_catalog()) {
    RngStream rng(seed, stream++);
    note("primitive/" + op, check_primitive(op, rng));
  }
  {
    RngStream rng(seed, stream++);
    note("loss_rep", check_loss_rep(rng));
  }
  {
    RngStream rng(seed, stream++);
    note("loss_siglip", check_loss_siglip(rng));
  }
  {
    RngStream rng(seed, stream++);
    note("sampler_mse", check_sampler_loss(rng));
  }
  {
    RngStream rng(seed, stream++);
    note("stage1_full", check_stage1_loss(rng));
  }
  return worst;
}

}  // namespace cxs
