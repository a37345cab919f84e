#include "cxs/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cxs {

AlignHead::AlignHead(int dim, int dim_t, RngStream& rng) {
  projection = Tensor::zeros({dim, dim_t}, true);
  double ws = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int i = 0; i < projection.size(); ++i) projection.data()[i] = ws * rng.normal();
  log_tau = Tensor::scalar(std::log(10.0), true);
  bias = Tensor::scalar(-10.0, true);
}

std::vector<Tensor> AlignHead::all() { return {projection, log_tau, bias}; }

std::vector<std::pair<std::string, Tensor>> AlignHead::named() {
  return {{"projection", projection}, {"log_tau", log_tau}, {"bias", bias}};
}

Tensor pool_representation(const Tensor& h_tilde) {
  int d = h_tilde.shape().back();
  int tokens = h_tilde.size() / d;
  Tensor ones(Shape{1, tokens}, std::vector<double>(tokens, 1.0 / tokens));
  return matmul(ones, reshape(h_tilde, {tokens, d}));
}

Tensor project_to_shared(const Tensor& pooled_rows, const AlignHead& head) {
  return l2_normalize(matmul(pooled_rows, head.projection));
}

Tensor loss_siglip(const Tensor& z_rows, const Tensor& text_rows,
                   const std::vector<std::vector<int>>& match, const AlignHead& head) {
  int k_img = z_rows.shape()[0];
  int k_txt = text_rows.shape()[0];
  if (static_cast<int>(match.size()) != k_img)
    throw std::invalid_argument("loss_siglip: match rows != image count");
  std::vector<double> y(static_cast<size_t>(k_img) * k_txt);
  for (int i = 0; i < k_img; ++i) {
    if (static_cast<int>(match[i].size()) != k_txt)
      throw std::invalid_argument("loss_siglip: match cols != text count");
    for (int j = 0; j < k_txt; ++j) {
      if (match[i][j] != 1 && match[i][j] != -1)
        throw std::invalid_argument("loss_siglip: match entries must be +1 or -1");
      y[i * k_txt + j] = match[i][j];
    }
  }
  Tensor y_t(Shape{k_img, k_txt}, std::move(y));
  Tensor logits = matmul(z_rows, transpose(text_rows));
  Tensor inv_tau = exp(scale(head.log_tau, -1.0));
  Tensor shifted = scalar_add(scalar_mul(logits, inv_tau), head.bias);
  return scale(mean_all(log_sigmoid(multiply(shifted, y_t))), -1.0);
}

std::vector<std::pair<int, double>> zero_shot_classify(const std::vector<double>& shared_vec,
                                                       const OracleEncoders& enc) {
  std::vector<std::pair<int, double>> ranked;
  ranked.reserve(enc.concept_count());
  for (int c = 0; c < enc.concept_count(); ++c) {
    const auto& f = enc.concept_embedding(c);
    double dot = 0.0, nv = 0.0, nf = 0.0;
    for (size_t i = 0; i < f.size(); ++i) {
      dot += shared_vec[i] * f[i];
      nv += shared_vec[i] * shared_vec[i];
      nf += f[i] * f[i];
    }
    double denom = std::sqrt(nv) * std::sqrt(nf);
    ranked.emplace_back(c, denom < 1e-12 ? 0.0 : dot / denom);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return ranked;
}

std::vector<std::pair<int, double>> classify_pooled(const std::vector<double>& pooled,
                                                    const AlignHead& head,
                                                    const OracleEncoders& enc) {
  int d = head.projection.shape()[0], dt = head.projection.shape()[1];
  if (static_cast<int>(pooled.size()) != d)
    throw std::invalid_argument("classify_pooled: pooled dim mismatch");
  std::vector<double> z(dt, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < dt; ++j) z[j] += pooled[i] * head.projection.data()[i * dt + j];
  return zero_shot_classify(z, enc);
}

namespace {

std::vector<int> label_bits(uint64_t labels) {
  std::vector<int> out;
  for (int c = 0; c < 64; ++c)
    if (labels >> c & 1) out.push_back(c);
  return out;
}

struct Batch {
  Tensor texts;                         // [K, d_t]
  std::vector<std::vector<int>> match;  // K x K
};

Batch draw_texts(const std::vector<int>& idx, const std::vector<uint64_t>& labels,
                 const OracleEncoders& enc, RngStream& rng) {
  int k = static_cast<int>(idx.size());
  int dt = static_cast<int>(enc.concept_embedding(0).size());
  Batch b;
  std::vector<double> text(static_cast<size_t>(k) * dt);
  std::vector<int> drawn(k);
  for (int j = 0; j < k; ++j) {
    std::vector<int> bits = label_bits(labels[idx[j]]);
    if (bits.empty()) throw std::invalid_argument("stage II: scene with no labels");
    drawn[j] = bits[rng.uniform_int(static_cast<int>(bits.size()))];
    const auto& f = enc.concept_embedding(drawn[j]);
    std::copy(f.begin(), f.end(), text.begin() + static_cast<size_t>(j) * dt);
  }
  b.texts = Tensor(Shape{k, dt}, std::move(text));
  b.match.assign(k, std::vector<int>(k, -1));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (labels[idx[i]] >> drawn[j] & 1) b.match[i][j] = 1;
  return b;
}

void sgd_step(std::vector<Tensor>& params, double lr) {
  for (auto& p : params) {
    const auto& g = p.grad();
    for (int i = 0; i < p.size(); ++i) p.data()[i] -= lr * g[i];
  }
}

}  // namespace

Stage2Result train_stage2(const std::vector<std::vector<double>>& pooled,
                          const std::vector<uint64_t>& labels,
                          const OracleEncoders& enc, AlignHead head, int epochs,
                          double lr, int batch, RngStream& rng) {
  if (pooled.empty()) throw std::invalid_argument("train_stage2: empty dataset");
  if (pooled.size() != labels.size())
    throw std::invalid_argument("train_stage2: pooled/label count mismatch");
  int n = static_cast<int>(pooled.size());
  int d = static_cast<int>(pooled[0].size());
  Stage2Result result;
  result.head = head;
  auto params = result.head.all();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> order = rng.permutation(n);
    double loss_acc = 0.0;
    int steps = 0;
    for (int start = 0; start < n; start += batch) {
      int k = std::min(batch, n - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + k);
      std::vector<double> rows(static_cast<size_t>(k) * d);
      for (int i = 0; i < k; ++i)
        std::copy(pooled[idx[i]].begin(), pooled[idx[i]].end(),
                  rows.begin() + static_cast<size_t>(i) * d);
      Batch b = draw_texts(idx, labels, enc, rng);
      for (auto& p : params) p.zero_grad();
      Tape tape;
      Tensor z = project_to_shared(Tensor(Shape{k, d}, std::move(rows)), result.head);
      Tensor loss = loss_siglip(z, b.texts, b.match, result.head);
      tape.backward(loss);
      loss_acc += loss.item();
      ++steps;
      sgd_step(params, lr);
    }
    result.epoch_loss.push_back(loss_acc / steps);
  }
  return result;
}

Stage2Result train_stage2_joint(const std::vector<EncodedScene>& scenes,
                                const std::vector<std::vector<int>>& selections,
                                PredictorParams& predictor, const OracleEncoders& enc,
                                AlignHead head, int epochs, double lr, int batch,
                                RngStream& rng) {
  if (scenes.empty()) throw std::invalid_argument("train_stage2: empty dataset");
  if (scenes.size() != selections.size())
    throw std::invalid_argument("train_stage2: selection count mismatch");
  int n = static_cast<int>(scenes.size());
  int grid = predictor.config.grid;
  Stage2Result result;
  result.head = head;
  auto head_params = result.head.all();
  auto pred_params = predictor.all();
  std::vector<uint64_t> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = scenes[i].labels;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> order = rng.permutation(n);
    double loss_acc = 0.0;
    int steps = 0;
    for (int start = 0; start < n; start += batch) {
      int k = std::min(batch, n - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + k);
      Batch b = draw_texts(idx, labels, enc, rng);
      for (auto& p : head_params) p.zero_grad();
      for (auto& p : pred_params) p.zero_grad();
      Tape tape;
      std::vector<Tensor> pooled_rows;
      pooled_rows.reserve(k);
      for (int i : idx) {
        auto observed = gather_observed(scenes[i], grid, selections[i]);
        CompletedRepresentation rep = predict(observed, scenes[i].lr_tokens, predictor);
        pooled_rows.push_back(pool_representation(rep.h_tilde));
      }
      Tensor z = project_to_shared(concat(pooled_rows, 0), result.head);
      Tensor loss = loss_siglip(z, b.texts, b.match, result.head);
      tape.backward(loss);
      loss_acc += loss.item();
      ++steps;
      sgd_step(head_params, lr);
      sgd_step(pred_params, lr);
    }
    result.epoch_loss.push_back(loss_acc / steps);
  }
  return result;
}

}  // namespace cxs
