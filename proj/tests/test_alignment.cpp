#include "doctest.h"

#include <cmath>
#include <vector>

#include "cxs/alignment.hpp"
#include "cxs/encoders.hpp"
#include "cxs/rng.hpp"
#include "cxs/tensor.hpp"

using namespace cxs;

namespace {

// Head with identity projection, tau = 1, b = 0: logits are raw dot products.
AlignHead plain_head(int d) {
  AlignHead head;
  Tensor proj = Tensor::zeros({d, d});
  for (int i = 0; i < d; ++i) proj.data()[i * d + i] = 1.0;
  head.projection = proj;
  head.log_tau = Tensor::scalar(0.0);
  head.bias = Tensor::scalar(0.0);
  return head;
}

Tensor unit_row(int d, int axis) {
  Tensor t = Tensor::zeros({1, d});
  t.data()[axis] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("head initialization: tau 10, bias -10") {
  RngStream rng(600, 0);
  AlignHead head(32, 32, rng);
  CHECK(std::exp(head.log_tau.item()) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(head.bias.item() == doctest::Approx(-10.0));
  CHECK(head.projection.shape() == Shape{32, 32});
}

TEST_CASE("pooling a constant grid returns the constant vector") {
  Tensor grid = Tensor::zeros({4, 4, 3});
  for (int t = 0; t < 16; ++t) {
    grid.data()[t * 3 + 0] = 1.5;
    grid.data()[t * 3 + 1] = -0.5;
    grid.data()[t * 3 + 2] = 2.0;
  }
  Tensor pooled = pool_representation(grid);
  REQUIRE(pooled.shape() == Shape{1, 3});
  CHECK(pooled.data()[0] == doctest::Approx(1.5));
  CHECK(pooled.data()[1] == doctest::Approx(-0.5));
  CHECK(pooled.data()[2] == doctest::Approx(2.0));
}

TEST_CASE("pooling is token-permutation invariant") {
  RngStream rng(601, 0);
  Tensor grid = Tensor::zeros({2, 2, 3});
  for (int i = 0; i < grid.size(); ++i) grid.data()[i] = rng.normal();
  Tensor a = pool_representation(grid);
  // swap token 0 and token 3
  Tensor swapped = Tensor::zeros({2, 2, 3});
  int map[4] = {3, 1, 2, 0};
  for (int t = 0; t < 4; ++t)
    for (int j = 0; j < 3; ++j)
      swapped.data()[t * 3 + j] = grid.data()[map[t] * 3 + j];
  Tensor b = pool_representation(swapped);
  for (int j = 0; j < 3; ++j) CHECK(a.data()[j] == doctest::Approx(b.data()[j]));
}

TEST_CASE("shared projection output is unit norm") {
  RngStream rng(602, 0);
  AlignHead head(8, 8, rng);
  Tensor rows = Tensor::zeros({3, 8});
  for (int i = 0; i < rows.size(); ++i) rows.data()[i] = rng.normal();
  Tensor z = project_to_shared(rows, head);
  REQUIRE(z.shape() == Shape{3, 8});
  for (int r = 0; r < 3; ++r) {
    double n = 0.0;
    for (int j = 0; j < 8; ++j) n += z.data()[r * 8 + j] * z.data()[r * 8 + j];
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-12);
  }
}

TEST_CASE("siglip loss at zero logit is ln 2 for either label") {
  const int d = 4;
  AlignHead head = plain_head(d);
  Tensor z = unit_row(d, 0);
  Tensor f = unit_row(d, 1);  // orthogonal: dot = 0, so logit = 0
  CHECK(loss_siglip(z, f, {{+1}}, head).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(loss_siglip(z, f, {{-1}}, head).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("siglip loss vanishes for confident correct logits") {
  const int d = 2;
  AlignHead head = plain_head(d);
  head.log_tau = Tensor::scalar(std::log(1e-3));  // logit = dot / tau, huge
  Tensor z = unit_row(d, 0);
  Tensor fpos = unit_row(d, 0);
  Tensor fneg = Tensor::zeros({1, d});
  fneg.data()[0] = -1.0;
  CHECK(loss_siglip(z, fpos, {{+1}}, head).item() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(loss_siglip(z, fneg, {{-1}}, head).item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("siglip loss matches the brute-force pair sum") {
  RngStream rng(603, 0);
  for (int trial = 0; trial < 20; ++trial) {
    int K = 1 + rng.uniform_int(8);
    int d = 3 + rng.uniform_int(6);
    Tensor z = Tensor::zeros({K, d});
    Tensor f = Tensor::zeros({K, d});
    for (int i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    for (int i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    z = l2_normalize(z);
    f = l2_normalize(f);
    std::vector<std::vector<int>> match(K, std::vector<int>(K));
    for (auto& row : match)
      for (auto& y : row) y = rng.bernoulli(0.4) ? 1 : -1;

    RngStream hr(604, trial);
    AlignHead head(d, d, hr);
    double got = loss_siglip(z, f, match, head).item();

    double tau = std::exp(head.log_tau.item());
    double b = head.bias.item();
    double expect = 0.0;
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j) {
        double dot = 0.0;
        for (int k = 0; k < d; ++k) dot += z.data()[i * d + k] * f.data()[j * d + k];
        double x = match[i][j] * (dot / tau + b);
        // stable log(sigmoid(x))
        double ls = x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
        expect -= ls;
      }
    expect /= static_cast<double>(K) * K;
    CHECK(std::abs(got - expect) < 1e-10);
  }
}

TEST_CASE("matched logits pull the loss down, unmatched push it up") {
  const int d = 3;
  AlignHead head = plain_head(d);
  Tensor f = unit_row(d, 0);
  auto loss_at = [&](double dot, int y) {
    Tensor z = Tensor::zeros({1, d});
    z.data()[0] = dot;
    return loss_siglip(z, f, {{y}}, head).item();
  };
  CHECK(loss_at(0.9, +1) < loss_at(0.1, +1));
  CHECK(loss_at(0.9, -1) > loss_at(0.1, -1));
}

TEST_CASE("siglip rejects invalid match entries") {
  AlignHead head = plain_head(2);
  Tensor z = unit_row(2, 0);
  CHECK_THROWS_AS(loss_siglip(z, z, {{0}}, head), std::invalid_argument);
}

TEST_CASE("zero-shot ranking of a concept embedding is exact") {
  OracleEncoders enc(SceneSpec{}, 7, 32);
  for (int c : {0, 3, 7}) {
    auto ranked = zero_shot_classify(enc.concept_embedding(c), enc);
    REQUIRE((int)ranked.size() == enc.concept_count());
    CHECK(ranked[0].first == c);
    CHECK(ranked[0].second == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> neg = enc.concept_embedding(c);
    for (auto& v : neg) v = -v;
    auto ranked_neg = zero_shot_classify(neg, enc);
    bool found = false;
    for (auto& [id, score] : ranked_neg)
      if (id == c) {
        found = true;
        CHECK(score == doctest::Approx(-1.0).epsilon(1e-12));
      }
    CHECK(found);
  }
}

TEST_CASE("zero-shot ranking ignores positive rescaling") {
  OracleEncoders enc(SceneSpec{}, 7, 32);
  RngStream rng(610, 0);
  std::vector<double> v(32);
  for (auto& x : v) x = rng.normal();
  auto a = zero_shot_classify(v, enc);
  for (auto& x : v) x *= 37.5;
  auto b = zero_shot_classify(v, enc);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].first == b[i].first);
}

TEST_CASE("stage-II training decreases the loss and is deterministic") {
  SceneSpec spec;
  OracleEncoders enc(spec, 7, 32);
  RngStream rng(620, 0);
  // pooled vectors = noisy copies of each scene's concept embedding
  const int n = 48;
  std::vector<std::vector<double>> pooled(n);
  std::vector<uint64_t> labels(n);
  for (int i = 0; i < n; ++i) {
    int c = rng.uniform_int(enc.concept_count());
    labels[i] = 1ull << c;
    pooled[i] = enc.concept_embedding(c);
    for (auto& v : pooled[i]) v += 0.25 * rng.normal();
  }

  auto run = [&] {
    RngStream hr(621, 0);
    AlignHead head(32, 32, hr);
    RngStream tr(622, 0);
    return train_stage2(pooled, labels, enc, head, 60, 0.5, 8, tr);
  };
  auto a = run();
  REQUIRE(!a.epoch_loss.empty());
  for (double l : a.epoch_loss) REQUIRE(std::isfinite(l));
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());

  auto b = run();
  for (int i = 0; i < a.head.projection.size(); ++i)
    CHECK(a.head.projection.data()[i] == b.head.projection.data()[i]);
  CHECK(a.head.log_tau.item() == b.head.log_tau.item());
  CHECK(a.head.bias.item() == b.head.bias.item());
}

TEST_CASE("classify_pooled agrees with manual projection") {
  OracleEncoders enc(SceneSpec{}, 7, 32);
  RngStream rng(630, 0);
  AlignHead head(32, 32, rng);
  std::vector<double> pooled(32);
  for (auto& v : pooled) v = rng.normal();

  auto ranked = classify_pooled(pooled, head, enc);
  REQUIRE((int)ranked.size() == enc.concept_count());
  // scores must be sorted descending with ties toward lower ids
  for (size_t i = 1; i < ranked.size(); ++i) {
    CHECK(ranked[i - 1].second >= ranked[i].second);
    if (ranked[i - 1].second == ranked[i].second)
      CHECK(ranked[i - 1].first < ranked[i].first);
  }
}
