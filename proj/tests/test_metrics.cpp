#include "doctest.h"

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "cxs/encoders.hpp"
#include "cxs/metrics.hpp"
#include "cxs/rng.hpp"
#include "cxs/scene.hpp"

using namespace cxs;

namespace {

CostModel two_tier_model(double area, double lr_cost) {
  CostModel m;
  m.area_total = area;
  m.cost_per_unit_area = {{"hr", 1.0}, {"lr", lr_cost}};
  m.r_max = "hr";
  return m;
}

}  // namespace

TEST_CASE("mocr of one full-area max-resolution request is one") {
  CostModel m = two_tier_model(100.0, 0.01);
  CHECK(mocr({{100.0, "hr"}}, m) == doctest::Approx(1.0));
}

TEST_CASE("mocr reduces to obr when lr is free") {
  CostModel m = two_tier_model(100.0, 0.0);
  std::vector<CostRequest> reqs = {{50.0, "hr"}, {100.0, "lr"}};
  CHECK(mocr(reqs, m) == doctest::Approx(0.5));
}

TEST_CASE("overlapping full-area requests signal redundant overhead") {
  CostModel m = two_tier_model(100.0, 0.01);
  std::vector<CostRequest> reqs = {{100.0, "hr"}, {100.0, "hr"}};
  CHECK(mocr(reqs, m) == doctest::Approx(2.0));
}

TEST_CASE("cost model validation") {
  CostModel m = two_tier_model(100.0, 0.01);
  CHECK_NOTHROW(m.validate());
  m.r_max = "missing";
  CHECK_THROWS(m.validate());
  m = two_tier_model(100.0, -1.0);
  CHECK_THROWS(m.validate());
}

TEST_CASE("obr counts selected tiles") {
  ObservationSet s12;
  for (int i = 0; i < 12; ++i) s12.selected.push_back(i);
  ObservationSet empty;
  ObservationSet all;
  for (int i = 0; i < 100; ++i) all.selected.push_back(i);

  auto r = obr({s12, empty, all}, 100);
  REQUIRE(r.per_scene.size() == 3);
  CHECK(r.per_scene[0] == doctest::Approx(0.12));
  CHECK(r.per_scene[1] == 0.0);
  CHECK(r.per_scene[2] == doctest::Approx(1.0));
  CHECK(r.mean == doctest::Approx((0.12 + 0.0 + 1.0) / 3.0));
}

TEST_CASE("average precision worked example") {
  // relevant at ranks 1 and 3, k=3 -> (1 + 2/3) / 2
  CHECK(average_precision_at_k({7, 4, 9, 2}, {7, 9}, 3) ==
        doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("average precision boundary cases") {
  CHECK(average_precision_at_k({1, 2, 3}, {1, 2, 3, 4}, 3) == doctest::Approx(1.0));
  CHECK(average_precision_at_k({1, 2, 3}, {9}, 3) == 0.0);
  CHECK(average_precision_at_k({1, 2, 3}, {}, 3) == 0.0);
  CHECK_THROWS(average_precision_at_k({1, 1, 2}, {1}, 3));
}

TEST_CASE("average precision ignores irrelevant shuffling below rank k") {
  std::set<int> rel = {5};
  double a = average_precision_at_k({5, 1, 2, 3, 4}, rel, 2);
  double b = average_precision_at_k({5, 1, 4, 2, 3}, rel, 2);
  CHECK(a == b);
}

TEST_CASE("average precision against brute force on random instances") {
  RngStream rng(700, 0);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + rng.uniform_int(10);
    int k = 1 + rng.uniform_int(8);
    auto perm = rng.permutation(n);
    std::set<int> rel;
    for (int i = 0; i < n; ++i)
      if (rng.bernoulli(0.4)) rel.insert(i);

    double got = average_precision_at_k(perm, rel, k);

    double hits = 0.0, precision_sum = 0.0;
    int upto = std::min<int>(k, n);
    for (int r = 0; r < upto; ++r) {
      if (rel.count(perm[r])) {
        hits += 1.0;
        precision_sum += hits / (r + 1);
      }
    }
    int denom = std::min<int>(static_cast<int>(rel.size()), k);
    double expect = denom == 0 ? 0.0 : precision_sum / denom;
    CHECK(std::abs(got - expect) < 1e-12);
  }
}

TEST_CASE("retrieval map is perfect on exact concept features") {
  OracleEncoders enc(SceneSpec{}, 7, 32);
  std::vector<std::vector<double>> vecs;
  std::vector<uint64_t> labels;
  for (int c = 0; c < enc.concept_count(); ++c) {
    vecs.push_back(enc.concept_embedding(c));
    labels.push_back(1ull << c);
  }
  CHECK(retrieval_map(vecs, labels, enc, 100) == doctest::Approx(1.0));
}

TEST_CASE("retrieval map single scene single concept") {
  OracleEncoders enc(SceneSpec{}, 7, 32);
  std::vector<std::vector<double>> vecs = {enc.concept_embedding(2)};
  std::vector<uint64_t> labels = {1ull << 2};
  CHECK(retrieval_map(vecs, labels, enc, 10) == doctest::Approx(1.0));
}

TEST_CASE("recognition metrics on perfect and reversed rankings") {
  const int C = 8;
  std::vector<std::vector<std::pair<int, double>>> perfect, reversed;
  std::vector<uint64_t> labels;
  for (int i = 0; i < 6; ++i) {
    int truth = i % C;
    labels.push_back(1ull << truth);
    std::vector<std::pair<int, double>> good, bad;
    good.push_back({truth, 1.0});
    for (int c = 0; c < C; ++c)
      if (c != truth) good.push_back({c, -0.5});
    for (auto it = good.rbegin(); it != good.rend(); ++it) bad.push_back(*it);
    for (size_t r = 0; r < bad.size(); ++r) bad[r].second = 1.0 - 0.1 * r;
    perfect.push_back(good);
    reversed.push_back(bad);
  }
  auto p = recognition_metrics(perfect, labels, C);
  CHECK(p.top1_acc == doctest::Approx(1.0));
  CHECK(p.single_label_count == 6);
  CHECK(p.multilabel_map == doctest::Approx(1.0));

  auto r = recognition_metrics(reversed, labels, C);
  CHECK(r.top1_acc == 0.0);
}

TEST_CASE("top1 accuracy skips multi-label scenes") {
  const int C = 4;
  std::vector<std::vector<std::pair<int, double>>> ranked;
  std::vector<uint64_t> labels = {0b0011, 0b0100};  // multi-label, single-label
  for (int i = 0; i < 2; ++i) {
    std::vector<std::pair<int, double>> row;
    for (int c = 0; c < C; ++c) row.push_back({c, -0.1 * c});
    ranked.push_back(row);
  }
  auto m = recognition_metrics(ranked, labels, C);
  CHECK(m.single_label_count == 1);
  CHECK(m.top1_acc == 0.0);  // the single-label scene's truth is concept 2
}

TEST_CASE("tile completion retrieval finds an exact feature match") {
  const int G = 3, d = 5;
  RngStream rng(710, 0);
  Tensor grid = Tensor::zeros({2 * G, 2 * G, d});
  for (int i = 0; i < grid.size(); ++i) grid.data()[i] = rng.normal();

  std::vector<std::vector<double>> gallery;
  for (int p = 0; p < G * G; ++p) gallery.push_back(pool_tile_block(grid, p, G));

  ObservationSet obs;  // nothing observed
  auto ranked = tile_completion_retrieval(grid, 4, G, obs, gallery, 3);
  REQUIRE(ranked.size() == 3);
  CHECK(ranked[0].index == 4);
  CHECK(ranked[0].score == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tile completion retrieval guards and truncation") {
  const int G = 2, d = 3;
  Tensor grid = Tensor::full({4, 4, d}, 0.5);
  std::vector<std::vector<double>> gallery(3, std::vector<double>(d, 1.0));
  ObservationSet obs;
  obs.selected = {1};
  CHECK_THROWS_AS(tile_completion_retrieval(grid, 1, G, obs, gallery, 2),
                  std::invalid_argument);
  auto full = tile_completion_retrieval(grid, 0, G, obs, gallery, 99);
  CHECK(full.size() == gallery.size());
}

TEST_CASE("pool_tile_block averages the right tokens") {
  const int G = 2, d = 2;
  Tensor grid = Tensor::zeros({4, 4, d});
  // tile 3 occupies rows 2-3, cols 2-3
  double v = 1.0;
  for (int u = 2; u < 4; ++u)
    for (int w = 2; w < 4; ++w)
      for (int j = 0; j < d; ++j) grid.data()[(u * 4 + w) * d + j] = v++;
  auto pooled = pool_tile_block(grid, 3, G);
  REQUIRE((int)pooled.size() == d);
  CHECK(pooled[0] == doctest::Approx((1.0 + 3.0 + 5.0 + 7.0) / 4.0));
  CHECK(pooled[1] == doctest::Approx((2.0 + 4.0 + 6.0 + 8.0) / 4.0));
}

TEST_CASE("csv schemas and formatting") {
  SweepRow s;
  s.threshold = 0.55;
  s.mean_obr = 0.123456789;
  s.map100 = 0.5;
  std::string csv = sweep_csv({s});
  CHECK(csv.find("threshold,mean_obr,map100,map20,top1,mlmap,wall_ms\n") == 0);
  CHECK(csv.find("0.550000,0.123457,0.500000") != std::string::npos);
  CHECK(csv.back() == '\n');

  AblationRow a;
  a.sampler = "learned";
  a.predictor = "full";
  a.supervision = "multiplicative";
  a.seed = 7;
  a.map100 = 0.25;
  std::string acsv = ablation_csv({a});
  CHECK(acsv.find("sampler,predictor,supervision,seed,map100,map20,mean_obr,wall_ms\n") == 0);
  CHECK(acsv.find("learned,full,multiplicative,7,0.250000") != std::string::npos);
}

TEST_CASE("default sweep thresholds match the published grid") {
  const auto& t = default_sweep_thresholds();
  std::vector<double> expect = {0.00, 0.10, 0.25, 0.45, 0.55, 0.65, 0.85, 1.00};
  REQUIRE(t.size() == expect.size());
  for (size_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(expect[i]));
}
