#include "doctest.h"

#include <vector>

#include "cxs/gradcheck.hpp"
#include "cxs/predictor.hpp"
#include "cxs/rng.hpp"
#include "cxs/tensor.hpp"

using namespace cxs;

TEST_CASE("quadratic at x=3") {
  Tensor x = Tensor::scalar(3.0, true);
  std::vector<Tensor> params{x};
  double err = finite_difference_check([&] { return multiply(x, x); }, params);
  CHECK(err < 1e-9);
}

TEST_CASE("softmax dotted with a fixed vector") {
  Tensor x({1, 4}, {0.2, -0.5, 1.0, 0.3}, true);
  Tensor w({4, 1}, {1.0, -2.0, 0.5, 3.0});
  std::vector<Tensor> params{x};
  double err = finite_difference_check(
      [&] { return mean_all(matmul(row_softmax(x), w)); }, params);
  CHECK(err < 1e-6);
}

TEST_CASE("centered cosine loss at random inputs") {
  RngStream rng(31, 0);
  auto randn = [&](Shape s) {
    Tensor t = Tensor::zeros(s, true);
    for (int i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    return t;
  };
  Tensor h = randn({4, 4, 3});
  Tensor target = randn({4, 4, 3});
  target.set_requires_grad(false);
  std::vector<double> mu = {0.1, -0.2, 0.05};
  std::vector<Tensor> params{h};
  double err =
      finite_difference_check([&] { return loss_rep(h, target, mu); }, params);
  CHECK(err < 1e-4);
}

TEST_CASE("nondeterministic builders are rejected") {
  Tensor x = Tensor::scalar(1.0, true);
  std::vector<Tensor> params{x};
  int calls = 0;
  CHECK_THROWS_AS(finite_difference_check(
                      [&] {
                        ++calls;
                        return scale(x, static_cast<double>(calls));
                      },
                      params),
                  std::runtime_error);
}

TEST_CASE("full suite stays under tolerance") {
  double worst = run_gradient_suite([](const std::string&, double) {});
  CHECK(worst < 1e-4);
}
