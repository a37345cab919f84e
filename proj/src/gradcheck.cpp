#include "cxs/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace cxs {

double finite_difference_check(const LossBuilder& build_loss,
                               std::span<Tensor> params, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_difference_check: eps must be > 0");

  auto eval = [&]() -> double { return build_loss().item(); };

  double base1 = eval();
  double base2 = eval();
  if (base1 != base2)
    throw std::runtime_error("finite_difference_check: non-deterministic loss (" +
                             std::to_string(base1) + " vs " + std::to_string(base2) + ")");

  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    Tensor loss = build_loss();
    tape.backward(loss);
  }

  double max_rel = 0.0;
  for (auto& p : params) {
    const auto& g = p.grad();
    for (int i = 0; i < p.size(); ++i) {
      double saved = p.data()[i];
      p.data()[i] = saved + eps;
      double up = eval();
      p.data()[i] = saved - eps;
      double down = eval();
      p.data()[i] = saved;
      double fd = (up - down) / (2.0 * eps);
      double rel = std::abs(g[i] - fd) / std::max(1e-8, std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace cxs
