#pragma once

#include <functional>
#include <span>
#include <string>

#include "cxs/tensor.hpp"

namespace cxs {

/// Builds the scalar loss graph from the current parameter values. Called
/// repeatedly while parameters are perturbed in place, so it must be
/// deterministic.
using LossBuilder = std::function<Tensor()>;

/// Central-difference gradient check. Returns the max over all parameter
/// entries of |analytic - fd| / max(1e-8, |fd|). Throws std::runtime_error if
/// two evaluations of the builder disagree.
double finite_difference_check(const LossBuilder& build_loss,
                               std::span<Tensor> params, double eps = 1e-5);

/// Called once per suite component with its name and max relative error.
using SuiteReporter = std::function<void(const std::string&, double)>;

/// Finite-difference checks over every primitive in the catalog, the centered
/// cosine loss, the pairwise sigmoid loss, the sampler regression loss, and
/// the full stage-I completion loss at reduced geometry. Returns the worst
/// relative error seen.
double run_gradient_suite(const SuiteReporter& report, uint64_t seed = 7);

}  // namespace cxs
