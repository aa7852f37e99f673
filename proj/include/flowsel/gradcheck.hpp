#pragma once

// Central finite-difference verification of analytic gradients.

#include "flowsel/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>

namespace flowsel::nn {

struct GradCheckOptions {
    double eps = 1e-3;
    std::size_t max_coords = 64;
    std::uint64_t seed = 0;
    /// Denominator floor of the relative error, for gradients near zero.
    double floor = 1e-3;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_analytic = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;  ///< coordinates whose +-eps probes crossed a ReLU kink
};

/// Builds the scalar loss on a fresh Graph (frozen params tracked).
using LossBuilder = std::function<Var(Graph&)>;

/// Compares d(loss)/d(param) from backward() against
/// (loss(p + eps) - loss(p - eps)) / (2 eps) on up to max_coords randomly
/// chosen coordinates. Relative error is |a - n| / max(|a|, |n|, floor).
/// Coordinates whose probes change the ReLU sign pattern are replaced by
/// other coordinates. param.value is restored bit-exactly; param.grad is
/// left zeroed.
GradCheckResult grad_check(const LossBuilder& build, Param& param, const GradCheckOptions& opt = {});

}  // namespace flowsel::nn
