#pragma once

#include <cstddef>
#include <functional>

#include "subadapt/tensor.hpp"

namespace subadapt {

/// Objective probed by check_gradients. Evaluates the scalar at the given
/// point; when grad is non-null, also writes the analytic gradient there
/// (same shape as the input).
using ScalarFn = std::function<double(const Tensor&, Tensor*)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;  // flat coordinate of the worst disagreement
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    bool passed = false;
};

/// Compares the analytic gradient of fn at `at` against central differences
/// (f(x+eps e_i) - f(x-eps e_i)) / (2 eps), coordinate by coordinate.
/// Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
/// Throws NumericError if the function or its gradient is non-finite at any
/// probe point.
GradCheckReport check_gradients(const ScalarFn& fn, const Tensor& at, double eps = 1e-5,
                                double tol = 1e-5);

}  // namespace subadapt
