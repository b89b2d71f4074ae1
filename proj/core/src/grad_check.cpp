#include "subadapt/grad_check.hpp"

#include <cmath>
#include <string>

#include "subadapt/error.hpp"

namespace subadapt {

GradCheckReport check_gradients(const ScalarFn& fn, const Tensor& at, double eps, double tol) {
    if (!(eps > 0.0)) {
        throw ContractError("finite-difference step must be positive");
    }
    Tensor analytic(at.shape());
    const double base = fn(at, &analytic);
    if (!std::isfinite(base)) {
        throw NumericError("objective is non-finite at the evaluation point");
    }
    if (!analytic.all_finite()) {
        throw NumericError("analytic gradient contains non-finite entries");
    }

    GradCheckReport report;
    Tensor probe = at;
    for (std::size_t i = 0; i < at.numel(); ++i) {
        const double saved = probe.data()[i];
        probe.flat()[i] = saved + eps;
        const double up = fn(probe, nullptr);
        probe.flat()[i] = saved - eps;
        const double down = fn(probe, nullptr);
        probe.flat()[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("objective is non-finite at probe coordinate " +
                               std::to_string(i));
        }
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic.data()[i];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(a - numeric) / denom;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    report.passed = report.max_rel_err <= tol;
    return report;
}

}  // namespace subadapt
