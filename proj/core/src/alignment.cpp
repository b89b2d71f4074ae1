#include "subadapt/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "subadapt/error.hpp"

namespace subadapt {

void validate_bank(const KernelBank& bank) {
    if (bank.bandwidths.empty() || bank.bandwidths.size() != bank.weights.size()) {
        throw ContractError("kernel bank needs matching non-empty bandwidth and weight lists");
    }
    double prev = 0.0;
    for (double s : bank.bandwidths) {
        if (!(s > prev)) {
            throw ContractError("kernel bandwidths must be positive and strictly increasing");
        }
        prev = s;
    }
    double total = 0.0;
    for (double w : bank.weights) {
        if (!(w > 0.0)) {
            throw ContractError("kernel weights must be positive");
        }
        total += w;
    }
    if (std::fabs(total - 1.0) > 1e-12) {
        throw ContractError("kernel weights must sum to 1, got " + std::to_string(total));
    }
}

KernelBank make_default_bank(double base_sigma_sq) {
    if (!(base_sigma_sq > 0.0)) {
        throw ContractError("base bandwidth must be positive");
    }
    KernelBank bank;
    bank.bandwidths = {base_sigma_sq / 4.0, base_sigma_sq / 2.0, base_sigma_sq,
                       base_sigma_sq * 2.0, base_sigma_sq * 4.0};
    bank.weights = std::vector<double>(5, 0.2);
    return bank;
}

double median_heuristic(const Tensor& features) {
    if (features.ndim() != 2) {
        throw DimError("median heuristic expects a feature matrix, got " +
                       shape_str(features.shape()));
    }
    const std::size_t n = features.rows(), d = features.cols();
    if (n < 2) {
        throw ContractError("median heuristic needs at least 2 points, got " +
                            std::to_string(n));
    }
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = features.data().data() + i * d;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double* xj = features.data().data() + j * d;
            double s = 0.0;
            for (std::size_t p = 0; p < d; ++p) {
                const double diff = xi[p] - xj[p];
                s += diff * diff;
            }
            dists.push_back(s);
        }
    }
    std::sort(dists.begin(), dists.end());
    const std::size_t m = dists.size();
    const double median =
        m % 2 == 1 ? dists[m / 2] : 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
    return median == 0.0 ? 1.0 : median;
}

int kernel_matrix(Tape& tape, int a, int b, const KernelBank& bank) {
    validate_bank(bank);
    const int dist = tape.pairwise_sqdist(a, b);
    int acc = -1;
    for (std::size_t q = 0; q < bank.bandwidths.size(); ++q) {
        const int term = tape.scale(
            tape.exp(tape.scale(dist, -1.0 / (2.0 * bank.bandwidths[q]))), bank.weights[q]);
        acc = q == 0 ? term : tape.add(acc, term);
    }
    return acc;
}

int mmd2(Tape& tape, int a, int b, const KernelBank& bank) {
    if (tape.value(a).numel() == 0 || tape.value(b).numel() == 0) {
        throw ContractError("mmd2 needs non-empty feature sets");
    }
    const int maa = tape.mean_reduce(kernel_matrix(tape, a, a, bank));
    const int mbb = tape.mean_reduce(kernel_matrix(tape, b, b, bank));
    const int mab = tape.mean_reduce(kernel_matrix(tape, a, b, bank));
    return tape.add(tape.add(maa, mbb), tape.scale(mab, -2.0));
}

int mmd(Tape& tape, int a, int b, const KernelBank& bank) {
    return tape.sqrt_floor(mmd2(tape, a, b, bank));
}

int discrepancy_loss(Tape& tape, const std::vector<int>& groups, const KernelBank& bank) {
    if (groups.size() < 2) {
        throw ContractError("discrepancy loss needs at least 2 subject groups, got " +
                            std::to_string(groups.size()));
    }
    // Pairs are visited in ascending (i, j) order so the accumulation order is
    // fixed regardless of how the caller assembled the groups.
    int acc = -1;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t j = i + 1; j < groups.size(); ++j) {
            const int term = mmd(tape, groups[i], groups[j], bank);
            acc = pairs == 0 ? term : tape.add(acc, term);
            ++pairs;
        }
    }
    return tape.scale(acc, 1.0 / static_cast<double>(pairs));
}

}  // namespace subadapt
