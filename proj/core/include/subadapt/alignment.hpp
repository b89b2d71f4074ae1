#pragma once

#include <vector>

#include "subadapt/tape.hpp"
#include "subadapt/tensor.hpp"

namespace subadapt {

/// Convex mixture of RBF kernels. bandwidths holds the sigma^2 values.
struct KernelBank {
    std::vector<double> bandwidths;
    std::vector<double> weights;
};

/// Equal lengths, bandwidths strictly positive and strictly increasing,
/// weights positive and summing to 1 within 1e-12.
void validate_bank(const KernelBank& bank);

/// Five-kernel geometric ladder {s/4, s/2, s, 2s, 4s} around base_sigma_sq,
/// equal weights 1/5.
KernelBank make_default_bank(double base_sigma_sq);

/// Median of the n(n-1)/2 off-diagonal pairwise squared Euclidean distances
/// of the rows of features [n,d]. Even pair counts average the two middle
/// values. Returns 1.0 when the median is 0 (all points identical).
/// Throws ContractError when n < 2.
double median_heuristic(const Tensor& features);

/// K[i,j] = sum_q weights[q] * exp(-||A_i - B_j||^2 / (2 * bandwidths[q])),
/// recorded on the tape. A and B are node ids of [n,d] and [m,d] matrices.
int kernel_matrix(Tape& tape, int a, int b, const KernelBank& bank);

/// Biased squared MMD: mean(K(A,A)) + mean(K(B,B)) - 2 mean(K(A,B)), means
/// taken over all entries including the diagonal.
int mmd2(Tape& tape, int a, int b, const KernelBank& bank);

/// sqrt of mmd2 with the argument floored at kSqrtFloor.
int mmd(Tape& tape, int a, int b, const KernelBank& bank);

/// Mean of mmd over all unordered pairs of subject feature groups, taken in
/// ascending (i, j) index order. Each group is a node id of an [n_s, d]
/// matrix. Throws ContractError with fewer than 2 groups.
int discrepancy_loss(Tape& tape, const std::vector<int>& groups, const KernelBank& bank);

}  // namespace subadapt
