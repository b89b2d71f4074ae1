#pragma once

#include <cstddef>
#include <vector>

#include "subadapt/tensor.hpp"

namespace subadapt {

/// Primitive operations recorded on a Tape. Each has a hand-written backward
/// rule in Tape::backward; all rules are validated against central finite
/// differences in the test suite.
enum class OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Exp,
    Square,
    SqrtFloor,
    Sigmoid,
    Tanh,
    LeakyRelu,
    MeanReduce,
    ConcatRows,
    Reshape,
    MatMul,
    MatMulNT,
    AddRowVec,
    Affine,
    SoftmaxCrossEntropy,
    CrossEntropyMeanRows,
    PairwiseSqDist,
    GatherRows,
    GruCell,
};

/// Argument floor of the sqrt primitive. Keeps the gradient of an MMD norm
/// bounded when two feature distributions coincide.
inline constexpr double kSqrtFloor = 1e-12;

struct Node {
    OpKind kind;
    std::vector<int> parents;
    Tensor value;
    double scalar = 0.0;           // Scale factor / LeakyRelu slope
    std::vector<int> int_args;     // class labels, gather indices
    std::vector<Tensor> aux;       // op-specific cached tensors (see tape.cpp)
};

/// Reverse-mode differentiation tape over dense real tensors. Values are
/// computed eagerly as nodes are recorded; backward() runs one reverse
/// topological sweep and accumulates fan-out contributions by addition.
///
/// A Tape is single-owner: it must not be shared across threads during
/// construction or backward. It is rebuilt per training step.
class Tape {
public:
    /// Records a constant/input node. Leaves receive gradients like any node.
    int leaf(Tensor value);

    // Elementwise, same-shape pairs.
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);

    int scale(int a, double c);
    int exp(int a);
    int square(int a);
    /// sqrt(max(x, kSqrtFloor)); backward divides by the rooted clamped value.
    int sqrt_floor(int a);
    int sigmoid(int a);
    int tanh(int a);
    /// max(x, alpha*x) elementwise, alpha >= 0.
    int leaky_relu(int a, double alpha);

    /// Mean over all elements -> scalar. The sum is taken in ascending value
    /// order, so the result is invariant under any permutation of the input.
    int mean_reduce(int a);

    /// Concatenation along the leading axis; trailing dims must match.
    int concat_rows(int a, int b);
    int reshape(int a, std::vector<std::size_t> shape);

    int matmul(int a, int b);     // [n,k] x [k,m] -> [n,m]
    int matmul_nt(int a, int b);  // [n,k] x [m,k]^T -> [n,m]
    /// M[n,m] + row-broadcast v[m]. The only broadcast the tape supports.
    int add_rowvec(int m, int v);
    /// W[m,n] x[n] + b[m] -> [m].
    int affine(int x, int w, int b);

    /// -log softmax(logits)[label] with max-subtraction; backward yields
    /// softmax(logits) - onehot(label).
    int softmax_cross_entropy(int logits, int label);
    /// Mean of per-row -log softmax(row)[label_row] over a [B,K] matrix.
    int cross_entropy_mean_rows(int logits, const std::vector<int>& labels);

    /// D[i,j] = ||A_i - B_j||^2 for row sets A[n,d], B[m,d].
    int pairwise_sqdist(int a, int b);
    /// Row selection; backward scatter-adds, so repeated indices accumulate.
    int gather_rows(int a, std::vector<int> rows);

    /// One GRU step over a batch: h_new = (1-u) . h + u . c with
    ///   r = sigmoid(x W_r^T + h U_r^T + b_r)
    ///   u = sigmoid(x W_u^T + h U_u^T + b_u)
    ///   c = tanh(x W_c^T + (r . h) U_c^T + b_c)
    /// x[B,D] is data, not a node: no gradient flows to the input signal.
    int gru_cell(int h_prev, int wr, int ur, int br, int wu, int uu, int bu, int wc, int uc,
                 int bc, Tensor x);

    /// Reverse sweep from a one-element seed node. Returns the gradient table
    /// indexed by node id; entries match node value shapes, and every node the
    /// seed does not depend on holds zeros.
    std::vector<Tensor> backward(int seed) const;

    const Tensor& value(int id) const { return nodes_[check_id(id)].value; }
    OpKind kind(int id) const { return nodes_[check_id(id)].kind; }
    std::size_t size() const { return nodes_.size(); }

private:
    int push(Node node);
    std::size_t check_id(int id) const;
    const Tensor& val(int id) const;

    std::vector<Node> nodes_;
};

}  // namespace subadapt
