#include "subadapt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "subadapt/error.hpp"

namespace subadapt {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// c[n,m] += a[n,k] * b[k,m]
void acc_nn(const Tensor& a, const Tensor& b, Tensor& c) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = c.flat().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            double* crow = pc + i * m;
            const double* brow = pb + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[n,m] += a[n,k] * b[m,k]^T
void acc_nt(const Tensor& a, const Tensor& b, Tensor& c) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = c.flat().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double* arow = pa + i * k;
            const double* brow = pb + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            pc[i * m + j] += s;
        }
    }
}

// c[k,m] += a[n,k]^T * b[n,m]
void acc_tn(const Tensor& a, const Tensor& b, Tensor& c) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = c.flat().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            double* crow = pc + p * m;
            const double* brow = pb + i * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// v[m] += column sums of a[n,m]
void acc_colsum(const Tensor& a, Tensor& v) {
    const std::size_t n = a.rows(), m = a.cols();
    const double* pa = a.data().data();
    double* pv = v.flat().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = pa + i * m;
        for (std::size_t j = 0; j < m; ++j) pv[j] += arow[j];
    }
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.ndim() != 2) {
        throw DimError(std::string(what) + " must be a matrix, got " + shape_str(t.shape()));
    }
}

void require_vector(const Tensor& t, const char* what) {
    if (t.ndim() != 1) {
        throw DimError(std::string(what) + " must be a vector, got " + shape_str(t.shape()));
    }
}

}  // namespace

std::size_t Tape::check_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        throw IndexError("tape node id " + std::to_string(id) + " out of range, tape holds " +
                         std::to_string(nodes_.size()) + " nodes");
    }
    return static_cast<std::size_t>(id);
}

const Tensor& Tape::val(int id) const { return nodes_[check_id(id)].value; }

int Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor value) {
    return push(Node{OpKind::Leaf, {}, std::move(value), 0.0, {}, {}});
}

int Tape::add(int a, int b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    if (!x.same_shape(y)) {
        throw DimError("add operands differ in shape: " + shape_str(x.shape()) + " vs " +
                       shape_str(y.shape()));
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.flat()[i] = x.data()[i] + y.data()[i];
    return push(Node{OpKind::Add, {a, b}, std::move(out), 0.0, {}, {}});
}

int Tape::sub(int a, int b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    if (!x.same_shape(y)) {
        throw DimError("sub operands differ in shape: " + shape_str(x.shape()) + " vs " +
                       shape_str(y.shape()));
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.flat()[i] = x.data()[i] - y.data()[i];
    return push(Node{OpKind::Sub, {a, b}, std::move(out), 0.0, {}, {}});
}

int Tape::mul(int a, int b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    if (!x.same_shape(y)) {
        throw DimError("mul operands differ in shape: " + shape_str(x.shape()) + " vs " +
                       shape_str(y.shape()));
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.flat()[i] = x.data()[i] * y.data()[i];
    return push(Node{OpKind::Mul, {a, b}, std::move(out), 0.0, {}, {}});
}

int Tape::scale(int a, double c) {
    const Tensor& x = val(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.flat()[i] = c * x.data()[i];
    return push(Node{OpKind::Scale, {a}, std::move(out), c, {}, {}});
}

int Tape::exp(int a) {
    const Tensor& x = val(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.flat()[i] = std::exp(x.data()[i]);
    return push(Node{OpKind::Exp, {a}, std::move(out), 0.0, {}, {}});
}

int Tape::square(int a) {
    const Tensor& x = val(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.flat()[i] = x.data()[i] * x.data()[i];
    return push(Node{OpKind::Square, {a}, std::move(out), 0.0, {}, {}});
}

int Tape::sqrt_floor(int a) {
    const Tensor& x = val(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        out.flat()[i] = std::sqrt(std::max(x.data()[i], kSqrtFloor));
    }
    return push(Node{OpKind::SqrtFloor, {a}, std::move(out), 0.0, {}, {}});
}

int Tape::sigmoid(int a) {
    const Tensor& x = val(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.flat()[i] = stable_sigmoid(x.data()[i]);
    return push(Node{OpKind::Sigmoid, {a}, std::move(out), 0.0, {}, {}});
}

int Tape::tanh(int a) {
    const Tensor& x = val(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.flat()[i] = std::tanh(x.data()[i]);
    return push(Node{OpKind::Tanh, {a}, std::move(out), 0.0, {}, {}});
}

int Tape::leaky_relu(int a, double alpha) {
    if (!(alpha >= 0.0)) {
        throw ContractError("leaky_relu slope must be non-negative");
    }
    const Tensor& x = val(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x.data()[i];
        out.flat()[i] = v > 0.0 ? v : alpha * v;
    }
    return push(Node{OpKind::LeakyRelu, {a}, std::move(out), alpha, {}, {}});
}

int Tape::mean_reduce(int a) {
    const Tensor& x = val(a);
    // Summing in ascending value order makes the result exactly invariant
    // under any reordering of the input elements.
    std::vector<double> sorted(x.data());
    std::sort(sorted.begin(), sorted.end());
    double s = 0.0;
    for (double v : sorted) s += v;
    return push(Node{OpKind::MeanReduce, {a},
                     Tensor::scalar(s / static_cast<double>(x.numel())), 0.0, {}, {}});
}

int Tape::concat_rows(int a, int b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    require_matrix(x, "concat_rows lhs");
    require_matrix(y, "concat_rows rhs");
    if (x.cols() != y.cols()) {
        throw DimError("concat_rows column mismatch: " + shape_str(x.shape()) + " vs " +
                       shape_str(y.shape()));
    }
    Tensor out({x.rows() + y.rows(), x.cols()});
    std::copy(x.data().begin(), x.data().end(), out.flat().begin());
    std::copy(y.data().begin(), y.data().end(),
              out.flat().begin() + static_cast<std::ptrdiff_t>(x.numel()));
    return push(Node{OpKind::ConcatRows, {a, b}, std::move(out), 0.0, {}, {}});
}

int Tape::reshape(int a, std::vector<std::size_t> shape) {
    const Tensor& x = val(a);
    Tensor out(shape, x.data());
    return push(Node{OpKind::Reshape, {a}, std::move(out), 0.0, {}, {}});
}

int Tape::matmul(int a, int b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    require_matrix(x, "matmul lhs");
    require_matrix(y, "matmul rhs");
    if (x.cols() != y.rows()) {
        throw DimError("matmul inner dimension mismatch: " + shape_str(x.shape()) + " x " +
                       shape_str(y.shape()));
    }
    Tensor out({x.rows(), y.cols()});
    acc_nn(x, y, out);
    return push(Node{OpKind::MatMul, {a, b}, std::move(out), 0.0, {}, {}});
}

int Tape::matmul_nt(int a, int b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    require_matrix(x, "matmul_nt lhs");
    require_matrix(y, "matmul_nt rhs");
    if (x.cols() != y.cols()) {
        throw DimError("matmul_nt inner dimension mismatch: " + shape_str(x.shape()) + " x " +
                       shape_str(y.shape()) + "^T");
    }
    Tensor out({x.rows(), y.rows()});
    acc_nt(x, y, out);
    return push(Node{OpKind::MatMulNT, {a, b}, std::move(out), 0.0, {}, {}});
}

int Tape::add_rowvec(int m, int v) {
    const Tensor& x = val(m);
    const Tensor& y = val(v);
    require_matrix(x, "add_rowvec matrix");
    require_vector(y, "add_rowvec row vector");
    if (x.cols() != y.numel()) {
        throw DimError("add_rowvec width mismatch: " + shape_str(x.shape()) + " vs " +
                       shape_str(y.shape()));
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            out.at(i, j) = x.data()[i * x.cols() + j] + y.data()[j];
        }
    }
    return push(Node{OpKind::AddRowVec, {m, v}, std::move(out), 0.0, {}, {}});
}

int Tape::affine(int x, int w, int b) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    const Tensor& bv = val(b);
    require_vector(xv, "affine input");
    require_matrix(wv, "affine weight");
    require_vector(bv, "affine bias");
    if (wv.cols() != xv.numel() || wv.rows() != bv.numel()) {
        throw DimError("affine shape mismatch: W" + shape_str(wv.shape()) + " x" +
                       shape_str(xv.shape()) + " b" + shape_str(bv.shape()));
    }
    Tensor out({wv.rows()});
    for (std::size_t i = 0; i < wv.rows(); ++i) {
        double s = bv.data()[i];
        for (std::size_t j = 0; j < wv.cols(); ++j) s += wv.data()[i * wv.cols() + j] * xv.data()[j];
        out.flat()[i] = s;
    }
    return push(Node{OpKind::Affine, {x, w, b}, std::move(out), 0.0, {}, {}});
}

int Tape::softmax_cross_entropy(int logits, int label) {
    const Tensor& z = val(logits);
    require_vector(z, "softmax_cross_entropy logits");
    const std::size_t k = z.numel();
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
        throw IndexError("class label " + std::to_string(label) + " out of range for " +
                         std::to_string(k) + " classes");
    }
    double m = z.data()[0];
    for (std::size_t i = 1; i < k; ++i) m = std::max(m, z.data()[i]);
    double denom = 0.0;
    Tensor probs({k});
    for (std::size_t i = 0; i < k; ++i) {
        probs.flat()[i] = std::exp(z.data()[i] - m);
        denom += probs.data()[i];
    }
    for (std::size_t i = 0; i < k; ++i) probs.flat()[i] /= denom;
    const double loss = std::log(denom) - (z.data()[static_cast<std::size_t>(label)] - m);
    return push(Node{OpKind::SoftmaxCrossEntropy, {logits}, Tensor::scalar(loss), 0.0,
                     {label}, {std::move(probs)}});
}

int Tape::cross_entropy_mean_rows(int logits, const std::vector<int>& labels) {
    const Tensor& z = val(logits);
    require_matrix(z, "cross_entropy_mean_rows logits");
    const std::size_t bsz = z.rows(), k = z.cols();
    if (labels.size() != bsz) {
        throw DimError("label count " + std::to_string(labels.size()) + " does not match batch " +
                       std::to_string(bsz));
    }
    Tensor probs({bsz, k});
    double total = 0.0;
    for (std::size_t r = 0; r < bsz; ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw IndexError("class label " + std::to_string(label) + " out of range for " +
                             std::to_string(k) + " classes at row " + std::to_string(r));
        }
        const double* row = z.data().data() + r * k;
        double m = row[0];
        for (std::size_t i = 1; i < k; ++i) m = std::max(m, row[i]);
        double denom = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            probs.at(r, i) = std::exp(row[i] - m);
            denom += probs.at(r, i);
        }
        for (std::size_t i = 0; i < k; ++i) probs.at(r, i) /= denom;
        total += std::log(denom) - (row[static_cast<std::size_t>(label)] - m);
    }
    return push(Node{OpKind::CrossEntropyMeanRows, {logits},
                     Tensor::scalar(total / static_cast<double>(bsz)), 0.0, labels,
                     {std::move(probs)}});
}

int Tape::pairwise_sqdist(int a, int b) {
    const Tensor& x = val(a);
    const Tensor& y = val(b);
    require_matrix(x, "pairwise_sqdist lhs");
    require_matrix(y, "pairwise_sqdist rhs");
    if (x.cols() != y.cols()) {
        throw DimError("pairwise_sqdist feature width mismatch: " + shape_str(x.shape()) +
                       " vs " + shape_str(y.shape()));
    }
    const std::size_t n = x.rows(), m = y.rows(), d = x.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.data().data() + i * d;
        for (std::size_t j = 0; j < m; ++j) {
            const double* yj = y.data().data() + j * d;
            double s = 0.0;
            for (std::size_t p = 0; p < d; ++p) {
                const double diff = xi[p] - yj[p];
                s += diff * diff;
            }
            out.at(i, j) = s;
        }
    }
    return push(Node{OpKind::PairwiseSqDist, {a, b}, std::move(out), 0.0, {}, {}});
}

int Tape::gather_rows(int a, std::vector<int> rows) {
    const Tensor& x = val(a);
    require_matrix(x, "gather_rows input");
    if (rows.empty()) {
        throw ContractError("gather_rows needs at least one row index");
    }
    const std::size_t n = x.rows(), d = x.cols();
    Tensor out({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const int idx = rows[r];
        if (idx < 0 || static_cast<std::size_t>(idx) >= n) {
            throw IndexError("gather_rows index " + std::to_string(idx) + " out of range for " +
                             std::to_string(n) + " rows");
        }
        const double* src = x.data().data() + static_cast<std::size_t>(idx) * d;
        std::copy(src, src + d, out.flat().begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    return push(Node{OpKind::GatherRows, {a}, std::move(out), 0.0, std::move(rows), {}});
}

int Tape::gru_cell(int h_prev, int wr, int ur, int br, int wu, int uu, int bu, int wc, int uc,
                   int bc, Tensor x) {
    const Tensor& h = val(h_prev);
    require_matrix(h, "gru_cell hidden state");
    require_matrix(x, "gru_cell input");
    const std::size_t bsz = h.rows(), hd = h.cols(), d = x.cols();
    if (x.rows() != bsz) {
        throw DimError("gru_cell batch mismatch: h" + shape_str(h.shape()) + " x" +
                       shape_str(x.shape()));
    }
    auto check_gate = [&](int w, int u, int b, const char* name) {
        const Tensor& wv = val(w);
        const Tensor& uv = val(u);
        const Tensor& bv = val(b);
        if (wv.ndim() != 2 || wv.rows() != hd || wv.cols() != d || uv.ndim() != 2 ||
            uv.rows() != hd || uv.cols() != hd || bv.ndim() != 1 || bv.numel() != hd) {
            throw DimError(std::string("gru_cell ") + name + " parameter shapes W" +
                           shape_str(wv.shape()) + " U" + shape_str(uv.shape()) + " b" +
                           shape_str(bv.shape()) + " do not fit hidden " + std::to_string(hd) +
                           ", input " + std::to_string(d));
        }
    };
    check_gate(wr, ur, br, "reset");
    check_gate(wu, uu, bu, "update");
    check_gate(wc, uc, bc, "candidate");

    auto gate_preact = [&](int w, int u, int b, const Tensor& hmat) {
        Tensor pre({bsz, hd});
        acc_nt(x, val(w), pre);
        acc_nt(hmat, val(u), pre);
        const Tensor& bv = val(b);
        for (std::size_t i = 0; i < bsz; ++i) {
            for (std::size_t j = 0; j < hd; ++j) pre.at(i, j) += bv.data()[j];
        }
        return pre;
    };

    Tensor r = gate_preact(wr, ur, br, h);
    for (std::size_t i = 0; i < r.numel(); ++i) r.flat()[i] = stable_sigmoid(r.data()[i]);
    Tensor u_gate = gate_preact(wu, uu, bu, h);
    for (std::size_t i = 0; i < u_gate.numel(); ++i) {
        u_gate.flat()[i] = stable_sigmoid(u_gate.data()[i]);
    }
    Tensor rh({bsz, hd});
    for (std::size_t i = 0; i < rh.numel(); ++i) rh.flat()[i] = r.data()[i] * h.data()[i];
    Tensor c = gate_preact(wc, uc, bc, rh);
    for (std::size_t i = 0; i < c.numel(); ++i) c.flat()[i] = std::tanh(c.data()[i]);

    Tensor h_new({bsz, hd});
    for (std::size_t i = 0; i < h_new.numel(); ++i) {
        h_new.flat()[i] =
            (1.0 - u_gate.data()[i]) * h.data()[i] + u_gate.data()[i] * c.data()[i];
    }
    return push(Node{OpKind::GruCell, {h_prev, wr, ur, br, wu, uu, bu, wc, uc, bc},
                     std::move(h_new), 0.0, {},
                     {std::move(x), std::move(r), std::move(u_gate), std::move(c)}});
}

std::vector<Tensor> Tape::backward(int seed) const {
    const std::size_t s = check_id(seed);
    if (nodes_[s].value.numel() != 1) {
        throw ContractError("backward seed must hold exactly one element, got " +
                            shape_str(nodes_[s].value.shape()));
    }
    std::vector<Tensor> grad(nodes_.size());
    std::vector<char> touched(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        grad[i] = Tensor::zeros(nodes_[i].value.shape());
    }
    grad[s].flat()[0] = 1.0;
    touched[s] = 1;

    for (std::size_t i = s + 1; i-- > 0;) {
        if (!touched[i]) continue;
        const Node& n = nodes_[i];
        const Tensor& g = grad[i];
        auto touch = [&](int p) { touched[static_cast<std::size_t>(p)] = 1; };
        switch (n.kind) {
            case OpKind::Leaf:
                break;
            case OpKind::Add: {
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += g.data()[e];
                    grad[n.parents[1]].flat()[e] += g.data()[e];
                }
                touch(n.parents[0]);
                touch(n.parents[1]);
                break;
            }
            case OpKind::Sub: {
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += g.data()[e];
                    grad[n.parents[1]].flat()[e] -= g.data()[e];
                }
                touch(n.parents[0]);
                touch(n.parents[1]);
                break;
            }
            case OpKind::Mul: {
                const Tensor& x = val(n.parents[0]);
                const Tensor& y = val(n.parents[1]);
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += g.data()[e] * y.data()[e];
                    grad[n.parents[1]].flat()[e] += g.data()[e] * x.data()[e];
                }
                touch(n.parents[0]);
                touch(n.parents[1]);
                break;
            }
            case OpKind::Scale: {
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += n.scalar * g.data()[e];
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::Exp: {
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += g.data()[e] * n.value.data()[e];
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::Square: {
                const Tensor& x = val(n.parents[0]);
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += g.data()[e] * 2.0 * x.data()[e];
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::SqrtFloor: {
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += g.data()[e] / (2.0 * n.value.data()[e]);
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::Sigmoid: {
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    const double sv = n.value.data()[e];
                    grad[n.parents[0]].flat()[e] += g.data()[e] * sv * (1.0 - sv);
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::Tanh: {
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    const double tv = n.value.data()[e];
                    grad[n.parents[0]].flat()[e] += g.data()[e] * (1.0 - tv * tv);
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::LeakyRelu: {
                const Tensor& x = val(n.parents[0]);
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    const double slope = x.data()[e] > 0.0 ? 1.0 : n.scalar;
                    grad[n.parents[0]].flat()[e] += g.data()[e] * slope;
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::MeanReduce: {
                const Tensor& x = val(n.parents[0]);
                const double share = g.data()[0] / static_cast<double>(x.numel());
                for (std::size_t e = 0; e < x.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += share;
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::ConcatRows: {
                const std::size_t top = val(n.parents[0]).numel();
                for (std::size_t e = 0; e < top; ++e) {
                    grad[n.parents[0]].flat()[e] += g.data()[e];
                }
                for (std::size_t e = top; e < g.numel(); ++e) {
                    grad[n.parents[1]].flat()[e - top] += g.data()[e];
                }
                touch(n.parents[0]);
                touch(n.parents[1]);
                break;
            }
            case OpKind::Reshape: {
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += g.data()[e];
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::MatMul: {
                acc_nt(g, val(n.parents[1]), grad[n.parents[0]]);
                acc_tn(val(n.parents[0]), g, grad[n.parents[1]]);
                touch(n.parents[0]);
                touch(n.parents[1]);
                break;
            }
            case OpKind::MatMulNT: {
                acc_nn(g, val(n.parents[1]), grad[n.parents[0]]);
                acc_tn(g, val(n.parents[0]), grad[n.parents[1]]);
                touch(n.parents[0]);
                touch(n.parents[1]);
                break;
            }
            case OpKind::AddRowVec: {
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += g.data()[e];
                }
                acc_colsum(g, grad[n.parents[1]]);
                touch(n.parents[0]);
                touch(n.parents[1]);
                break;
            }
            case OpKind::Affine: {
                const Tensor& x = val(n.parents[0]);
                const Tensor& w = val(n.parents[1]);
                Tensor& gx = grad[n.parents[0]];
                Tensor& gw = grad[n.parents[1]];
                Tensor& gb = grad[n.parents[2]];
                for (std::size_t r = 0; r < w.rows(); ++r) {
                    const double gr = g.data()[r];
                    gb.flat()[r] += gr;
                    for (std::size_t cidx = 0; cidx < w.cols(); ++cidx) {
                        gw.flat()[r * w.cols() + cidx] += gr * x.data()[cidx];
                        gx.flat()[cidx] += gr * w.data()[r * w.cols() + cidx];
                    }
                }
                touch(n.parents[0]);
                touch(n.parents[1]);
                touch(n.parents[2]);
                break;
            }
            case OpKind::SoftmaxCrossEntropy: {
                const Tensor& probs = n.aux[0];
                const double gs = g.data()[0];
                const std::size_t label = static_cast<std::size_t>(n.int_args[0]);
                for (std::size_t e = 0; e < probs.numel(); ++e) {
                    const double onehot = e == label ? 1.0 : 0.0;
                    grad[n.parents[0]].flat()[e] += gs * (probs.data()[e] - onehot);
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::CrossEntropyMeanRows: {
                const Tensor& probs = n.aux[0];
                const double gs = g.data()[0] / static_cast<double>(probs.rows());
                for (std::size_t r = 0; r < probs.rows(); ++r) {
                    const std::size_t label = static_cast<std::size_t>(n.int_args[r]);
                    for (std::size_t cidx = 0; cidx < probs.cols(); ++cidx) {
                        const double onehot = cidx == label ? 1.0 : 0.0;
                        grad[n.parents[0]].flat()[r * probs.cols() + cidx] +=
                            gs * (probs.data()[r * probs.cols() + cidx] - onehot);
                    }
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::PairwiseSqDist: {
                const Tensor& x = val(n.parents[0]);
                const Tensor& y = val(n.parents[1]);
                const std::size_t rows = x.rows(), cols = y.rows(), d = x.cols();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t cidx = 0; cidx < cols; ++cidx) {
                        const double gij = 2.0 * g.data()[r * cols + cidx];
                        if (gij == 0.0) continue;
                        for (std::size_t p = 0; p < d; ++p) {
                            const double diff = x.data()[r * d + p] - y.data()[cidx * d + p];
                            grad[n.parents[0]].flat()[r * d + p] += gij * diff;
                            grad[n.parents[1]].flat()[cidx * d + p] -= gij * diff;
                        }
                    }
                }
                touch(n.parents[0]);
                touch(n.parents[1]);
                break;
            }
            case OpKind::GatherRows: {
                const std::size_t d = n.value.cols();
                for (std::size_t r = 0; r < n.int_args.size(); ++r) {
                    const std::size_t src = static_cast<std::size_t>(n.int_args[r]);
                    for (std::size_t cidx = 0; cidx < d; ++cidx) {
                        grad[n.parents[0]].flat()[src * d + cidx] += g.data()[r * d + cidx];
                    }
                }
                touch(n.parents[0]);
                break;
            }
            case OpKind::GruCell: {
                const Tensor& x = n.aux[0];
                const Tensor& r = n.aux[1];
                const Tensor& u = n.aux[2];
                const Tensor& c = n.aux[3];
                const Tensor& h = val(n.parents[0]);
                const std::size_t bsz = h.rows(), hd = h.cols();

                Tensor dH = Tensor::zeros(h.shape());
                Tensor dAc({bsz, hd});
                Tensor dAu({bsz, hd});
                for (std::size_t e = 0; e < g.numel(); ++e) {
                    const double ge = g.data()[e];
                    dH.flat()[e] += ge * (1.0 - u.data()[e]);
                    dAc.flat()[e] = ge * u.data()[e] * (1.0 - c.data()[e] * c.data()[e]);
                    dAu.flat()[e] = ge * (c.data()[e] - h.data()[e]) * u.data()[e] *
                                    (1.0 - u.data()[e]);
                }

                Tensor rh({bsz, hd});
                for (std::size_t e = 0; e < rh.numel(); ++e) {
                    rh.flat()[e] = r.data()[e] * h.data()[e];
                }
                acc_tn(dAc, x, grad[n.parents[7]]);   // dW_c
                acc_tn(dAc, rh, grad[n.parents[8]]);  // dU_c
                acc_colsum(dAc, grad[n.parents[9]]);  // db_c

                Tensor dRH = Tensor::zeros(h.shape());
                acc_nn(dAc, val(n.parents[8]), dRH);
                Tensor dAr({bsz, hd});
                for (std::size_t e = 0; e < dRH.numel(); ++e) {
                    dH.flat()[e] += dRH.data()[e] * r.data()[e];
                    dAr.flat()[e] = dRH.data()[e] * h.data()[e] * r.data()[e] *
                                    (1.0 - r.data()[e]);
                }

                acc_tn(dAu, x, grad[n.parents[4]]);   // dW_u
                acc_tn(dAu, h, grad[n.parents[5]]);   // dU_u
                acc_colsum(dAu, grad[n.parents[6]]);  // db_u
                acc_nn(dAu, val(n.parents[5]), dH);

                acc_tn(dAr, x, grad[n.parents[1]]);   // dW_r
                acc_tn(dAr, h, grad[n.parents[2]]);   // dU_r
                acc_colsum(dAr, grad[n.parents[3]]);  // db_r
                acc_nn(dAr, val(n.parents[2]), dH);

                for (std::size_t e = 0; e < dH.numel(); ++e) {
                    grad[n.parents[0]].flat()[e] += dH.data()[e];
                }
                for (int p : n.parents) touch(p);
                break;
            }
        }
    }
    return grad;
}

}  // namespace subadapt
