#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "subadapt/tape.hpp"
#include "subadapt/tensor.hpp"

namespace subadapt {

/// Slope of the leaky ReLU after the embedding layer.
inline constexpr double kEmbedLeakAlpha = 0.2;

struct ModelDims {
    std::size_t d_in = 128;
    std::size_t t_len = 160;
    std::size_t d_seq = 128;
    std::size_t d_emb = 128;
    std::size_t n_classes = 40;
};

void validate_dims(const ModelDims& dims);

/// Per-gate GRU weights. W maps the input, U the previous hidden state;
/// all are [out x in] row-major.
struct GruParams {
    Tensor w_r, u_r, b_r;
    Tensor w_u, u_u, b_u;
    Tensor w_c, u_c, b_c;
};

struct ModelParams {
    ModelDims dims;
    GruParams gru;
    Tensor emb_w, emb_b;
    Tensor cls_w, cls_b;

    /// Visits all 13 trainable tensors in the fixed serialization order:
    /// gru (w_r, u_r, b_r, w_u, u_u, b_u, w_c, u_c, b_c), emb_w, emb_b,
    /// cls_w, cls_b. Optimizer state and checkpoints rely on this order.
    template <typename F>
    void for_each_tensor(F&& f) {
        f("gru.w_r", gru.w_r);
        f("gru.u_r", gru.u_r);
        f("gru.b_r", gru.b_r);
        f("gru.w_u", gru.w_u);
        f("gru.u_u", gru.u_u);
        f("gru.b_u", gru.b_u);
        f("gru.w_c", gru.w_c);
        f("gru.u_c", gru.u_c);
        f("gru.b_c", gru.b_c);
        f("emb_w", emb_w);
        f("emb_b", emb_b);
        f("cls_w", cls_w);
        f("cls_b", cls_b);
    }
    template <typename F>
    void for_each_tensor(F&& f) const {
        const_cast<ModelParams*>(this)->for_each_tensor(
            [&](const char* name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
    }
};

inline constexpr std::size_t kParamTensorCount = 13;

/// Weights drawn uniformly from +-sqrt(6/(fan_in+fan_out)), biases zero.
/// Deterministic per (dims, seed).
ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

/// All-zero parameters with the shapes implied by dims.
ModelParams zero_params(const ModelDims& dims);

/// Concatenation of all 13 tensors, serialization order, as one vector.
Tensor flatten_params(const ModelParams& params);

/// Inverse of flatten_params for the given dims. The vector length must
/// match the total parameter count exactly.
ModelParams unflatten_params(const ModelDims& dims, const Tensor& flat);

/// Node ids of the staged parameter tensors, in serialization order.
struct ParamNodes {
    std::array<int, kParamTensorCount> ids{};
    int w_r() const { return ids[0]; }
    int u_r() const { return ids[1]; }
    int b_r() const { return ids[2]; }
    int w_u() const { return ids[3]; }
    int u_u() const { return ids[4]; }
    int b_u() const { return ids[5]; }
    int w_c() const { return ids[6]; }
    int u_c() const { return ids[7]; }
    int b_c() const { return ids[8]; }
    int emb_w() const { return ids[9]; }
    int emb_b() const { return ids[10]; }
    int cls_w() const { return ids[11]; }
    int cls_b() const { return ids[12]; }
};

/// Records every parameter tensor as a leaf so gradients can be read back
/// per tensor after backward.
ParamNodes stage_params(Tape& tape, const ModelParams& params);

/// Runs the GRU over one signal x[D x T], consuming the channel vector at
/// each timestep, h_0 = 0. Returns the final hidden state as a [D_seq] node.
int gru_forward(Tape& tape, const ParamNodes& nodes, const ModelDims& dims, const Tensor& x);

/// Embedding layer: leaky_relu(emb_w z + emb_b) with slope kEmbedLeakAlpha.
int embed(Tape& tape, const ParamNodes& nodes, int z);

/// Classifier layer: raw logits cls_w w + cls_b. Softmax lives in the loss.
int classify(Tape& tape, const ParamNodes& nodes, int w);

/// One input row for a batched forward pass. The signal is borrowed and must
/// outlive the call.
struct SampleView {
    const Tensor* signal = nullptr;  // [D x T]
    int subject_id = 0;
    int label = 0;
};

/// Batched forward results; rows follow the input order.
struct BatchForward {
    int z_node = -1;       // [B x D_seq], after the encoder
    int w_node = -1;       // [B x D_emb], after the embedding layer
    int logits_node = -1;  // [B x K]
    std::vector<int> subjects;
    std::vector<int> labels;
};

BatchForward forward_batch(Tape& tape, const ParamNodes& nodes, const ModelDims& dims,
                           const std::vector<SampleView>& batch);

}  // namespace subadapt
