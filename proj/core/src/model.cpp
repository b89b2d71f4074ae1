#include "subadapt/model.hpp"

#include <cmath>
#include <string>

#include "subadapt/error.hpp"
#include "subadapt/rng.hpp"

namespace subadapt {

void validate_dims(const ModelDims& dims) {
    if (dims.d_in == 0 || dims.t_len == 0 || dims.d_seq == 0 || dims.d_emb == 0 ||
        dims.n_classes == 0) {
        throw ContractError("model dimensions must all be positive");
    }
}

namespace {

Tensor glorot(Rng& rng, std::size_t out, std::size_t in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor t({out, in});
    for (std::size_t i = 0; i < t.numel(); ++i) t.flat()[i] = rng.uniform(-limit, limit);
    return t;
}

}  // namespace

ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
    validate_dims(dims);
    Rng rng(seed);
    ModelParams p;
    p.dims = dims;
    const std::size_t d = dims.d_in, h = dims.d_seq, e = dims.d_emb, k = dims.n_classes;
    // Weight matrices consume the random stream in this fixed order; biases
    // draw nothing.
    p.gru.w_r = glorot(rng, h, d);
    p.gru.u_r = glorot(rng, h, h);
    p.gru.w_u = glorot(rng, h, d);
    p.gru.u_u = glorot(rng, h, h);
    p.gru.w_c = glorot(rng, h, d);
    p.gru.u_c = glorot(rng, h, h);
    p.emb_w = glorot(rng, e, h);
    p.cls_w = glorot(rng, k, e);
    p.gru.b_r = Tensor::zeros({h});
    p.gru.b_u = Tensor::zeros({h});
    p.gru.b_c = Tensor::zeros({h});
    p.emb_b = Tensor::zeros({e});
    p.cls_b = Tensor::zeros({k});
    return p;
}

ModelParams zero_params(const ModelDims& dims) {
    validate_dims(dims);
    ModelParams p;
    p.dims = dims;
    const std::size_t d = dims.d_in, h = dims.d_seq, e = dims.d_emb, k = dims.n_classes;
    p.gru.w_r = Tensor::zeros({h, d});
    p.gru.u_r = Tensor::zeros({h, h});
    p.gru.b_r = Tensor::zeros({h});
    p.gru.w_u = Tensor::zeros({h, d});
    p.gru.u_u = Tensor::zeros({h, h});
    p.gru.b_u = Tensor::zeros({h});
    p.gru.w_c = Tensor::zeros({h, d});
    p.gru.u_c = Tensor::zeros({h, h});
    p.gru.b_c = Tensor::zeros({h});
    p.emb_w = Tensor::zeros({e, h});
    p.emb_b = Tensor::zeros({e});
    p.cls_w = Tensor::zeros({k, e});
    p.cls_b = Tensor::zeros({k});
    return p;
}

Tensor flatten_params(const ModelParams& params) {
    std::vector<double> flat;
    params.for_each_tensor([&](const char*, const Tensor& t) {
        flat.insert(flat.end(), t.data().begin(), t.data().end());
    });
    return Tensor::vec(std::move(flat));
}

ModelParams unflatten_params(const ModelDims& dims, const Tensor& flat) {
    if (flat.ndim() != 1) throw DimError("flat parameter tensor must be rank 1, got " + flat.shape_str());
    ModelParams p = zero_params(dims);
    std::size_t at = 0;
    p.for_each_tensor([&](const char* name, Tensor& t) {
        if (at + t.numel() > flat.numel())
            throw DimError(std::string("flat parameter vector too short at tensor ") + name);
        std::copy(flat.data().begin() + static_cast<std::ptrdiff_t>(at),
                  flat.data().begin() + static_cast<std::ptrdiff_t>(at + t.numel()),
                  t.flat().begin());
        at += t.numel();
    });
    if (at != flat.numel())
        throw DimError("flat parameter vector has " + std::to_string(flat.numel()) +
                       " values, model needs " + std::to_string(at));
    return p;
}

ParamNodes stage_params(Tape& tape, const ModelParams& params) {
    ParamNodes nodes;
    std::size_t i = 0;
    params.for_each_tensor([&](const char*, const Tensor& t) { nodes.ids[i++] = tape.leaf(t); });
    return nodes;
}

namespace {

Tensor timestep_matrix(const std::vector<SampleView>& batch, std::size_t d, std::size_t t) {
    Tensor x({batch.size(), d});
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Tensor& sig = *batch[b].signal;
        for (std::size_t c = 0; c < d; ++c) x.at(b, c) = sig.data()[c * sig.cols() + t];
    }
    return x;
}

int run_gru(Tape& tape, const ParamNodes& n, const ModelDims& dims,
            const std::vector<SampleView>& batch) {
    int h = tape.leaf(Tensor::zeros({batch.size(), dims.d_seq}));
    for (std::size_t t = 0; t < dims.t_len; ++t) {
        h = tape.gru_cell(h, n.w_r(), n.u_r(), n.b_r(), n.w_u(), n.u_u(), n.b_u(), n.w_c(),
                          n.u_c(), n.b_c(), timestep_matrix(batch, dims.d_in, t));
    }
    return h;
}

int embed_rows(Tape& tape, const ParamNodes& n, int z) {
    return tape.leaky_relu(tape.add_rowvec(tape.matmul_nt(z, n.emb_w()), n.emb_b()),
                           kEmbedLeakAlpha);
}

int classify_rows(Tape& tape, const ParamNodes& n, int w) {
    return tape.add_rowvec(tape.matmul_nt(w, n.cls_w()), n.cls_b());
}

}  // namespace

int gru_forward(Tape& tape, const ParamNodes& nodes, const ModelDims& dims, const Tensor& x) {
    if (x.ndim() != 2 || x.rows() != dims.d_in || x.cols() != dims.t_len) {
        throw DimError("gru_forward input " + shape_str(x.shape()) + " does not match [" +
                       std::to_string(dims.d_in) + "x" + std::to_string(dims.t_len) + "]");
    }
    const SampleView view{&x, 0, 0};
    const int h = run_gru(tape, nodes, dims, {view});
    return tape.reshape(h, {dims.d_seq});
}

int embed(Tape& tape, const ParamNodes& nodes, int z) {
    const Tensor& zv = tape.value(z);
    if (zv.ndim() != 1) {
        throw DimError("embed expects a feature vector, got " + shape_str(zv.shape()));
    }
    const int row = tape.reshape(z, {std::size_t{1}, zv.numel()});
    return tape.reshape(embed_rows(tape, nodes, row), {tape.value(nodes.emb_b()).numel()});
}

int classify(Tape& tape, const ParamNodes& nodes, int w) {
    const Tensor& wv = tape.value(w);
    if (wv.ndim() != 1) {
        throw DimError("classify expects a feature vector, got " + shape_str(wv.shape()));
    }
    const int row = tape.reshape(w, {std::size_t{1}, wv.numel()});
    return tape.reshape(classify_rows(tape, nodes, row), {tape.value(nodes.cls_b()).numel()});
}

BatchForward forward_batch(Tape& tape, const ParamNodes& nodes, const ModelDims& dims,
                           const std::vector<SampleView>& batch) {
    if (batch.empty()) {
        throw ContractError("forward_batch needs at least one sample");
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Tensor* sig = batch[b].signal;
        if (sig == nullptr || sig->ndim() != 2 || sig->rows() != dims.d_in ||
            sig->cols() != dims.t_len) {
            throw DimError("batch row " + std::to_string(b) + " signal " +
                           (sig ? shape_str(sig->shape()) : std::string("(null)")) +
                           " does not match [" + std::to_string(dims.d_in) + "x" +
                           std::to_string(dims.t_len) + "]");
        }
    }
    BatchForward out;
    out.z_node = run_gru(tape, nodes, dims, batch);
    out.w_node = embed_rows(tape, nodes, out.z_node);
    out.logits_node = classify_rows(tape, nodes, out.w_node);
    out.subjects.reserve(batch.size());
    out.labels.reserve(batch.size());
    for (const SampleView& s : batch) {
        out.subjects.push_back(s.subject_id);
        out.labels.push_back(s.label);
    }
    return out;
}

}  // namespace subadapt
