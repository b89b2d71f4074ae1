// Shared test fixtures: seeded random tensors, a scratch directory that
// cleans up after itself, and a tiny end-to-end training pipeline whose
// loss can be probed as a function of the flattened parameter vector.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "subadapt/alignment.hpp"
#include "subadapt/error.hpp"
#include "subadapt/grad_check.hpp"
#include "subadapt/model.hpp"
#include "subadapt/rng.hpp"
#include "subadapt/tape.hpp"
#include "subadapt/tensor.hpp"
#include "subadapt/trainer.hpp"

namespace testsupport {

inline subadapt::Tensor rand_tensor(subadapt::Rng& rng, std::vector<std::size_t> shape,
                                    double scale = 1.0) {
    subadapt::Tensor t = subadapt::Tensor::zeros(std::move(shape));
    for (double& v : t.flat()) v = scale * rng.normal();
    return t;
}

// Nudges every element away from zero so piecewise-linear ops stay on one
// piece across a central-difference probe.
inline subadapt::Tensor rand_tensor_off_kink(subadapt::Rng& rng,
                                             std::vector<std::size_t> shape) {
    subadapt::Tensor t = rand_tensor(rng, std::move(shape));
    for (double& v : t.flat()) v += (v >= 0.0 ? 0.1 : -0.1);
    return t;
}

inline subadapt::Tensor rand_positive(subadapt::Rng& rng, std::vector<std::size_t> shape) {
    subadapt::Tensor t = subadapt::Tensor::zeros(std::move(shape));
    for (double& v : t.flat()) v = 0.3 + std::abs(rng.normal());
    return t;
}

// Unique scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::uint64_t counter = 0;
        subadapt::Rng rng(subadapt::mix_seed(0x74657374u, ++counter,
                                             static_cast<std::uint64_t>(
                                                 std::chrono::steady_clock::now()
                                                     .time_since_epoch()
                                                     .count())));
        std::ostringstream name;
        name << "subadapt-test-" << std::hex << rng.next_u64();
        path_ = std::filesystem::temp_directory_path() / name.str();
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

// Tiny two-subject batch through the full model. The kernel bandwidth is
// fixed at construction so the probed loss is a pure function of the
// parameters. The fixture must outlive the ScalarFn it hands out.
struct ToyPipeline {
    subadapt::ModelDims dims;
    std::vector<subadapt::Tensor> signals;
    std::vector<int> subjects;
    std::vector<int> labels;
    subadapt::TrainConfig cfg;
    subadapt::ModelParams params0;
    subadapt::KernelBank bank;
    int target_subject = 1;

    std::vector<subadapt::SampleView> views() const {
        std::vector<subadapt::SampleView> batch;
        batch.reserve(signals.size());
        for (std::size_t i = 0; i < signals.size(); ++i)
            batch.push_back({&signals[i], subjects[i], labels[i]});
        return batch;
    }

    subadapt::ScalarFn loss_fn() const {
        return [this](const subadapt::Tensor& flat, subadapt::Tensor* grad) {
            subadapt::ModelParams p = subadapt::unflatten_params(dims, flat);
            subadapt::Tape tape;
            subadapt::ParamNodes nodes = subadapt::stage_params(tape, p);
            auto batch = views();
            subadapt::BatchForward fwd = subadapt::forward_batch(tape, nodes, dims, batch);
            subadapt::LossNodes loss =
                subadapt::total_loss(tape, fwd, cfg, &bank, target_subject);
            if (grad) {
                auto g = tape.backward(loss.total);
                std::vector<double> cat;
                for (int id : nodes.ids) {
                    const subadapt::Tensor& gi = g[static_cast<std::size_t>(id)];
                    cat.insert(cat.end(), gi.data().begin(), gi.data().end());
                }
                *grad = subadapt::Tensor::vec(std::move(cat));
            }
            return tape.value(loss.total).item();
        };
    }

    subadapt::Tensor at() const { return subadapt::flatten_params(params0); }
};

inline ToyPipeline make_toy_pipeline(subadapt::MmdLocation loc, std::uint64_t seed) {
    ToyPipeline toy;
    toy.dims.d_in = 6;
    toy.dims.t_len = 5;
    toy.dims.d_seq = 4;
    toy.dims.d_emb = 4;
    toy.dims.n_classes = 3;
    toy.subjects = {0, 0, 0, 0, 1, 1, 1, 1};
    toy.labels = {0, 1, 2, 0, 0, 1, 2, 1};

    subadapt::Rng rng(subadapt::mix_seed(seed, 0x746f7970u));
    toy.signals.reserve(toy.subjects.size());
    for (std::size_t i = 0; i < toy.subjects.size(); ++i)
        toy.signals.push_back(rand_tensor(rng, {toy.dims.d_in, toy.dims.t_len}));

    toy.cfg.mode = subadapt::TrainMode::Ours;
    toy.cfg.lambda = 1.0;
    toy.cfg.mmd_location = loc;
    toy.params0 = subadapt::init_params(toy.dims, subadapt::mix_seed(seed, 0x70617231u));

    subadapt::Tape tape;
    subadapt::ParamNodes nodes = subadapt::stage_params(tape, toy.params0);
    auto batch = toy.views();
    subadapt::BatchForward fwd = subadapt::forward_batch(tape, nodes, toy.dims, batch);
    int feat = loc == subadapt::MmdLocation::AfterF ? fwd.z_node : fwd.w_node;
    toy.bank = subadapt::make_default_bank(subadapt::median_heuristic(tape.value(feat)));
    return toy;
}

}  // namespace testsupport
