// Microbenchmarks for the hot paths of a training step: the batched GRU
// sweep, the alignment loss, and one full forward/backward/update cycle.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "subadapt/alignment.hpp"
#include "subadapt/model.hpp"
#include "subadapt/rng.hpp"
#include "subadapt/tape.hpp"
#include "subadapt/trainer.hpp"

namespace {

using namespace subadapt;

Tensor rand_tensor(Rng& rng, std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.flat()) v = rng.normal();
    return t;
}

struct BatchFixture {
    ModelDims dims;
    ModelParams params;
    std::vector<Tensor> signals;
    std::vector<SampleView> batch;

    BatchFixture(std::size_t batch_size, std::size_t d_in, std::size_t t_len) {
        dims.d_in = d_in;
        dims.t_len = t_len;
        dims.d_seq = d_in;
        dims.d_emb = d_in;
        dims.n_classes = 5;
        params = init_params(dims, 1);
        Rng rng(2);
        signals.reserve(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i)
            signals.push_back(rand_tensor(rng, {d_in, t_len}));
        for (std::size_t i = 0; i < batch_size; ++i)
            batch.push_back({&signals[i], static_cast<int>(i % 2),
                             static_cast<int>(i % dims.n_classes)});
    }
};

void BM_gru_forward(benchmark::State& state) {
    BatchFixture fix(static_cast<std::size_t>(state.range(0)), 16, 160);
    for (auto _ : state) {
        Tape tape;
        ParamNodes nodes = stage_params(tape, fix.params);
        BatchForward fwd = forward_batch(tape, nodes, fix.dims, fix.batch);
        benchmark::DoNotOptimize(tape.value(fwd.logits_node).data().data());
    }
}
BENCHMARK(BM_gru_forward)->Arg(8)->Arg(64)->Arg(256);

void BM_train_step(benchmark::State& state) {
    BatchFixture fix(static_cast<std::size_t>(state.range(0)), 16, 160);
    TrainConfig cfg;
    cfg.mode = TrainMode::Ours;
    AdamState adam = init_adam(fix.params);
    for (auto _ : state) {
        Tape tape;
        ParamNodes nodes = stage_params(tape, fix.params);
        BatchForward fwd = forward_batch(tape, nodes, fix.dims, fix.batch);
        KernelBank bank = make_default_bank(median_heuristic(tape.value(fwd.z_node)));
        LossNodes loss = total_loss(tape, fwd, cfg, &bank, 1);
        auto grads_all = tape.backward(loss.total);
        std::vector<Tensor> grads;
        grads.reserve(kParamTensorCount);
        for (int id : nodes.ids) grads.push_back(grads_all[static_cast<std::size_t>(id)]);
        adam_step(fix.params, grads, adam, cfg);
        benchmark::DoNotOptimize(fix.params.cls_b.data().data());
    }
}
BENCHMARK(BM_train_step)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_mmd2(benchmark::State& state) {
    Rng rng(3);
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Tensor a = rand_tensor(rng, {n, 16});
    Tensor b = rand_tensor(rng, {n, 16});
    KernelBank bank = make_default_bank(16.0);
    for (auto _ : state) {
        Tape tape;
        int v = mmd2(tape, tape.leaf(a), tape.leaf(b), bank);
        benchmark::DoNotOptimize(tape.value(v).item());
    }
}
BENCHMARK(BM_mmd2)->Arg(32)->Arg(128)->Arg(512);

void BM_median_heuristic(benchmark::State& state) {
    Rng rng(4);
    Tensor feats = rand_tensor(rng, {static_cast<std::size_t>(state.range(0)), 16});
    for (auto _ : state) benchmark::DoNotOptimize(median_heuristic(feats));
}
BENCHMARK(BM_median_heuristic)->Arg(64)->Arg(455);

}  // namespace

BENCHMARK_MAIN();
