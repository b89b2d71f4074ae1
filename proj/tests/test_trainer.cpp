#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "doctest.h"
#include "subadapt/error.hpp"
#include "subadapt/synthgen.hpp"
#include "subadapt/trainer.hpp"
#include "support.hpp"

using namespace subadapt;
using testsupport::rand_tensor;

namespace {

SynthConfig tiny_synth(std::uint64_t seed = 3) {
    SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.n_classes = 2;
    cfg.per_class = 8;
    cfg.n_channels = 3;
    cfg.n_timesteps = 6;
    cfg.shift_strength = 0.8;
    cfg.noise_std = 0.3;
    cfg.seed = seed;
    return cfg;
}

TrainConfig tiny_config(TrainMode mode) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.epochs = 3;
    cfg.seed = 5;
    return cfg;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
    bool equal = true;
    std::size_t idx = 0;
    std::vector<const Tensor*> bt;
    b.for_each_tensor([&](const char*, const Tensor& t) { bt.push_back(&t); });
    a.for_each_tensor([&](const char*, const Tensor& t) {
        equal = equal && t.data() == bt[idx]->data();
        ++idx;
    });
    return equal;
}

struct LossFixture {
    ModelDims dims;
    ModelParams params;
    std::vector<Tensor> signals;
    std::vector<SampleView> batch;
    Tape tape;
    BatchForward fwd;
    KernelBank bank = make_default_bank(1.0);

    explicit LossFixture(const std::vector<int>& subjects) {
        dims.d_in = 3;
        dims.t_len = 4;
        dims.d_seq = 3;
        dims.d_emb = 3;
        dims.n_classes = 2;
        params = init_params(dims, 9);
        Rng rng(10);
        for (std::size_t i = 0; i < subjects.size(); ++i)
            signals.push_back(rand_tensor(rng, {dims.d_in, dims.t_len}));
        for (std::size_t i = 0; i < subjects.size(); ++i)
            batch.push_back({&signals[i], subjects[i], static_cast<int>(i % 2)});
        ParamNodes nodes = stage_params(tape, params);
        fwd = forward_batch(tape, nodes, dims, batch);
    }
};

}  // namespace

TEST_CASE("mode and location names round-trip") {
    for (TrainMode m : {TrainMode::KshotOnly, TrainMode::Vanilla, TrainMode::Ours})
        CHECK(parse_mode(to_string(m)) == m);
    for (MmdLocation l : {MmdLocation::AfterF, MmdLocation::AfterG})
        CHECK(parse_mmd_location(to_string(l)) == l);
    CHECK(to_string(TrainMode::KshotOnly) == "kshot_only");
    CHECK(to_string(MmdLocation::AfterF) == "after_f");
    CHECK_THROWS_AS((void)parse_mode("bogus"), ContractError);
    CHECK_THROWS_AS((void)parse_mmd_location("bogus"), ContractError);
}

TEST_CASE("validate_config rejects broken settings") {
    TrainConfig cfg;
    validate_config(cfg);
    cfg.lr = 0.0;
    CHECK_THROWS_AS(validate_config(cfg), ContractError);
    cfg = TrainConfig{};
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(validate_config(cfg), ContractError);
    cfg = TrainConfig{};
    cfg.epochs = 0;
    CHECK_THROWS_AS(validate_config(cfg), ContractError);
    cfg = TrainConfig{};
    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(validate_config(cfg), ContractError);
}

TEST_CASE("adam takes the textbook first step") {
    ModelDims dims{1, 1, 1, 1, 1};
    ModelParams p = zero_params(dims);
    AdamState state = init_adam(p);
    TrainConfig cfg;

    std::vector<Tensor> grads;
    p.for_each_tensor([&](const char*, const Tensor& t) {
        Tensor g = t;
        g.fill(1.0);
        grads.push_back(g);
    });
    adam_step(p, grads, state, cfg);
    // Bias correction makes the first step -lr * g / (|g| + eps).
    const double expected = -cfg.lr * (1.0 / (1.0 + cfg.adam_eps));
    p.for_each_tensor([&](const char*, const Tensor& t) {
        for (double v : t.data()) CHECK(v == expected);
    });
    CHECK(state.t == 1);

    // A constant gradient keeps the step size stable.
    adam_step(p, grads, state, cfg);
    p.for_each_tensor([&](const char*, const Tensor& t) {
        for (double v : t.data()) CHECK(std::abs(v - 2.0 * expected) <= 1e-12);
    });

    grads.pop_back();
    CHECK_THROWS_AS(adam_step(p, grads, state, cfg), ContractError);
}

TEST_CASE("topk_accuracy counts ranks with ties to the lower index") {
    Tensor logits = Tensor::matrix(4, 3,
                                   {
                                       1.0, 1.0, 1.0,  // full tie
                                       0.1, 0.9, 0.5,  // clear winner at 1
                                       2.0, 2.0, 0.0,  // tie between 0 and 1
                                       0.0, 1.0, 2.0,  // descending toward 2
                                   });
    // Tie rule: rank counts strictly larger logits plus equal ones at lower index.
    CHECK(topk_accuracy(logits, {0, 1, 1, 2}, 1) == 75.0);
    CHECK(topk_accuracy(logits, {2, 1, 1, 2}, 1) == 50.0);
    CHECK(topk_accuracy(logits, {2, 0, 2, 0}, 2) == 0.0);
    // Row 0 ties across the board, so label 1 sits at rank 1 and only it hits.
    CHECK(topk_accuracy(logits, {1, 0, 2, 0}, 2) == 25.0);
    CHECK(topk_accuracy(logits, {2, 0, 2, 0}, 3) == 100.0);

    CHECK_THROWS_AS((void)topk_accuracy(logits, {0, 1}, 1), DimError);
    CHECK_THROWS_AS((void)topk_accuracy(logits, {0, 1, 1, 9}, 1), IndexError);
    CHECK_THROWS_AS((void)topk_accuracy(logits, {0, 1, 1, 2}, 0), ContractError);
}

TEST_CASE("total_loss in kshot_only mode scores only target rows") {
    LossFixture fix({0, 0, 1, 1});
    TrainConfig cfg = tiny_config(TrainMode::KshotOnly);
    LossNodes loss = total_loss(fix.tape, fix.fwd, cfg, nullptr, 1);
    CHECK(loss.disc == -1);
    CHECK(loss.total == loss.cls);

    // Reference: forward only the target rows on a fresh tape.
    Tape t2;
    ParamNodes nodes = stage_params(t2, fix.params);
    std::vector<SampleView> sub = {{&fix.signals[2], 1, 0}, {&fix.signals[3], 1, 1}};
    BatchForward fwd2 = forward_batch(t2, nodes, fix.dims, sub);
    TrainConfig vanilla = tiny_config(TrainMode::Vanilla);
    LossNodes ref_loss = total_loss(t2, fwd2, vanilla, nullptr, 1);

    CHECK(fix.tape.value(loss.total).item() == t2.value(ref_loss.total).item());

    // No target rows in the batch: nothing to train on.
    LossFixture none({0, 0});
    CHECK_THROWS_AS((void)total_loss(none.tape, none.fwd, cfg, nullptr, 1), ContractError);
}

TEST_CASE("total_loss in vanilla mode is plain cross entropy") {
    LossFixture fix({0, 1, 0, 1});
    TrainConfig cfg = tiny_config(TrainMode::Vanilla);
    std::size_t before = fix.tape.size();
    LossNodes loss = total_loss(fix.tape, fix.fwd, cfg, nullptr, 0);
    CHECK(loss.disc == -1);
    CHECK(loss.total == loss.cls);
    // Exactly one node: the batched cross entropy.
    CHECK(fix.tape.size() == before + 1);
}

TEST_CASE("total_loss in ours mode adds the weighted discrepancy") {
    LossFixture fix({0, 0, 1, 1});
    TrainConfig cfg = tiny_config(TrainMode::Ours);
    cfg.lambda = 0.7;
    LossNodes loss = total_loss(fix.tape, fix.fwd, cfg, &fix.bank, 1);
    CHECK(loss.disc >= 0);
    CHECK(loss.total != loss.cls);
    double cls = fix.tape.value(loss.cls).item();
    double disc = fix.tape.value(loss.disc).item();
    double total = fix.tape.value(loss.total).item();
    CHECK(std::abs(total - (cls + 0.7 * disc)) <= 1e-15);
    CHECK(disc > 0.0);

    // Lambda zero records no alignment nodes and aliases the total.
    LossFixture fix0({0, 0, 1, 1});
    TrainConfig zero = cfg;
    zero.lambda = 0.0;
    std::size_t before = fix0.tape.size();
    LossNodes l0 = total_loss(fix0.tape, fix0.fwd, zero, nullptr, 1);
    CHECK(l0.disc == -1);
    CHECK(l0.total == l0.cls);
    CHECK(fix0.tape.size() == before + 1);

    // A single-subject batch cannot align anything.
    LossFixture solo({1, 1, 1, 1});
    CHECK_THROWS_AS((void)total_loss(solo.tape, solo.fwd, cfg, &solo.bank, 1), ContractError);
    // Missing bank with nonzero lambda is a caller bug.
    LossFixture nobank({0, 0, 1, 1});
    CHECK_THROWS_AS((void)total_loss(nobank.tape, nobank.fwd, cfg, nullptr, 1), ContractError);
}

TEST_CASE("fit on vanilla and ours with lambda 0 is bit-identical") {
    Dataset ds = generate(tiny_synth());
    EpisodeSplit split = build_episode(ds, 0, 2, 5);

    TrainConfig vanilla = tiny_config(TrainMode::Vanilla);
    TrainConfig ours0 = tiny_config(TrainMode::Ours);
    ours0.lambda = 0.0;

    FitResult a = fit(ds, split, vanilla);
    FitResult b = fit(ds, split, ours0);
    CHECK(params_equal(a.params, b.params));
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        CHECK(a.history[e].l_cls == b.history[e].l_cls);
        CHECK(a.history[e].l_disc == b.history[e].l_disc);
        CHECK(a.history[e].val_top1 == b.history[e].val_top1);
    }
    CHECK(a.best_epoch == b.best_epoch);
}

TEST_CASE("fit is deterministic and learns on an easy problem") {
    SynthConfig scfg = tiny_synth();
    scfg.noise_std = 0.1;
    Dataset ds = generate(scfg);
    EpisodeSplit split = build_episode(ds, 1, 3, 2);

    TrainConfig cfg = tiny_config(TrainMode::Ours);
    cfg.epochs = 15;
    cfg.lr = 0.02;
    FitResult a = fit(ds, split, cfg);
    FitResult b = fit(ds, split, cfg);
    CHECK(params_equal(a.params, b.params));

    REQUIRE(a.history.size() == 15);
    CHECK(a.history.back().l_cls < a.history.front().l_cls);
    for (const auto& e : a.history) {
        CHECK(std::isfinite(e.l_cls));
        CHECK(e.l_disc >= 0.0);
    }
    CHECK(a.best_epoch < 15);

    // History epochs are labeled in order.
    for (std::size_t e = 0; e < a.history.size(); ++e) CHECK(a.history[e].epoch == e);
}

TEST_CASE("kshot_only ignores source subjects entirely") {
    // Two datasets that differ only in source-subject records must produce
    // identical kshot_only fits.
    SynthConfig scfg = tiny_synth(8);
    Dataset ds1 = generate(scfg);
    Dataset ds2 = ds1;
    for (auto& rec : ds2.records)
        if (rec.subject_id == 0)
            for (double& v : rec.signal.flat()) v += 100.0;

    EpisodeSplit split = build_episode(ds1, 1, 2, 4);
    TrainConfig cfg = tiny_config(TrainMode::KshotOnly);
    FitResult a = fit(ds1, split, cfg);
    FitResult b = fit(ds2, split, cfg);
    CHECK(params_equal(a.params, b.params));
}

TEST_CASE("evaluate reports percentage scores per k") {
    Dataset ds = generate(tiny_synth());
    EpisodeSplit split = build_episode(ds, 0, 2, 5);
    ModelParams params = init_params(ModelDims{3, 6, 3, 3, 2}, 1);
    auto records = gather_records(ds, split.target_test);
    REQUIRE_FALSE(records.empty());
    auto scores = evaluate(params, records, {1, 2});
    CHECK(scores.count(1) == 1);
    CHECK(scores.count(2) == 1);
    CHECK(scores.at(1) >= 0.0);
    CHECK(scores.at(1) <= 100.0);
    CHECK(scores.at(1) <= scores.at(2));  // larger k can only help

    CHECK_THROWS_AS((void)evaluate(params, {}, {1}), ContractError);
    CHECK_THROWS_AS((void)evaluate(params, records, {}), ContractError);
    CHECK_THROWS_AS((void)gather_records(ds, {9999}), IndexError);
}

TEST_CASE("run_experiment aggregates per mode with shifted seeds") {
    Dataset ds = generate(tiny_synth());
    Protocol proto;
    proto.target_subject = 0;
    proto.k = 2;
    proto.n_runs = 2;
    TrainConfig cfg = tiny_config(TrainMode::Ours);
    cfg.epochs = 2;
    cfg.seed = 40;

    MetricsReport rep = run_experiment(ds, proto, cfg);
    REQUIRE(rep.runs.size() == 6);  // 3 modes x 2 runs
    REQUIRE(rep.aggregates.size() == 3);
    CHECK(rep.aggregates[0].mode == "kshot_only");
    CHECK(rep.aggregates[1].mode == "vanilla");
    CHECK(rep.aggregates[2].mode == "ours");
    for (const auto& agg : rep.aggregates) CHECK(agg.n_runs == 2);

    for (const auto& run : rep.runs) {
        CHECK(run.k == 2);
        CHECK(run.target_subject == 0);
        CHECK((run.seed == 40 || run.seed == 41));
        CHECK(run.config.seed == run.seed);
    }

    // The aggregate mean matches a hand mean over the matching runs.
    double acc = 0.0;
    int n = 0;
    for (const auto& run : rep.runs)
        if (run.mode == "ours") {
            acc += run.test_top1;
            ++n;
        }
    REQUIRE(n == 2);
    CHECK(rep.aggregates[2].test_top1.mean == doctest::Approx(acc / 2.0).epsilon(1e-15));
}
