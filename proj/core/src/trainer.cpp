#include "subadapt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "subadapt/error.hpp"
#include "subadapt/rng.hpp"

namespace subadapt {

namespace {
constexpr std::uint64_t kTagInit = 0x696e6974u;   // "init"
constexpr std::uint64_t kTagBatch = 0x62617463u;  // "batc"
}  // namespace

std::string to_string(MmdLocation loc) {
    return loc == MmdLocation::AfterF ? "after_f" : "after_g";
}

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::KshotOnly: return "kshot_only";
        case TrainMode::Vanilla: return "vanilla";
        case TrainMode::Ours: return "ours";
    }
    throw ContractError("unknown training mode value");
}

MmdLocation parse_mmd_location(const std::string& text) {
    if (text == "after_f") return MmdLocation::AfterF;
    if (text == "after_g") return MmdLocation::AfterG;
    throw ContractError("unknown alignment location \"" + text +
                        "\", expected after_f or after_g");
}

TrainMode parse_mode(const std::string& text) {
    if (text == "kshot_only") return TrainMode::KshotOnly;
    if (text == "vanilla") return TrainMode::Vanilla;
    if (text == "ours") return TrainMode::Ours;
    throw ContractError("unknown training mode \"" + text +
                        "\", expected kshot_only, vanilla, or ours");
}

void validate_config(const TrainConfig& config) {
    if (!(config.lr > 0.0)) {
        throw ContractError("learning rate must be positive");
    }
    if (!(config.lambda >= 0.0)) {
        throw ContractError("lambda must be non-negative");
    }
    if (config.epochs < 1) {
        throw ContractError("epoch count must be at least 1");
    }
    if (config.per_source_count < 1) {
        throw ContractError("per-source sample count must be at least 1");
    }
    if (!(config.beta1 > 0.0 && config.beta1 < 1.0 && config.beta2 > 0.0 &&
          config.beta2 < 1.0 && config.adam_eps > 0.0)) {
        throw ContractError("adam hyperparameters out of range");
    }
}

LossNodes total_loss(Tape& tape, const BatchForward& fwd, const TrainConfig& config,
                     const KernelBank* bank, int target_subject) {
    LossNodes out;
    if (config.mode == TrainMode::KshotOnly) {
        std::vector<int> rows;
        std::vector<int> labels;
        for (std::size_t i = 0; i < fwd.subjects.size(); ++i) {
            if (fwd.subjects[i] == target_subject) {
                rows.push_back(static_cast<int>(i));
                labels.push_back(fwd.labels[i]);
            }
        }
        if (rows.empty()) {
            throw ContractError("no rows of target subject " + std::to_string(target_subject) +
                                " in the batch");
        }
        out.cls = tape.cross_entropy_mean_rows(tape.gather_rows(fwd.logits_node, rows), labels);
        out.total = out.cls;
        return out;
    }

    out.cls = tape.cross_entropy_mean_rows(fwd.logits_node, fwd.labels);
    out.total = out.cls;

    if (config.mode == TrainMode::Ours) {
        std::vector<int> subjects(fwd.subjects);
        std::sort(subjects.begin(), subjects.end());
        subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
        if (subjects.size() < 2) {
            throw ContractError("alignment needs at least 2 subjects in the batch, got " +
                                std::to_string(subjects.size()));
        }
        if (config.lambda != 0.0) {
            if (bank == nullptr) {
                throw ContractError("alignment requires a kernel bank");
            }
            const int features =
                config.mmd_location == MmdLocation::AfterF ? fwd.z_node : fwd.w_node;
            std::vector<int> groups;
            groups.reserve(subjects.size());
            for (int s : subjects) {
                std::vector<int> rows;
                for (std::size_t i = 0; i < fwd.subjects.size(); ++i) {
                    if (fwd.subjects[i] == s) rows.push_back(static_cast<int>(i));
                }
                groups.push_back(tape.gather_rows(features, rows));
            }
            out.disc = discrepancy_loss(tape, groups, *bank);
            out.total = tape.add(out.cls, tape.scale(out.disc, config.lambda));
        }
    }
    return out;
}

AdamState init_adam(const ModelParams& params) {
    AdamState state;
    params.for_each_tensor([&](const char*, const Tensor& t) {
        state.m.push_back(Tensor::zeros(t.shape()));
        state.v.push_back(Tensor::zeros(t.shape()));
    });
    return state;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& config) {
    if (grads.size() != kParamTensorCount || state.m.size() != kParamTensorCount) {
        throw ContractError("adam_step needs one gradient per parameter tensor");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    std::size_t i = 0;
    params.for_each_tensor([&](const char* name, Tensor& theta) {
        const Tensor& g = grads[i];
        if (!g.same_shape(theta)) {
            throw DimError(std::string("gradient for ") + name + " has shape " +
                           shape_str(g.shape()) + ", expected " + shape_str(theta.shape()));
        }
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t e = 0; e < theta.numel(); ++e) {
            const double ge = g.data()[e];
            m.flat()[e] = config.beta1 * m.data()[e] + (1.0 - config.beta1) * ge;
            v.flat()[e] = config.beta2 * v.data()[e] + (1.0 - config.beta2) * ge * ge;
            const double m_hat = m.data()[e] / bc1;
            const double v_hat = v.data()[e] / bc2;
            theta.flat()[e] -= config.lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
        }
        ++i;
    });
}

std::vector<const EEGRecord*> gather_records(const Dataset& dataset,
                                             const std::vector<std::size_t>& indices) {
    std::vector<const EEGRecord*> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= dataset.records.size()) {
            throw IndexError("record index " + std::to_string(i) + " out of range for " +
                             std::to_string(dataset.records.size()) + " records");
        }
        out.push_back(&dataset.records[i]);
    }
    return out;
}

double topk_accuracy(const Tensor& logits, const std::vector<int>& labels, int k) {
    if (logits.ndim() != 2) {
        throw DimError("topk_accuracy expects a logit matrix, got " +
                       shape_str(logits.shape()));
    }
    if (labels.size() != logits.rows()) {
        throw DimError("label count " + std::to_string(labels.size()) +
                       " does not match logit rows " + std::to_string(logits.rows()));
    }
    if (k < 1) {
        throw ContractError("k must be at least 1");
    }
    const std::size_t n = logits.rows(), classes = logits.cols();
    std::size_t hits = 0;
    for (std::size_t r = 0; r < n; ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw IndexError("label " + std::to_string(label) + " out of range for " +
                             std::to_string(classes) + " classes at row " + std::to_string(r));
        }
        const double* row = logits.data().data() + r * classes;
        const double lv = row[static_cast<std::size_t>(label)];
        // Rank = how many classes would be listed before the label when
        // sorting by (logit desc, class index asc).
        std::size_t rank = 0;
        for (std::size_t j = 0; j < classes; ++j) {
            if (row[j] > lv || (row[j] == lv && j < static_cast<std::size_t>(label))) ++rank;
        }
        if (rank < static_cast<std::size_t>(k)) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

std::map<int, double> evaluate(const ModelParams& params,
                               const std::vector<const EEGRecord*>& records,
                               const std::vector<int>& ks) {
    if (records.empty()) {
        throw ContractError("evaluate needs at least one record");
    }
    if (ks.empty()) {
        throw ContractError("evaluate needs at least one k");
    }
    std::vector<SampleView> views;
    views.reserve(records.size());
    std::vector<int> labels;
    labels.reserve(records.size());
    for (const EEGRecord* rec : records) {
        views.push_back({&rec->signal, rec->subject_id, rec->label});
        labels.push_back(rec->label);
    }
    Tape tape;
    const ParamNodes nodes = stage_params(tape, params);
    const BatchForward fwd = forward_batch(tape, nodes, params.dims, views);
    const Tensor& logits = tape.value(fwd.logits_node);
    std::map<int, double> out;
    for (int k : ks) out[k] = topk_accuracy(logits, labels, k);
    return out;
}

FitResult fit(const Dataset& dataset, const EpisodeSplit& split, const TrainConfig& config) {
    validate_config(config);
    const DatasetHeader& h = dataset.header;
    ModelDims dims;
    dims.d_in = h.n_channels;
    dims.t_len = h.n_timesteps;
    dims.d_seq = config.d_seq != 0 ? config.d_seq : h.n_channels;
    dims.d_emb = config.d_emb != 0 ? config.d_emb : h.n_channels;
    dims.n_classes = h.n_classes;

    ModelParams params = init_params(dims, mix_seed(config.seed, kTagInit));
    AdamState adam = init_adam(params);
    Rng batch_rng(mix_seed(config.seed, kTagBatch));

    std::size_t max_source = 0;
    for (const auto& pool : split.source_records) max_source = std::max(max_source, pool.size());
    const std::size_t steps =
        std::max<std::size_t>(1, (max_source + config.per_source_count - 1) /
                                     config.per_source_count);

    const std::vector<const EEGRecord*> val_records = gather_records(dataset, split.target_val);
    const BatchSpec spec{config.per_source_count, true, 0};

    FitResult result;
    result.history.reserve(config.epochs);
    double best_top1 = -1.0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double cls_sum = 0.0, disc_sum = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            // kshot_only trains on exactly the target rows the composed batch
            // would carry, so source records are never forwarded in that mode.
            std::vector<std::size_t> indices;
            if (config.mode == TrainMode::KshotOnly) {
                indices = split.target_train;
            } else {
                indices = compose_batch(split, spec, batch_rng);
            }
            std::vector<SampleView> views;
            views.reserve(indices.size());
            for (std::size_t idx : indices) {
                const EEGRecord& rec = dataset.records[idx];
                views.push_back({&rec.signal, rec.subject_id, rec.label});
            }

            Tape tape;
            const ParamNodes nodes = stage_params(tape, params);
            const BatchForward fwd = forward_batch(tape, nodes, dims, views);

            KernelBank bank;
            const KernelBank* bank_ptr = nullptr;
            if (config.mode == TrainMode::Ours && config.lambda != 0.0) {
                const int feat =
                    config.mmd_location == MmdLocation::AfterF ? fwd.z_node : fwd.w_node;
                bank = make_default_bank(median_heuristic(tape.value(feat)));
                bank_ptr = &bank;
            }
            const LossNodes loss =
                total_loss(tape, fwd, config, bank_ptr, split.target_subject);

            const double total = tape.value(loss.total).item();
            if (!std::isfinite(total)) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                                      " step " + std::to_string(step));
            }
            cls_sum += tape.value(loss.cls).item();
            disc_sum += loss.disc >= 0 ? tape.value(loss.disc).item() : 0.0;

            const std::vector<Tensor> grad = tape.backward(loss.total);
            std::vector<Tensor> param_grads;
            param_grads.reserve(kParamTensorCount);
            for (int id : nodes.ids) param_grads.push_back(grad[static_cast<std::size_t>(id)]);
            adam_step(params, param_grads, adam, config);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.l_cls = cls_sum / static_cast<double>(steps);
        stats.l_disc = disc_sum / static_cast<double>(steps);
        stats.val_top1 = val_records.empty() ? 0.0 : evaluate(params, val_records, {1}).at(1);
        result.history.push_back(stats);

        if (stats.val_top1 > best_top1) {
            best_top1 = stats.val_top1;
            result.best_epoch = epoch;
            result.params = params;
        }
    }
    if (val_records.empty()) {
        // No validation data to select on: keep the final parameters.
        result.params = std::move(params);
        result.best_epoch = config.epochs - 1;
    }
    return result;
}

std::vector<ModeAggregate> aggregate_runs(const std::vector<RunRecord>& runs) {
    auto mode_rank = [](const std::string& mode) {
        if (mode == "kshot_only") return 0;
        if (mode == "vanilla") return 1;
        if (mode == "ours") return 2;
        return 3;
    };
    struct Key {
        std::string mode;
        int k;
        int target;
    };
    std::vector<Key> keys;
    for (const RunRecord& r : runs) {
        const bool seen = std::any_of(keys.begin(), keys.end(), [&](const Key& key) {
            return key.mode == r.mode && key.k == r.k && key.target == r.target_subject;
        });
        if (!seen) keys.push_back({r.mode, r.k, r.target_subject});
    }
    std::sort(keys.begin(), keys.end(), [&](const Key& a, const Key& b) {
        const int ra = mode_rank(a.mode), rb = mode_rank(b.mode);
        if (ra != rb) return ra < rb;
        if (a.mode != b.mode) return a.mode < b.mode;
        if (a.k != b.k) return a.k < b.k;
        return a.target < b.target;
    });

    auto cell = [](const std::vector<double>& xs) {
        CellStats c;
        for (double x : xs) c.mean += x;
        c.mean /= static_cast<double>(xs.size());
        double sq = 0.0;
        for (double x : xs) sq += (x - c.mean) * (x - c.mean);
        c.stddev = std::sqrt(sq / static_cast<double>(xs.size()));
        return c;
    };

    std::vector<ModeAggregate> out;
    for (const Key& key : keys) {
        std::vector<double> v1, v3, t1, t3;
        for (const RunRecord& r : runs) {
            if (r.mode != key.mode || r.k != key.k || r.target_subject != key.target) continue;
            v1.push_back(r.val_top1);
            v3.push_back(r.val_top3);
            t1.push_back(r.test_top1);
            t3.push_back(r.test_top3);
        }
        ModeAggregate agg;
        agg.mode = key.mode;
        agg.k = key.k;
        agg.target_subject = key.target;
        agg.n_runs = v1.size();
        agg.val_top1 = cell(v1);
        agg.val_top3 = cell(v3);
        agg.test_top1 = cell(t1);
        agg.test_top3 = cell(t3);
        out.push_back(std::move(agg));
    }
    return out;
}

MetricsReport run_experiment(const Dataset& dataset, const Protocol& protocol,
                             const TrainConfig& config) {
    if (protocol.n_runs < 1) {
        throw ContractError("experiment needs at least 1 run");
    }
    if (protocol.modes.empty()) {
        throw ContractError("experiment needs at least one mode");
    }
    MetricsReport report;
    for (std::size_t r = 0; r < protocol.n_runs; ++r) {
        const std::uint64_t run_seed = config.seed + r;
        const EpisodeSplit split =
            build_episode(dataset, protocol.target_subject, protocol.k, run_seed,
                          protocol.val_fraction, protocol.test_fraction);
        const std::vector<const EEGRecord*> val = gather_records(dataset, split.target_val);
        const std::vector<const EEGRecord*> test = gather_records(dataset, split.target_test);
        for (TrainMode mode : protocol.modes) {
            TrainConfig cfg = config;
            cfg.mode = mode;
            cfg.seed = run_seed;
            const FitResult fitted = fit(dataset, split, cfg);

            RunRecord rec;
            rec.mode = to_string(mode);
            rec.run = static_cast<int>(r);
            rec.k = protocol.k;
            rec.target_subject = protocol.target_subject;
            rec.seed = run_seed;
            rec.config = cfg;
            if (!val.empty()) {
                const auto scores = evaluate(fitted.params, val);
                rec.val_top1 = scores.at(1);
                rec.val_top3 = scores.at(3);
            }
            if (!test.empty()) {
                const auto scores = evaluate(fitted.params, test);
                rec.test_top1 = scores.at(1);
                rec.test_top3 = scores.at(3);
            }
            rec.first_l_disc = fitted.history.front().l_disc;
            rec.final_l_disc = fitted.history.back().l_disc;
            rec.best_epoch = fitted.best_epoch;
            report.runs.push_back(std::move(rec));
        }
    }
    report.aggregates = aggregate_runs(report.runs);
    return report;
}

}  // namespace subadapt
