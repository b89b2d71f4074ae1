#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "subadapt/alignment.hpp"
#include "subadapt/dataio.hpp"
#include "subadapt/model.hpp"
#include "subadapt/tape.hpp"

namespace subadapt {

/// Where the alignment loss reads features: encoder output z or embedded w.
enum class MmdLocation { AfterF, AfterG };

enum class TrainMode { KshotOnly, Vanilla, Ours };

std::string to_string(MmdLocation loc);
std::string to_string(TrainMode mode);
MmdLocation parse_mmd_location(const std::string& text);
TrainMode parse_mode(const std::string& text);

struct TrainConfig {
    double lr = 1e-3;
    double lambda = 1.0;
    std::size_t epochs = 200;
    MmdLocation mmd_location = MmdLocation::AfterF;
    TrainMode mode = TrainMode::Ours;
    std::size_t per_source_count = 200;
    std::uint64_t seed = 0;
    bool deterministic = true;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t d_seq = 0;  // 0 means: match the input channel count
    std::size_t d_emb = 0;  // 0 means: match the input channel count
};

void validate_config(const TrainConfig& config);

/// Node ids of the assembled losses. disc is -1 when no alignment term was
/// recorded; total then aliases cls so both modes follow the same
/// computation path.
struct LossNodes {
    int total = -1;
    int cls = -1;
    int disc = -1;
};

/// L_total = L_cls + lambda * L_disc. L_cls is the mean cross-entropy over
/// all batch rows, except in mode kshot_only where only rows of
/// target_subject enter. L_disc groups features (z or w per mmd_location) by
/// subject and runs the pairwise discrepancy; it is recorded only when mode
/// is ours and lambda is nonzero, and bank must then be non-null. Mode ours
/// demands at least 2 subjects in the batch regardless of lambda.
LossNodes total_loss(Tape& tape, const BatchForward& fwd, const TrainConfig& config,
                     const KernelBank* bank, int target_subject);

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t t = 0;
};

AdamState init_adam(const ModelParams& params);

/// Standard bias-corrected update: theta -= lr * m_hat / (sqrt(v_hat) + eps).
/// grads align with the parameter serialization order.
void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& config);

struct EpochStats {
    std::size_t epoch = 0;  // zero-based
    double l_cls = 0.0;     // mean over the epoch's steps
    double l_disc = 0.0;
    double val_top1 = 0.0;
};

struct FitResult {
    ModelParams params;  // best by validation top-1, ties to the earlier epoch
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
};

FitResult fit(const Dataset& dataset, const EpisodeSplit& split, const TrainConfig& config);

/// Percentage of rows whose label sits among the k largest logits. Ties are
/// broken toward the lower class index.
double topk_accuracy(const Tensor& logits, const std::vector<int>& labels, int k);

std::vector<const EEGRecord*> gather_records(const Dataset& dataset,
                                             const std::vector<std::size_t>& indices);

/// Top-k accuracy per requested k over the given records.
std::map<int, double> evaluate(const ModelParams& params,
                               const std::vector<const EEGRecord*>& records,
                               const std::vector<int>& ks = {1, 3});

struct Protocol {
    int target_subject = 0;
    int k = 1;
    std::vector<TrainMode> modes = {TrainMode::KshotOnly, TrainMode::Vanilla, TrainMode::Ours};
    std::size_t n_runs = 5;
    double val_fraction = 1.0 / 6.0;
    double test_fraction = 1.0 / 6.0;
};

/// One training run's scores plus the resolved configuration it ran under.
struct RunRecord {
    std::string mode;  // row label; the ablation tool appends the location
    int run = 0;
    int k = 0;
    int target_subject = 0;
    std::uint64_t seed = 0;  // effective seed (base + run index)
    double val_top1 = 0, val_top3 = 0;
    double test_top1 = 0, test_top3 = 0;
    double first_l_disc = 0, final_l_disc = 0;
    std::size_t best_epoch = 0;
    TrainConfig config;
};

struct CellStats {
    double mean = 0.0;
    double stddev = 0.0;  // population form, divides by n
};

struct ModeAggregate {
    std::string mode;
    int k = 0;
    int target_subject = 0;
    std::size_t n_runs = 0;
    CellStats val_top1, val_top3, test_top1, test_top3;
};

struct MetricsReport {
    std::vector<RunRecord> runs;
    std::vector<ModeAggregate> aggregates;
};

/// Groups runs by (mode, k, target) and computes mean/std per cell. Rows are
/// ordered kshot_only, vanilla, ours, then other labels lexicographically,
/// then by k and target.
std::vector<ModeAggregate> aggregate_runs(const std::vector<RunRecord>& runs);

/// For each run r: builds an episode with seed base+r, fits every requested
/// mode on it, scores validation and test, and aggregates.
MetricsReport run_experiment(const Dataset& dataset, const Protocol& protocol,
                             const TrainConfig& config);

}  // namespace subadapt
