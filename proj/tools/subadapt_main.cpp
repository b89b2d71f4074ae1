// Command-line surface for the subadapt library: dataset generation,
// training, evaluation, ablations, k sweeps, gradient checking, report
// rendering, and text import. Exit codes: 0 success, 1 runtime or domain
// error, 2 usage error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "subadapt/alignment.hpp"
#include "subadapt/checkpoint.hpp"
#include "subadapt/dataio.hpp"
#include "subadapt/error.hpp"
#include "subadapt/grad_check.hpp"
#include "subadapt/metrics.hpp"
#include "subadapt/model.hpp"
#include "subadapt/rng.hpp"
#include "subadapt/synthgen.hpp"
#include "subadapt/tape.hpp"
#include "subadapt/trainer.hpp"

namespace {

using namespace subadapt;

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << content;
    if (!out) throw Error("short write to " + path);
}

// The resolved configuration is printed on every run. nlohmann orders keys
// alphabetically and renders doubles in shortest round-trip form, so equal
// invocations print equal bytes.
void echo_config(const nlohmann::json& j) { std::cout << "config " << j.dump() << "\n"; }

// Crop window defaults to the 320..480 ms interval; --no-crop keeps the
// whole recording.
struct CropOpts {
    bool no_crop = false;
    double start_ms = 320.0;
    double end_ms = 480.0;
};

void add_crop_flags(CLI::App* cmd, CropOpts& crop) {
    cmd->add_flag("--no-crop", crop.no_crop, "keep the full time window");
    cmd->add_option("--crop-start-ms", crop.start_ms, "crop window start, ms")
        ->capture_default_str();
    cmd->add_option("--crop-end-ms", crop.end_ms, "crop window end, ms")->capture_default_str();
}

nlohmann::json crop_json(const CropOpts& crop) {
    return nlohmann::json{{"no_crop", crop.no_crop},
                          {"crop_start_ms", crop.start_ms},
                          {"crop_end_ms", crop.end_ms}};
}

Dataset load_input(const std::string& path, const CropOpts& crop) {
    Dataset ds = load_dataset(path);
    if (crop.no_crop) return ds;
    return crop_dataset(ds, crop.start_ms, crop.end_ms);
}

void add_train_config_flags(CLI::App* cmd, TrainConfig& cfg) {
    cmd->add_option("--lambda", cfg.lambda, "alignment loss weight")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cmd->add_option("--epochs", cfg.epochs, "training epochs")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--lr", cfg.lr, "Adam learning rate")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--per-source", cfg.per_source_count, "batch rows drawn per source subject")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "base seed")->capture_default_str();
    cmd->add_flag("--deterministic,!--no-deterministic", cfg.deterministic,
                  "single-threaded seeded execution");
    cmd->add_option("--d-seq", cfg.d_seq, "encoder width, 0 matches the channel count")
        ->capture_default_str();
    cmd->add_option("--d-emb", cfg.d_emb, "embedding width, 0 matches the channel count")
        ->capture_default_str();
}

nlohmann::json train_config_json(const TrainConfig& cfg) {
    return nlohmann::json{{"lr", cfg.lr},
                          {"lambda", cfg.lambda},
                          {"epochs", cfg.epochs},
                          {"mmd_location", to_string(cfg.mmd_location)},
                          {"mode", to_string(cfg.mode)},
                          {"per_source_count", cfg.per_source_count},
                          {"seed", cfg.seed},
                          {"deterministic", cfg.deterministic},
                          {"d_seq", cfg.d_seq},
                          {"d_emb", cfg.d_emb}};
}

RunRecord score_run(const Dataset& ds, const EpisodeSplit& split, const FitResult& fitted,
                    const TrainConfig& cfg, const std::string& label) {
    RunRecord rec;
    rec.mode = label;
    rec.run = 0;
    rec.k = split.k;
    rec.target_subject = split.target_subject;
    rec.seed = cfg.seed;
    auto val = gather_records(ds, split.target_val);
    auto test = gather_records(ds, split.target_test);
    if (!val.empty()) {
        auto s = evaluate(fitted.params, val);
        rec.val_top1 = s.at(1);
        rec.val_top3 = s.at(3);
    }
    if (!test.empty()) {
        auto s = evaluate(fitted.params, test);
        rec.test_top1 = s.at(1);
        rec.test_top3 = s.at(3);
    }
    if (!fitted.history.empty()) {
        rec.first_l_disc = fitted.history.front().l_disc;
        rec.final_l_disc = fitted.history.back().l_disc;
    }
    rec.best_epoch = fitted.best_epoch;
    rec.config = cfg;
    return rec;
}

// ---- gen ----

struct GenOpts {
    SynthConfig cfg;
    std::string out;
};

void run_gen(const GenOpts& opt) {
    echo_config({{"command", "gen"},
                 {"subjects", opt.cfg.n_subjects},
                 {"classes", opt.cfg.n_classes},
                 {"per_class", opt.cfg.per_class},
                 {"channels", opt.cfg.n_channels},
                 {"timesteps", opt.cfg.n_timesteps},
                 {"shift", opt.cfg.shift_strength},
                 {"noise", opt.cfg.noise_std},
                 {"seed", opt.cfg.seed},
                 {"out", opt.out}});
    Dataset ds = generate(opt.cfg);
    write_dataset(opt.out, ds);
    const auto& h = ds.header;
    std::cout << "wrote " << opt.out << ": " << h.n_samples << " records, " << h.n_subjects
              << " subjects, " << h.n_classes << " classes, " << h.n_channels << " channels, "
              << h.n_timesteps << " timesteps, " << h.sampling_rate_hz << " Hz\n";
    auto probe = shift_probe(ds);
    double mean = 0.0;
    for (const auto& e : probe) mean += e.mean_distance;
    if (!probe.empty()) mean /= static_cast<double>(probe.size());
    std::cout << "inter-subject mean class distance " << format_double(mean) << "\n";
}

void setup_gen(CLI::App& app) {
    auto opt = std::make_shared<GenOpts>();
    auto* cmd = app.add_subcommand("gen", "generate a synthetic multi-subject dataset");
    cmd->add_option("--subjects", opt->cfg.n_subjects, "number of subjects")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--classes", opt->cfg.n_classes, "number of classes")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--per-class", opt->cfg.per_class, "records per subject and class")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--channels", opt->cfg.n_channels, "signal channels")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--timesteps", opt->cfg.n_timesteps, "timesteps per record")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--shift", opt->cfg.shift_strength, "inter-subject shift strength")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cmd->add_option("--noise", opt->cfg.noise_std, "per-record noise level")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cmd->add_option("--seed", opt->cfg.seed, "generator seed")->capture_default_str();
    cmd->add_option("--out", opt->out, "output dataset path")->required();
    cmd->callback([opt] { run_gen(*opt); });
}

// ---- train ----

struct TrainOpts {
    std::string data;
    std::string out;
    std::string metrics_path;
    int target = 0;
    int k = 1;
    std::string mode = "ours";
    std::string loc = "after_f";
    TrainConfig cfg;
    double val_fraction = 1.0 / 6.0;
    double test_fraction = 1.0 / 6.0;
    CropOpts crop;
};

void run_train(const TrainOpts& opt) {
    TrainConfig cfg = opt.cfg;
    cfg.mode = parse_mode(opt.mode);
    cfg.mmd_location = parse_mmd_location(opt.loc);
    nlohmann::json j = crop_json(opt.crop);
    j["command"] = "train";
    j["data"] = opt.data;
    j["target"] = opt.target;
    j["k"] = opt.k;
    j["val_fraction"] = opt.val_fraction;
    j["test_fraction"] = opt.test_fraction;
    j["out"] = opt.out;
    j["metrics"] = opt.metrics_path;
    j["train"] = train_config_json(cfg);
    echo_config(j);

    Dataset ds = load_input(opt.data, opt.crop);
    EpisodeSplit split =
        build_episode(ds, opt.target, opt.k, cfg.seed, opt.val_fraction, opt.test_fraction);
    FitResult fitted = fit(ds, split, cfg);
    RunRecord rec = score_run(ds, split, fitted, cfg, to_string(cfg.mode));

    if (!opt.out.empty()) {
        save_checkpoint(opt.out, fitted.params);
        std::cout << "wrote checkpoint " << opt.out << "\n";
    }
    std::string jsonl = runs_to_jsonl({rec});
    if (!opt.metrics_path.empty()) {
        write_text(opt.metrics_path, jsonl);
        std::cout << "wrote metrics " << opt.metrics_path << "\n";
    }
    std::cout << jsonl;
}

void setup_train(CLI::App& app) {
    auto opt = std::make_shared<TrainOpts>();
    auto* cmd = app.add_subcommand("train", "fit one episode and write checkpoint plus metrics");
    cmd->add_option("--data", opt->data, "input dataset")->required()->check(CLI::ExistingFile);
    cmd->add_option("--target", opt->target, "target subject id")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cmd->add_option("--k", opt->k, "target samples per class")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--mode", opt->mode, "training mode")
        ->check(CLI::IsMember({"kshot_only", "vanilla", "ours"}))
        ->capture_default_str();
    cmd->add_option("--mmd-loc", opt->loc, "alignment feature location")
        ->check(CLI::IsMember({"after_f", "after_g"}))
        ->capture_default_str();
    add_train_config_flags(cmd, opt->cfg);
    cmd->add_option("--val-fraction", opt->val_fraction, "validation fraction per class");
    cmd->add_option("--test-fraction", opt->test_fraction, "test fraction per class");
    add_crop_flags(cmd, opt->crop);
    cmd->add_option("--out", opt->out, "checkpoint output path");
    cmd->add_option("--metrics", opt->metrics_path, "metrics output path, one record per line");
    cmd->callback([opt] { run_train(*opt); });
}

// ---- eval ----

struct EvalOpts {
    std::string data;
    std::string model;
    std::string out;
    int target = 0;
    int k = 1;
    std::uint64_t seed = 0;
    std::string split = "test";
    double val_fraction = 1.0 / 6.0;
    double test_fraction = 1.0 / 6.0;
    CropOpts crop;
};

void run_eval(const EvalOpts& opt) {
    nlohmann::json j = crop_json(opt.crop);
    j["command"] = "eval";
    j["data"] = opt.data;
    j["model"] = opt.model;
    j["target"] = opt.target;
    j["k"] = opt.k;
    j["seed"] = opt.seed;
    j["split"] = opt.split;
    j["val_fraction"] = opt.val_fraction;
    j["test_fraction"] = opt.test_fraction;
    echo_config(j);

    Dataset ds = load_input(opt.data, opt.crop);
    ModelParams params = load_checkpoint(opt.model);
    EpisodeSplit split =
        build_episode(ds, opt.target, opt.k, opt.seed, opt.val_fraction, opt.test_fraction);
    const std::vector<std::size_t>* indices = &split.target_test;
    if (opt.split == "train") indices = &split.target_train;
    if (opt.split == "val") indices = &split.target_val;
    auto records = gather_records(ds, *indices);
    if (records.empty()) throw Error("split " + opt.split + " is empty for this episode");
    auto scores = evaluate(params, records);
    nlohmann::json result{{"split", opt.split},
                          {"n", records.size()},
                          {"target", opt.target},
                          {"k", opt.k},
                          {"top1", scores.at(1)},
                          {"top3", scores.at(3)}};
    std::string line = result.dump() + "\n";
    if (!opt.out.empty()) write_text(opt.out, line);
    std::cout << line;
}

void setup_eval(CLI::App& app) {
    auto opt = std::make_shared<EvalOpts>();
    auto* cmd = app.add_subcommand("eval", "score a checkpoint on one episode split");
    cmd->add_option("--data", opt->data, "input dataset")->required()->check(CLI::ExistingFile);
    cmd->add_option("--model", opt->model, "checkpoint path")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--target", opt->target, "target subject id")->check(CLI::NonNegativeNumber);
    cmd->add_option("--k", opt->k, "target samples per class")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", opt->seed, "episode seed")->capture_default_str();
    cmd->add_option("--split", opt->split, "which split to score")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    cmd->add_option("--val-fraction", opt->val_fraction, "validation fraction per class");
    cmd->add_option("--test-fraction", opt->test_fraction, "test fraction per class");
    add_crop_flags(cmd, opt->crop);
    cmd->add_option("--out", opt->out, "write the result line here as well");
    cmd->callback([opt] { run_eval(*opt); });
}

// ---- ablate ----

struct AblateOpts {
    std::string data;
    std::string metrics_path;
    std::string out_csv;
    int target = 0;
    int k = 1;
    int runs = 5;
    TrainConfig cfg;
    double val_fraction = 1.0 / 6.0;
    double test_fraction = 1.0 / 6.0;
    CropOpts crop;
};

void run_ablate(const AblateOpts& opt) {
    nlohmann::json j = crop_json(opt.crop);
    j["command"] = "ablate";
    j["data"] = opt.data;
    j["target"] = opt.target;
    j["k"] = opt.k;
    j["runs"] = opt.runs;
    j["val_fraction"] = opt.val_fraction;
    j["test_fraction"] = opt.test_fraction;
    j["train"] = train_config_json(opt.cfg);
    echo_config(j);

    Dataset ds = load_input(opt.data, opt.crop);
    Protocol proto;
    proto.target_subject = opt.target;
    proto.k = opt.k;
    proto.modes = {TrainMode::Ours};
    proto.n_runs = static_cast<std::size_t>(opt.runs);
    proto.val_fraction = opt.val_fraction;
    proto.test_fraction = opt.test_fraction;

    std::vector<RunRecord> all;
    for (MmdLocation loc : {MmdLocation::AfterF, MmdLocation::AfterG}) {
        TrainConfig cfg = opt.cfg;
        cfg.mode = TrainMode::Ours;
        cfg.mmd_location = loc;
        MetricsReport rep = run_experiment(ds, proto, cfg);
        for (RunRecord rec : rep.runs) {
            rec.mode = "ours@" + to_string(loc);
            all.push_back(std::move(rec));
        }
    }
    std::string csv = report_to_csv(aggregate_runs(all));
    if (!opt.metrics_path.empty()) write_text(opt.metrics_path, runs_to_jsonl(all));
    if (!opt.out_csv.empty()) write_text(opt.out_csv, csv);
    std::cout << csv;
}

void setup_ablate(CLI::App& app) {
    auto opt = std::make_shared<AblateOpts>();
    auto* cmd =
        app.add_subcommand("ablate", "compare alignment at the encoder vs the embedding layer");
    cmd->add_option("--data", opt->data, "input dataset")->required()->check(CLI::ExistingFile);
    cmd->add_option("--target", opt->target, "target subject id")->check(CLI::NonNegativeNumber);
    cmd->add_option("--k", opt->k, "target samples per class")->check(CLI::PositiveNumber);
    cmd->add_option("--runs", opt->runs, "runs per location")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    add_train_config_flags(cmd, opt->cfg);
    cmd->add_option("--val-fraction", opt->val_fraction, "validation fraction per class");
    cmd->add_option("--test-fraction", opt->test_fraction, "test fraction per class");
    add_crop_flags(cmd, opt->crop);
    cmd->add_option("--metrics", opt->metrics_path, "write all run records here");
    cmd->add_option("--out", opt->out_csv, "write the summary table here");
    cmd->callback([opt] { run_ablate(*opt); });
}

// ---- sweep-k ----

struct SweepOpts {
    std::string data;
    std::string metrics_path;
    std::string out_csv;
    int target = 0;
    std::vector<int> ks = {1, 2, 3, 4, 5};
    int runs = 5;
    std::string loc = "after_f";
    TrainConfig cfg;
    double val_fraction = 1.0 / 6.0;
    double test_fraction = 1.0 / 6.0;
    CropOpts crop;
};

void run_sweep(const SweepOpts& opt) {
    TrainConfig base = opt.cfg;
    base.mmd_location = parse_mmd_location(opt.loc);
    nlohmann::json j = crop_json(opt.crop);
    j["command"] = "sweep-k";
    j["data"] = opt.data;
    j["target"] = opt.target;
    j["ks"] = opt.ks;
    j["runs"] = opt.runs;
    j["val_fraction"] = opt.val_fraction;
    j["test_fraction"] = opt.test_fraction;
    j["train"] = train_config_json(base);
    echo_config(j);

    Dataset ds = load_input(opt.data, opt.crop);
    std::vector<RunRecord> all;
    for (int k : opt.ks) {
        Protocol proto;
        proto.target_subject = opt.target;
        proto.k = k;
        proto.n_runs = static_cast<std::size_t>(opt.runs);
        proto.val_fraction = opt.val_fraction;
        proto.test_fraction = opt.test_fraction;
        MetricsReport rep = run_experiment(ds, proto, base);
        all.insert(all.end(), rep.runs.begin(), rep.runs.end());
    }
    std::string csv = report_to_csv(aggregate_runs(all));
    if (!opt.metrics_path.empty()) write_text(opt.metrics_path, runs_to_jsonl(all));
    if (!opt.out_csv.empty()) write_text(opt.out_csv, csv);
    std::cout << csv;
}

void setup_sweep(CLI::App& app) {
    auto opt = std::make_shared<SweepOpts>();
    auto* cmd = app.add_subcommand("sweep-k", "run every mode across a range of k values");
    cmd->add_option("--data", opt->data, "input dataset")->required()->check(CLI::ExistingFile);
    cmd->add_option("--target", opt->target, "target subject id")->check(CLI::NonNegativeNumber);
    cmd->add_option("--ks", opt->ks, "k values to sweep")->check(CLI::PositiveNumber);
    cmd->add_option("--runs", opt->runs, "runs per k and mode")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--mmd-loc", opt->loc, "alignment feature location")
        ->check(CLI::IsMember({"after_f", "after_g"}))
        ->capture_default_str();
    add_train_config_flags(cmd, opt->cfg);
    cmd->add_option("--val-fraction", opt->val_fraction, "validation fraction per class");
    cmd->add_option("--test-fraction", opt->test_fraction, "test fraction per class");
    add_crop_flags(cmd, opt->crop);
    cmd->add_option("--metrics", opt->metrics_path, "write all run records here");
    cmd->add_option("--out", opt->out_csv, "write the summary table here");
    cmd->callback([opt] { run_sweep(*opt); });
}

// ---- report ----

struct ReportOpts {
    std::vector<std::string> files;
    std::string out_csv;
};

void run_report(const ReportOpts& opt) {
    echo_config({{"command", "report"}, {"files", opt.files}, {"out", opt.out_csv}});
    std::vector<RunRecord> runs;
    for (const auto& f : opt.files) {
        auto part = parse_jsonl_runs(read_text(f));
        runs.insert(runs.end(), part.begin(), part.end());
    }
    std::string csv = report_to_csv(aggregate_runs(runs));
    if (!opt.out_csv.empty()) write_text(opt.out_csv, csv);
    std::cout << csv;
}

void setup_report(CLI::App& app) {
    auto opt = std::make_shared<ReportOpts>();
    auto* cmd = app.add_subcommand("report", "render stored run records into a summary table");
    cmd->add_option("files", opt->files, "run record files, one JSON object per line")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", opt->out_csv, "write the summary table here");
    cmd->callback([opt] { run_report(*opt); });
}

// ---- import ----

struct ImportOpts {
    std::string manifest;
    std::string out;
    std::uint32_t rate = 1000;
};

void run_import(const ImportOpts& opt) {
    echo_config({{"command", "import"},
                 {"manifest", opt.manifest},
                 {"rate", opt.rate},
                 {"out", opt.out}});
    Dataset ds = import_text_dataset(opt.manifest, opt.rate);
    write_dataset(opt.out, ds);
    const auto& h = ds.header;
    std::cout << "wrote " << opt.out << ": " << h.n_samples << " records, " << h.n_subjects
              << " subjects, " << h.n_classes << " classes, " << h.n_channels << " channels, "
              << h.n_timesteps << " timesteps, " << h.sampling_rate_hz << " Hz\n";
}

void setup_import(CLI::App& app) {
    auto opt = std::make_shared<ImportOpts>();
    auto* cmd = app.add_subcommand("import", "convert text matrices plus a manifest to a dataset");
    cmd->add_option("--manifest", opt->manifest, "manifest file, lines of subject,label,path")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--rate", opt->rate, "sampling rate in Hz")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--out", opt->out, "output dataset path")->required();
    cmd->callback([opt] { run_import(*opt); });
}

// ---- gradcheck ----

struct GradcheckOpts {
    int trials = 10;
    std::uint64_t seed = 0;
    double eps = 1e-5;
    double tol = 1e-5;
};

Tensor rand_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.flat()) v = scale * rng.normal();
    return t;
}

// Keeps every element away from the kink at zero so central differences
// stay on one linear piece.
Tensor rand_tensor_off_kink(Rng& rng, std::vector<std::size_t> shape) {
    Tensor t = rand_tensor(rng, std::move(shape));
    for (double& v : t.flat()) v += (v >= 0.0 ? 0.1 : -0.1);
    return t;
}

Tensor rand_positive(Rng& rng, std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.flat()) v = 0.3 + std::abs(rng.normal());
    return t;
}

using BuildFn = std::function<int(Tape&, int)>;

GradCheckReport check_op(const Tensor& x0, const BuildFn& build, double eps, double tol) {
    ScalarFn fn = [&](const Tensor& x, Tensor* grad) {
        Tape tape;
        int xid = tape.leaf(x);
        int loss = build(tape, xid);
        if (grad) {
            auto g = tape.backward(loss);
            *grad = g[static_cast<std::size_t>(xid)];
        }
        return tape.value(loss).item();
    };
    return check_gradients(fn, x0, eps, tol);
}

// Mixes the op output with a fixed weight tensor before reducing, so
// sign-symmetric gradients cannot cancel to zero.
int weighted_mean(Tape& tape, int y, const Tensor& w) {
    return tape.mean_reduce(tape.mul(y, tape.leaf(w)));
}

using CaseFn = std::function<std::pair<Tensor, BuildFn>(Rng&)>;

void run_case(const std::string& name, const GradcheckOpts& opt, Rng& rng, int& failures,
              const CaseFn& make) {
    double worst = 0.0;
    bool ok = true;
    for (int t = 0; t < opt.trials; ++t) {
        auto [x0, build] = make(rng);
        auto rep = check_op(x0, build, opt.eps, opt.tol);
        worst = std::max(worst, rep.max_rel_err);
        ok = ok && rep.passed;
    }
    std::cout << (ok ? "ok   " : "FAIL ") << name << " max rel err " << format_double(worst)
              << "\n";
    if (!ok) ++failures;
}

// Full model loss as a function of the flattened parameter vector. The
// kernel bandwidth is computed once at the initial point and held fixed
// across probes, matching its constant treatment inside a training step.
GradCheckReport check_pipeline(MmdLocation loc, std::uint64_t seed, double eps, double tol) {
    ModelDims dims;
    dims.d_in = 6;
    dims.t_len = 5;
    dims.d_seq = 4;
    dims.d_emb = 4;
    dims.n_classes = 3;

    Rng rng(mix_seed(seed, 0x706c6e65));
    std::vector<Tensor> signals;
    std::vector<SampleView> batch;
    std::vector<int> subjects = {0, 0, 0, 0, 1, 1, 1, 1};
    std::vector<int> labels = {0, 1, 2, 0, 0, 1, 2, 1};
    signals.reserve(subjects.size());
    for (std::size_t i = 0; i < subjects.size(); ++i)
        signals.push_back(rand_tensor(rng, {dims.d_in, dims.t_len}));
    for (std::size_t i = 0; i < subjects.size(); ++i)
        batch.push_back({&signals[i], subjects[i], labels[i]});

    TrainConfig cfg;
    cfg.mode = TrainMode::Ours;
    cfg.lambda = 1.0;
    cfg.mmd_location = loc;

    ModelParams params0 = init_params(dims, mix_seed(seed, 0x70617230));
    KernelBank bank;
    {
        Tape tape;
        ParamNodes nodes = stage_params(tape, params0);
        BatchForward fwd = forward_batch(tape, nodes, dims, batch);
        int feat = loc == MmdLocation::AfterF ? fwd.z_node : fwd.w_node;
        bank = make_default_bank(median_heuristic(tape.value(feat)));
    }

    ScalarFn fn = [&](const Tensor& flat, Tensor* grad) {
        ModelParams p = unflatten_params(dims, flat);
        Tape tape;
        ParamNodes nodes = stage_params(tape, p);
        BatchForward fwd = forward_batch(tape, nodes, dims, batch);
        LossNodes loss = total_loss(tape, fwd, cfg, &bank, 1);
        if (grad) {
            auto g = tape.backward(loss.total);
            std::vector<double> cat;
            for (int id : nodes.ids) {
                const Tensor& gi = g[static_cast<std::size_t>(id)];
                cat.insert(cat.end(), gi.data().begin(), gi.data().end());
            }
            *grad = Tensor::vec(std::move(cat));
        }
        return tape.value(loss.total).item();
    };
    return check_gradients(fn, flatten_params(params0), eps, tol);
}

void run_gradcheck(const GradcheckOpts& opt) {
    echo_config({{"command", "gradcheck"},
                 {"trials", opt.trials},
                 {"seed", opt.seed},
                 {"eps", opt.eps},
                 {"tol", opt.tol}});
    Rng rng(mix_seed(opt.seed, 0x67636b73));
    int failures = 0;

    auto unary = [&](const std::string& name, auto op, bool positive = false) {
        run_case(name, opt, rng, failures, [&, op, positive](Rng& r) -> std::pair<Tensor, BuildFn> {
            Tensor x0 = positive ? rand_positive(r, {3, 4}) : rand_tensor(r, {3, 4});
            Tensor w = rand_tensor(r, {3, 4});
            BuildFn build = [op, w](Tape& t, int x) { return weighted_mean(t, op(t, x), w); };
            return {x0, build};
        });
    };
    unary("exp", [](Tape& t, int x) { return t.exp(x); });
    unary("square", [](Tape& t, int x) { return t.square(x); });
    unary("sqrt_floor", [](Tape& t, int x) { return t.sqrt_floor(x); }, true);
    unary("sigmoid", [](Tape& t, int x) { return t.sigmoid(x); });
    unary("tanh", [](Tape& t, int x) { return t.tanh(x); });
    unary("scale", [](Tape& t, int x) { return t.scale(x, -1.7); });

    run_case("leaky_relu", opt, rng, failures, [](Rng& r) -> std::pair<Tensor, BuildFn> {
        Tensor x0 = rand_tensor_off_kink(r, {3, 4});
        Tensor w = rand_tensor(r, {3, 4});
        BuildFn build = [w](Tape& t, int x) {
            return weighted_mean(t, t.leaky_relu(x, kEmbedLeakAlpha), w);
        };
        return {x0, build};
    });
    run_case("mean_reduce", opt, rng, failures, [](Rng& r) -> std::pair<Tensor, BuildFn> {
        return {rand_tensor(r, {4, 3}), [](Tape& t, int x) { return t.mean_reduce(x); }};
    });

    auto binary_left = [&](const std::string& name, auto op, std::vector<std::size_t> xs,
                           std::vector<std::size_t> cs) {
        run_case(name, opt, rng, failures, [&, op, xs, cs](Rng& r) -> std::pair<Tensor, BuildFn> {
            Tensor x0 = rand_tensor(r, xs);
            Tensor c = rand_tensor(r, cs);
            Tensor w;
            {
                Tape probe;
                w = rand_tensor(r, probe.value(op(probe, probe.leaf(x0), probe.leaf(c))).shape());
            }
            BuildFn build = [op, c, w](Tape& t, int x) {
                return weighted_mean(t, op(t, x, t.leaf(c)), w);
            };
            return {x0, build};
        });
    };
    auto binary_right = [&](const std::string& name, auto op, std::vector<std::size_t> cs,
                            std::vector<std::size_t> xs) {
        run_case(name, opt, rng, failures, [&, op, cs, xs](Rng& r) -> std::pair<Tensor, BuildFn> {
            Tensor c = rand_tensor(r, cs);
            Tensor x0 = rand_tensor(r, xs);
            Tensor w;
            {
                Tape probe;
                w = rand_tensor(r, probe.value(op(probe, probe.leaf(c), probe.leaf(x0))).shape());
            }
            BuildFn build = [op, c, w](Tape& t, int x) {
                return weighted_mean(t, op(t, t.leaf(c), x), w);
            };
            return {x0, build};
        });
    };
    auto add_op = [](Tape& t, int a, int b) { return t.add(a, b); };
    auto sub_op = [](Tape& t, int a, int b) { return t.sub(a, b); };
    auto mul_op = [](Tape& t, int a, int b) { return t.mul(a, b); };
    auto cat_op = [](Tape& t, int a, int b) { return t.concat_rows(a, b); };
    auto mm_op = [](Tape& t, int a, int b) { return t.matmul(a, b); };
    auto mmnt_op = [](Tape& t, int a, int b) { return t.matmul_nt(a, b); };
    auto arv_op = [](Tape& t, int a, int b) { return t.add_rowvec(a, b); };
    auto psd_op = [](Tape& t, int a, int b) { return t.pairwise_sqdist(a, b); };
    binary_left("add", add_op, {3, 4}, {3, 4});
    binary_left("sub/left", sub_op, {3, 4}, {3, 4});
    binary_right("sub/right", sub_op, {3, 4}, {3, 4});
    binary_left("mul/left", mul_op, {3, 4}, {3, 4});
    binary_right("mul/right", mul_op, {3, 4}, {3, 4});
    binary_left("concat_rows/top", cat_op, {2, 4}, {3, 4});
    binary_right("concat_rows/bottom", cat_op, {2, 4}, {3, 4});
    binary_left("matmul/left", mm_op, {3, 4}, {4, 2});
    binary_right("matmul/right", mm_op, {3, 4}, {4, 2});
    binary_left("matmul_nt/left", mmnt_op, {3, 4}, {2, 4});
    binary_right("matmul_nt/right", mmnt_op, {3, 4}, {2, 4});
    binary_left("add_rowvec/matrix", arv_op, {3, 4}, {4});
    binary_right("add_rowvec/vector", arv_op, {3, 4}, {4});
    binary_left("pairwise_sqdist/left", psd_op, {3, 4}, {2, 4});
    binary_right("pairwise_sqdist/right", psd_op, {3, 4}, {2, 4});

    run_case("reshape", opt, rng, failures, [](Rng& r) -> std::pair<Tensor, BuildFn> {
        Tensor x0 = rand_tensor(r, {3, 4});
        Tensor w = rand_tensor(r, {4, 3});
        BuildFn build = [w](Tape& t, int x) {
            return weighted_mean(t, t.reshape(x, {4, 3}), w);
        };
        return {x0, build};
    });
    run_case("gather_rows", opt, rng, failures, [](Rng& r) -> std::pair<Tensor, BuildFn> {
        Tensor x0 = rand_tensor(r, {5, 3});
        Tensor w = rand_tensor(r, {4, 3});
        BuildFn build = [w](Tape& t, int x) {
            return weighted_mean(t, t.gather_rows(x, {0, 2, 2, 4}), w);
        };
        return {x0, build};
    });
    for (int arg = 0; arg < 3; ++arg) {
        static const char* names[] = {"affine/x", "affine/w", "affine/b"};
        run_case(names[arg], opt, rng, failures, [arg](Rng& r) -> std::pair<Tensor, BuildFn> {
            Tensor xv = rand_tensor(r, {4});
            Tensor wv = rand_tensor(r, {3, 4});
            Tensor bv = rand_tensor(r, {3});
            Tensor mix = rand_tensor(r, {3});
            Tensor probe = arg == 0 ? xv : arg == 1 ? wv : bv;
            BuildFn build = [arg, xv, wv, bv, mix](Tape& t, int x) {
                int xi = arg == 0 ? x : t.leaf(xv);
                int wi = arg == 1 ? x : t.leaf(wv);
                int bi = arg == 2 ? x : t.leaf(bv);
                return weighted_mean(t, t.affine(xi, wi, bi), mix);
            };
            return {probe, build};
        });
    }
    run_case("softmax_cross_entropy", opt, rng, failures, [](Rng& r) -> std::pair<Tensor, BuildFn> {
        Tensor x0 = rand_tensor(r, {5});
        int label = static_cast<int>(r.bounded(5));
        BuildFn build = [label](Tape& t, int x) { return t.softmax_cross_entropy(x, label); };
        return {x0, build};
    });
    run_case("cross_entropy_mean_rows", opt, rng, failures,
             [](Rng& r) -> std::pair<Tensor, BuildFn> {
                 Tensor x0 = rand_tensor(r, {4, 5});
                 std::vector<int> labels;
                 for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(r.bounded(5)));
                 BuildFn build = [labels](Tape& t, int x) {
                     return t.cross_entropy_mean_rows(x, labels);
                 };
                 return {x0, build};
             });

    static const char* gru_parents[] = {"h_prev", "w_r", "u_r", "b_r", "w_u",
                                        "u_u",    "b_u", "w_c", "u_c", "b_c"};
    for (int arg = 0; arg < 10; ++arg) {
        run_case(std::string("gru_cell/") + gru_parents[arg], opt, rng, failures,
                 [arg](Rng& r) -> std::pair<Tensor, BuildFn> {
                     const std::size_t B = 2, H = 3, D = 4;
                     std::vector<Tensor> inputs = {
                         rand_tensor(r, {B, H}),                          // h_prev
                         rand_tensor(r, {H, D}), rand_tensor(r, {H, H}),  // w_r, u_r
                         rand_tensor(r, {H}),                             // b_r
                         rand_tensor(r, {H, D}), rand_tensor(r, {H, H}),  // w_u, u_u
                         rand_tensor(r, {H}),                             // b_u
                         rand_tensor(r, {H, D}), rand_tensor(r, {H, H}),  // w_c, u_c
                         rand_tensor(r, {H}),                             // b_c
                     };
                     Tensor xt = rand_tensor(r, {B, D});
                     Tensor mix = rand_tensor(r, {B, H});
                     BuildFn build = [arg, inputs, xt, mix](Tape& t, int x) {
                         std::vector<int> ids(inputs.size());
                         for (std::size_t i = 0; i < inputs.size(); ++i)
                             ids[i] = static_cast<int>(i) == arg ? x : t.leaf(inputs[i]);
                         int h = t.gru_cell(ids[0], ids[1], ids[2], ids[3], ids[4], ids[5],
                                            ids[6], ids[7], ids[8], ids[9], xt);
                         return weighted_mean(t, h, mix);
                     };
                     return {inputs[static_cast<std::size_t>(arg)], build};
                 });
    }

    KernelBank bank = make_default_bank(0.7);
    run_case("mmd2", opt, rng, failures, [&bank](Rng& r) -> std::pair<Tensor, BuildFn> {
        Tensor x0 = rand_tensor(r, {4, 3});
        Tensor other = rand_tensor(r, {5, 3});
        BuildFn build = [&bank, other](Tape& t, int x) { return mmd2(t, x, t.leaf(other), bank); };
        return {x0, build};
    });
    run_case("mmd", opt, rng, failures, [&bank](Rng& r) -> std::pair<Tensor, BuildFn> {
        Tensor x0 = rand_tensor(r, {4, 3});
        Tensor other = rand_tensor(r, {5, 3});
        BuildFn build = [&bank, other](Tape& t, int x) { return mmd(t, x, t.leaf(other), bank); };
        return {x0, build};
    });
    run_case("discrepancy_loss", opt, rng, failures,
             [&bank](Rng& r) -> std::pair<Tensor, BuildFn> {
                 Tensor x0 = rand_tensor(r, {9, 3});
                 BuildFn build = [&bank](Tape& t, int x) {
                     std::vector<int> groups = {t.gather_rows(x, {0, 1, 2}),
                                                t.gather_rows(x, {3, 4, 5}),
                                                t.gather_rows(x, {6, 7, 8})};
                     return discrepancy_loss(t, groups, bank);
                 };
                 return {x0, build};
             });

    for (MmdLocation loc : {MmdLocation::AfterF, MmdLocation::AfterG}) {
        double worst = 0.0;
        bool ok = true;
        for (int t = 0; t < opt.trials; ++t) {
            auto rep =
                check_pipeline(loc, opt.seed + static_cast<std::uint64_t>(t), opt.eps, opt.tol);
            worst = std::max(worst, rep.max_rel_err);
            ok = ok && rep.passed;
        }
        std::cout << (ok ? "ok   " : "FAIL ") << "pipeline/" << to_string(loc)
                  << " max rel err " << format_double(worst) << "\n";
        if (!ok) ++failures;
    }

    if (failures > 0) throw Error(std::to_string(failures) + " gradient checks failed");
    std::cout << "all gradient checks passed\n";
}

void setup_gradcheck(CLI::App& app) {
    auto opt = std::make_shared<GradcheckOpts>();
    auto* cmd = app.add_subcommand("gradcheck", "finite-difference audit of every tape rule");
    cmd->add_option("--trials", opt->trials, "random points per rule")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--seed", opt->seed, "suite seed")->capture_default_str();
    cmd->add_option("--eps", opt->eps, "finite-difference step")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--tol", opt->tol, "max relative error allowed")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->callback([opt] { run_gradcheck(*opt); });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"subject-adaptive k-shot sequence classification toolkit"};
    app.require_subcommand(1);
    setup_gen(app);
    setup_train(app);
    setup_eval(app);
    setup_ablate(app);
    setup_sweep(app);
    setup_gradcheck(app);
    setup_report(app);
    setup_import(app);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const subadapt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
