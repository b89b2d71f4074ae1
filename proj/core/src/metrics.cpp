#include "subadapt/metrics.hpp"

#include <sstream>
#include <string>

#include "json.hpp"
#include "subadapt/error.hpp"

namespace subadapt {

namespace {

using nlohmann::json;

json config_to_json(const TrainConfig& c) {
    return json{{"lr", c.lr},
                {"lambda", c.lambda},
                {"epochs", c.epochs},
                {"mmd_location", to_string(c.mmd_location)},
                {"mode", to_string(c.mode)},
                {"per_source_count", c.per_source_count},
                {"seed", c.seed},
                {"deterministic", c.deterministic},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"d_seq", c.d_seq},
                {"d_emb", c.d_emb}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.lr = j.at("lr").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.mmd_location = parse_mmd_location(j.at("mmd_location").get<std::string>());
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.per_source_count = j.at("per_source_count").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.deterministic = j.at("deterministic").get<bool>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.d_seq = j.at("d_seq").get<std::size_t>();
    c.d_emb = j.at("d_emb").get<std::size_t>();
    return c;
}

}  // namespace

std::string format_double(double v) { return json(v).dump(); }

std::string run_record_to_json(const RunRecord& r) {
    const json j{{"mode", r.mode},
                 {"run", r.run},
                 {"k", r.k},
                 {"target_subject", r.target_subject},
                 {"seed", r.seed},
                 {"val_top1", r.val_top1},
                 {"val_top3", r.val_top3},
                 {"test_top1", r.test_top1},
                 {"test_top3", r.test_top3},
                 {"first_l_disc", r.first_l_disc},
                 {"final_l_disc", r.final_l_disc},
                 {"best_epoch", r.best_epoch},
                 {"config", config_to_json(r.config)}};
    return j.dump();
}

std::string runs_to_jsonl(const std::vector<RunRecord>& runs) {
    std::string out;
    for (const RunRecord& r : runs) {
        out += run_record_to_json(r);
        out += '\n';
    }
    return out;
}

std::vector<RunRecord> parse_jsonl_runs(const std::string& text) {
    std::vector<RunRecord> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
            RunRecord r;
            r.mode = j.at("mode").get<std::string>();
            r.run = j.at("run").get<int>();
            r.k = j.at("k").get<int>();
            r.target_subject = j.at("target_subject").get<int>();
            r.seed = j.at("seed").get<std::uint64_t>();
            r.val_top1 = j.at("val_top1").get<double>();
            r.val_top3 = j.at("val_top3").get<double>();
            r.test_top1 = j.at("test_top1").get<double>();
            r.test_top3 = j.at("test_top3").get<double>();
            r.first_l_disc = j.at("first_l_disc").get<double>();
            r.final_l_disc = j.at("final_l_disc").get<double>();
            r.best_epoch = j.at("best_epoch").get<std::size_t>();
            r.config = config_from_json(j.at("config"));
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw FormatError("run record line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string report_to_csv(const std::vector<ModeAggregate>& aggregates) {
    std::string out = "mode,k,target,split,top1_mean,top1_std,top3_mean,top3_std\n";
    for (const ModeAggregate& a : aggregates) {
        const auto row = [&](const char* split, const CellStats& top1, const CellStats& top3) {
            out += a.mode + "," + std::to_string(a.k) + "," + std::to_string(a.target_subject) +
                   "," + split + "," + format_double(top1.mean) + "," +
                   format_double(top1.stddev) + "," + format_double(top3.mean) + "," +
                   format_double(top3.stddev) + "\n";
        };
        row("val", a.val_top1, a.val_top3);
        row("test", a.test_top1, a.test_top3);
    }
    return out;
}

}  // namespace subadapt
