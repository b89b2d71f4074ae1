#pragma once

#include <string>
#include <vector>

#include "subadapt/trainer.hpp"

namespace subadapt {

/// Shortest round-trip decimal form of v; used for every number that lands
/// in a metrics file so identical runs produce identical bytes.
std::string format_double(double v);

/// One JSON object, single line, keys sorted; no timestamps or environment
/// fields, so equal runs serialize to equal bytes.
std::string run_record_to_json(const RunRecord& record);

/// One line per run, each terminated with '\n'.
std::string runs_to_jsonl(const std::vector<RunRecord>& runs);

/// Inverse of runs_to_jsonl. Raises FormatError on malformed lines.
std::vector<RunRecord> parse_jsonl_runs(const std::string& text);

/// Summary table: header line mode,k,target,split,top1_mean,top1_std,
/// top3_mean,top3_std then one val and one test row per aggregate.
std::string report_to_csv(const std::vector<ModeAggregate>& aggregates);

}  // namespace subadapt
