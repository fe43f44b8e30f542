#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "dynasparse/sparsity.hpp"

namespace dynasparse {

// JSON form of the full report; `meta` (format_version, config hash, seed,
// dataset provenance) is embedded verbatim under "meta".
nlohmann::json sparsity_report_to_json(const SparsityReport& r,
                                       const nlohmann::json& meta);
SparsityReport sparsity_report_from_json(const nlohmann::json& j);

// Writes report.json plus the per-figure CSV tables into out_dir:
// global_zeros.csv, zero_fraction_{state,action}.csv (+ *_rounded.csv),
// sparsity_hist.csv, timeseries_ep<k>.csv, durations.csv, embedding.csv.
// timeseries_max_steps truncates the time-series CSVs (0 = full series);
// report.json always holds the full series.
void write_sparsity_report(const SparsityReport& r, const nlohmann::json& meta,
                           const std::string& out_dir, int timeseries_max_steps);

// Regenerates the CSV tables from a stored report.json.
void regenerate_report_csvs(const std::string& report_json_path,
                            const std::string& out_dir, int timeseries_max_steps);

}  // namespace dynasparse
