#pragma once

// JSON forms of experiment results and run manifests. Optional fields are
// omitted, never written as null; non-finite numbers become null.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lapref/experiments.hpp"

namespace lapref {

using Json = nlohmann::json;

inline constexpr int kResultsFormatVersion = 1;

std::string library_version();

Json to_json(const MetricsReport& report);
Json to_json(const ElboTrace& trace);
Json to_json(const TuneResult& tuning);

Json mc_grid_json(const McGridConfig& config, const McGridResult& result);
Json compare_run_json(std::uint64_t seed, const CompareResult& result);
Json ablate_run_json(std::uint64_t seed, const AblateResult& result);
Json ood_run_json(std::uint64_t seed, const OodResult& result);
Json toy2d_run_json(std::uint64_t seed, const Toy2dResult& result);
Json mc_vs_analytic_json(const McVsAnalyticConfig& config, const McVsAnalyticResult& result);

// {"format_version", "kind", "runs": [...], "summary": {...}} with the
// summary holding per-method medians over runs of every numeric field
// listed in `fields`.
Json multi_seed_document(const std::string& kind, const std::vector<Json>& runs,
                         const std::string& rows_key, const std::string& name_key,
                         const std::vector<std::string>& fields);

struct RunManifest {
  std::string subcommand;
  Json config;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  double wall_clock_seconds = 0.0;
  bool ok = true;
  std::string error;  // "Code: message" when !ok
};

Json to_json(const RunManifest& manifest);

}  // namespace lapref
