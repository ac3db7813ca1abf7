#include "lapref/results_json.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace lapref {
namespace {

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json numbers(const std::vector<double>& v) {
  Json out = Json::array();
  for (double x : v) out.push_back(number(x));
  return out;
}

Json numbers(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v[i]));
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string library_version() { return "0.1.0"; }

Json to_json(const MetricsReport& r) {
  Json j = {{"method", r.method},   {"nll", number(r.nll)},
            {"ece", number(r.ece)}, {"brier", number(r.brier)},
            {"accuracy", number(r.accuracy)}, {"samples", r.samples},
            {"seed", r.seed}};
  if (r.mmd) j["mmd"] = number(*r.mmd);
  if (r.fpr95) j["fpr95"] = number(*r.fpr95);
  return j;
}

Json to_json(const ElboTrace& t) {
  return {{"initial_elbo", number(t.initial_elbo)},
          {"best_elbo", number(t.best_elbo)},
          {"best_epoch", t.best_epoch},
          {"steps_per_epoch", t.steps_per_epoch},
          {"epoch_elbo", numbers(t.epoch_elbo)},
          {"epoch_seconds", numbers(t.epoch_seconds)},
          {"step_elbo", numbers(t.step_elbo)},
          {"step_lr", numbers(t.step_lr)}};
}

Json to_json(const TuneResult& t) {
  return {{"best_lambda", t.best_precision},
          {"grid", t.grid},
          {"validation_nll", numbers(t.validation_nll)}};
}

Json mc_grid_json(const McGridConfig& c, const McGridResult& r) {
  const ErrorGrid& g = r.grid;
  return {{"format_version", kResultsFormatVersion},
          {"kind", "mc-grid"},
          {"samples", c.samples},
          {"repeats", c.repeats},
          {"grid", c.grid},
          {"m_range", {c.m_min, c.m_max}},
          {"s_range", {c.s_min, c.s_max}},
          {"seed", c.seed},
          {"max_mc_error", number(g.max_mc_error)},
          {"max_mean_mc_error", number(g.max_mean_mc_error)},
          {"max_probit_error", number(g.max_probit_error)},
          {"max_mc_location", {{"m", g.max_mc_m}, {"s", g.max_mc_s}}},
          {"max_probit_location", {{"m", g.max_probit_m}, {"s", g.max_probit_s}}},
          {"seconds", r.seconds}};
}

Json compare_run_json(std::uint64_t seed, const CompareResult& r) {
  Json rows = Json::array();
  for (const MethodOutcome& m : r.rows) {
    Json j = to_json(m.metrics);
    j["seconds"] = m.seconds;
    if (m.temperature) j["temperature"] = *m.temperature;
    if (m.trace) {
      j["elbo_initial"] = number(m.trace->initial_elbo);
      j["elbo_best"] = number(m.trace->best_elbo);
      j["best_epoch"] = m.trace->best_epoch;
    }
    if (m.rhat) {
      j["rhat_max"] = number(m.rhat->maxCoeff());
    }
    rows.push_back(std::move(j));
  }
  Json run = {{"seed", seed},
              {"lambda", r.base.lambda},
              {"n_train", r.n_train},
              {"n_test", r.n_test},
              {"map_converged", r.base.map.converged},
              {"methods", std::move(rows)}};
  if (r.base.tuning) run["tuning"] = to_json(*r.base.tuning);
  return run;
}

Json ablate_run_json(std::uint64_t seed, const AblateResult& r) {
  Json rows = Json::array();
  for (const AblationRow& a : r.rows)
    rows.push_back({{"base", std::string(ablation_base_name(a.base))},
                    {"length", a.length},
                    {"name", std::string(ablation_base_name(a.base)) + "-" +
                                 std::to_string(a.length)},
                    {"nll", number(a.nll)},
                    {"ece", number(a.ece)},
                    {"accuracy", number(a.accuracy)},
                    {"final_elbo", number(a.final_elbo)},
                    {"seconds", a.seconds}});
  return {{"seed", seed}, {"lambda", r.lambda}, {"rows", std::move(rows)}};
}

Json ood_run_json(std::uint64_t seed, const OodResult& r) {
  Json rows = Json::array();
  for (const OodRow& o : r.rows)
    rows.push_back({{"method", o.method.name},
                    {"fpr95", number(o.fpr95)},
                    {"mean_confidence_in", number(o.mean_confidence_in)},
                    {"mean_confidence_out", number(o.mean_confidence_out)}});
  return {{"seed", seed}, {"lambda", r.lambda}, {"rows", std::move(rows)}};
}

Json toy2d_run_json(std::uint64_t seed, const Toy2dResult& r) {
  Json rows = Json::array();
  for (const auto& [name, value] : r.mmd) rows.push_back({{"method", name}, {"mmd", number(value)}});
  Json traces = Json::object();
  for (std::size_t i = 0; i < r.refined.size(); ++i)
    traces["la-refine-" + std::to_string(r.refined[i].first)] = to_json(r.traces[i]);
  return {{"seed", seed},
          {"rhat", numbers(r.rhat)},
          {"hmc",
           {{"acceptance_rates", numbers(r.hmc.acceptance_rates)},
            {"step_sizes", numbers(r.hmc.step_sizes)},
            {"divergences", r.hmc.divergences},
            {"samples", r.hmc.pooled().size()}}},
          {"map", numbers(r.map.theta)},
          {"rows", std::move(rows)},
          {"elbo", std::move(traces)}};
}

Json mc_vs_analytic_json(const McVsAnalyticConfig& c, const McVsAnalyticResult& r) {
  return {{"format_version", kResultsFormatVersion},
          {"kind", "mc-vs-analytic"},
          {"seed", c.seed},
          {"regression",
           {{"n_test", c.n_test},
            {"mc_samples", c.mc_samples},
            {"max_std_gap", number(r.regression_max_std_gap)},
            {"mean_std_gap", number(r.regression_mean_std_gap)}}},
          {"grid",
           {{"n", c.grid2d},
            {"rows", r.grid.size()},
            {"max_confidence_gap", number(r.grid_max_confidence_gap)}}},
          {"linear_control",
           {{"samples", c.linear_samples},
            {"n_points", r.linear.standard_error.size()},
            {"max_z", number(r.linear.max_z)},
            {"within_3se", r.linear.max_z < 3.0}}}};
}

Json multi_seed_document(const std::string& kind, const std::vector<Json>& runs,
                         const std::string& rows_key, const std::string& name_key,
                         const std::vector<std::string>& fields) {
  std::map<std::string, std::map<std::string, std::vector<double>>> collected;
  for (const Json& run : runs)
    for (const Json& row : run.at(rows_key))
      for (const std::string& f : fields)
        if (row.contains(f) && row[f].is_number())
          collected[row.at(name_key).get<std::string>()][f].push_back(row[f].get<double>());
  Json summary = Json::object();
  for (const auto& [name, by_field] : collected) {
    Json entry = Json::object();
    for (const auto& [f, values] : by_field) entry["median_" + f] = median(values);
    summary[name] = std::move(entry);
  }
  return {{"format_version", kResultsFormatVersion},
          {"kind", kind},
          {"runs", runs},
          {"summary", std::move(summary)}};
}

Json to_json(const RunManifest& m) {
  Json j = {{"format_version", kResultsFormatVersion},
            {"subcommand", m.subcommand},
            {"config", m.config},
            {"seed", m.seed},
            {"artifacts", m.artifacts},
            {"wall_clock_seconds", m.wall_clock_seconds},
            {"version", library_version()},
            {"status", m.ok ? "ok" : "failed"}};
  if (!m.ok) j["error"] = m.error;
  return j;
}

}  // namespace lapref
