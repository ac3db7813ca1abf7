#pragma once

// Experiment drivers behind the CLI subcommands. Each takes a config,
// returns plain result structs, and leaves serialization to the caller.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lapref/metrics.hpp"
#include "lapref/predictive.hpp"
#include "lapref/refine.hpp"
#include "lapref/sampler.hpp"

namespace lapref {

// ---------------------------------------------------------------- mc-grid

struct McGridConfig {
  std::int64_t samples = 100;
  double m_min = -5.0, m_max = 5.0;
  double s_min = 0.1, s_max = 10.0;
  int grid = 50;
  int repeats = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct McGridResult {
  ErrorGrid grid;
  double seconds = 0.0;
};

McGridResult run_mc_grid(const McGridConfig& config);

// ------------------------------------------------------------ shared data

struct DataSplit {
  Dataset train;       // fit data
  Dataset validation;  // lambda selection and temperature scaling
  Dataset test;
};

// Shuffles, holds out `test_fraction` for testing and `validation_fraction`
// of the remainder for validation.
DataSplit split_dataset(const Dataset& data, double test_fraction,
                        double validation_fraction, RngStream& rng);

// The desk classification task: 10-class Gaussian mixture in 64 dimensions.
struct MixtureTask {
  int n_classes = 10;
  int n_features = 64;
  int n_points = 10000;
  double radius = 3.5;
};

Dataset make_mixture(const MixtureTask& task, std::uint64_t seed);

// --------------------------------------------------------------- methods

// Parsed method names: map, map-temp, la, la-refine-<length>, vb, hmc.
struct MethodSpec {
  enum class Kind { kMap, kMapTemp, kLa, kLaRefine, kVb, kHmc } kind = Kind::kMap;
  int flow_length = 0;
  std::string name;
};

MethodSpec parse_method(const std::string& name);
std::vector<MethodSpec> parse_methods(const std::vector<std::string>& names);

struct BayesConfig {
  std::vector<double> lambda_grid = {0.01, 0.1, 1.0, 10.0, 100.0};
  std::optional<double> lambda;  // skips the search when set
  std::int64_t mc_samples = 20;
  int mmd_samples = 600;
  RefineConfig refine = default_task_refine();
  VbConfig vb;
  HmcConfig hmc = default_task_hmc();

  static RefineConfig default_task_refine();
  static HmcConfig default_task_hmc();
};

struct MethodOutcome {
  MethodSpec method;
  MetricsReport metrics;
  double seconds = 0.0;
  std::optional<double> temperature;
  std::optional<ElboTrace> trace;
  std::optional<Vector> rhat;
};

// Everything fitted on one split, shared by compare / ablate / ood.
struct FittedBase {
  double lambda = 0.0;
  std::optional<TuneResult> tuning;
  MapResult map;
  GaussianPosterior la;
  double la_seconds = 0.0;
};

FittedBase fit_base(const Model& model, const Likelihood& lik, const DataSplit& split,
                    const BayesConfig& config, std::uint64_t seed);

// --------------------------------------------------------------- compare

struct CompareConfig {
  std::vector<std::string> methods = {"map", "map-temp", "la", "la-refine-5", "vb", "hmc"};
  std::optional<Dataset> data;  // default: the mixture task
  MixtureTask task;
  double test_fraction = 0.2;
  double validation_fraction = 0.1;
  BayesConfig bayes;
  std::uint64_t seed = 0;
};

struct CompareResult {
  FittedBase base;
  std::vector<MethodOutcome> rows;
  Eigen::Index n_train = 0, n_test = 0;
};

CompareResult run_compare(const CompareConfig& config);

// ------------------------------------------------------------ ablate-flow

enum class AblationBase { kLaplace, kStandardNormal };
std::string_view ablation_base_name(AblationBase b);
AblationBase parse_ablation_base(const std::string& name);

struct AblateConfig {
  std::vector<int> lengths = {1, 5, 10, 20};
  std::vector<AblationBase> bases = {AblationBase::kLaplace, AblationBase::kStandardNormal};
  std::optional<Dataset> data;
  MixtureTask task;
  double test_fraction = 0.2;
  double validation_fraction = 0.1;
  BayesConfig bayes;
  std::uint64_t seed = 0;
};

struct AblationRow {
  AblationBase base = AblationBase::kLaplace;
  int length = 0;
  double nll = 0.0;
  double ece = 0.0;
  double accuracy = 0.0;
  double final_elbo = 0.0;
  double seconds = 0.0;
};

struct AblateResult {
  double lambda = 0.0;
  std::vector<AblationRow> rows;
};

AblateResult run_ablate(const AblateConfig& config);

// -------------------------------------------------------------------- ood

struct OodConfig {
  std::vector<std::string> methods = {"map", "la", "la-refine-5"};
  std::optional<Dataset> in_data;   // default: the mixture task
  std::optional<Dataset> out_data;  // default: fresh modes at the same radius
  MixtureTask task;
  int n_out = 2000;
  double test_fraction = 0.2;
  double validation_fraction = 0.1;
  BayesConfig bayes;
  std::uint64_t seed = 0;
};

struct OodRow {
  MethodSpec method;
  double fpr95 = 0.0;
  double mean_confidence_in = 0.0;
  double mean_confidence_out = 0.0;
};

struct OodResult {
  double lambda = 0.0;
  std::vector<OodRow> rows;
};

// Out-of-distribution points: unit-covariance modes along fresh random
// directions at the task radius.
Dataset make_ood_mixture(const MixtureTask& task, int n_points, std::uint64_t seed);

OodResult run_ood(const OodConfig& config);

// ----------------------------------------------------------------- toy-2d

struct Toy2dConfig {
  std::vector<int> flow_lengths = {1, 5, 10};
  double lambda = 1.0;
  int mmd_samples = 1000;
  int density_grid = 60;
  RefineConfig refine = default_toy_refine();
  VbConfig vb;
  HmcConfig hmc;  // 4 x 600 by default
  std::uint64_t seed = 0;

  static RefineConfig default_toy_refine();
};

struct DensityGrid {
  std::string method;
  std::vector<double> x, y;  // axis coordinates (weights w0, w1)
  Matrix density;            // KDE of the (w0, w1) marginal, x by y
};

struct Toy2dResult {
  Dataset data;
  MapResult map;
  GaussianPosterior la;
  GaussianPosterior vb;
  std::vector<std::pair<int, RefinedPosterior>> refined;
  std::vector<ElboTrace> traces;
  ChainSet hmc;
  Vector rhat;
  // Sample sets compared against HMC, keyed by method name
  // ("la", "vb", "la-refine-<l>", "hmc").
  std::map<std::string, SampleSet> samples;
  std::map<std::string, double> mmd;
  std::vector<DensityGrid> densities;
};

// Throws NotConverged when any HMC dimension has split R-hat >= 1.1.
Toy2dResult run_toy2d(const Toy2dConfig& config);

// --------------------------------------------------------- mc-vs-analytic

struct McVsAnalyticConfig {
  std::optional<Dataset> regression_data;  // default: toy regression, n = 60
  int n_test = 100;
  std::int64_t mc_samples = 10000;
  int grid2d = 40;
  std::int64_t linear_samples = 100000;
  double lambda = 1.0;
  std::uint64_t seed = 0;
};

struct RegressionComparisonRow {
  double x = 0.0;
  double mc_mean = 0.0, mc_std = 0.0;
  double lin_mean = 0.0, lin_std = 0.0;
};

struct GridComparisonRow {
  double x0 = 0.0, x1 = 0.0;
  double mc_confidence = 0.0;
  double mpa_confidence = 0.0;
};

struct LinearControl {
  Matrix via_samples;  // N x 2 Bernoulli predictive
  Matrix via_outputs;
  Vector standard_error;  // per point, of the difference
  double max_z = 0.0;     // max |difference| / standard error
};

struct McVsAnalyticResult {
  std::vector<RegressionComparisonRow> regression;
  double regression_max_std_gap = 0.0;   // max |mc_std - lin_std|
  double regression_mean_std_gap = 0.0;  // mean |mc_std - lin_std|
  std::vector<GridComparisonRow> grid;
  double grid_max_confidence_gap = 0.0;
  LinearControl linear;
};

McVsAnalyticResult run_mc_vs_analytic(const McVsAnalyticConfig& config);

}  // namespace lapref
