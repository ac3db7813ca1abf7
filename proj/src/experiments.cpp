#include "lapref/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

#include "lapref/data_io.hpp"
#include "lapref/error.hpp"
#include "lapref/laplace.hpp"

namespace lapref {
namespace {

// Stream ids, one per experiment, so seeds mean different things per command.
constexpr std::uint64_t kMcGridStream = 0x6d6367;
constexpr std::uint64_t kMixtureStream = 0x6d6978;
constexpr std::uint64_t kOodStream = 0x6f6f64;
constexpr std::uint64_t kSplitStream = 0x73706c;
constexpr std::uint64_t kMethodStream = 0x6d7468;
constexpr std::uint64_t kToyStream = 0x746f79;
constexpr std::uint64_t kMvaStream = 0x6d7661;

// Child keys inside a method stream.
enum : std::uint64_t {
  kKeyTune = 1,
  kKeyMap,
  kKeyPredict,
  kKeyMmd,
  kKeyRefine,
  kKeyVb,
  kKeyHmc,
  kKeyInit,
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void invalid(const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, msg); }

LogDensityFn log_posterior_fn(const Model& model, const Likelihood& lik, const Dataset& data,
                              double precision) {
  return [&model, lik, &data, precision](const Vector& theta, Vector& grad) {
    const BatchJoint joint =
        log_joint_batch(model, lik, theta.transpose(), data, precision, true);
    grad = joint.gradients.row(0).transpose();
    return joint.values[0];
  };
}

// Logits as an N x C matrix; the Bernoulli head becomes [0, f].
Matrix logit_matrix(const Model& model, const Likelihood& lik, const Vector& theta,
                    const Matrix& x) {
  const Matrix f = model_outputs(model, theta, x);
  if (lik.kind != LikelihoodKind::kBernoulli) return f;
  Matrix out(f.rows(), 2);
  out.col(0).setZero();
  out.col(1) = f.col(0);
  return out;
}

void require_classification(const Dataset& data, const char* where) {
  if (data.is_regression())
    invalid(std::string(where) + ": needs a classification dataset");
}

Model task_model(const Dataset& data) {
  return LinearModel{static_cast<int>(data.n_features()), data.n_classes, true};
}

Dataset task_data(const std::optional<Dataset>& data, const MixtureTask& task,
                  std::uint64_t seed) {
  Dataset out = data ? *data : make_mixture(task, seed);
  out.validate();
  require_classification(out, "task data");
  return out;
}

// A fitted method that can produce class probabilities for any inputs.
struct FittedMethod {
  MethodSpec spec;
  double seconds = 0.0;
  std::optional<Vector> theta;       // map / map-temp
  std::optional<double> temperature;  // map-temp
  std::optional<SampleSet> predictive_samples;
  std::optional<ElboTrace> trace;
  std::optional<Vector> rhat;
  // Fresh draws for the MMD; identity for HMC (its reference set).
  std::function<SampleSet(Eigen::Index, RngStream&)> sampler;
};

Matrix predict(const FittedMethod& m, const Model& model, const Likelihood& lik,
               const Matrix& x) {
  if (m.predictive_samples) return mc_predictive(*m.predictive_samples, model, lik, x).probs;
  if (m.temperature) return softmax_rows(logit_matrix(model, lik, *m.theta, x) / *m.temperature);
  return plugin_predictive(model, lik, *m.theta, x).probs;
}

struct MethodContext {
  const Model& model;
  const Likelihood& lik;
  const DataSplit& split;
  const FittedBase& base;
  const BayesConfig& config;
  RngStream root;
  std::optional<ChainSet> hmc_chains;
};

// Predictive draws use the same child stream for every sampled method, so
// LA and its refinements see common base noise.
FittedMethod fit_method(const MethodSpec& spec, MethodContext& ctx) {
  FittedMethod m;
  m.spec = spec;
  const auto start = Clock::now();
  const Eigen::Index s = ctx.config.mc_samples;
  RngStream predict_rng = ctx.root.split(kKeyPredict);
  switch (spec.kind) {
    case MethodSpec::Kind::kMap:
      m.theta = ctx.base.map.theta;
      break;
    case MethodSpec::Kind::kMapTemp: {
      m.theta = ctx.base.map.theta;
      if (ctx.split.validation.size() == 0) invalid("map-temp: empty validation split");
      m.temperature = temperature_scale(
          logit_matrix(ctx.model, ctx.lik, *m.theta, ctx.split.validation.features),
          ctx.split.validation.labels);
      break;
    }
    case MethodSpec::Kind::kLa: {
      m.predictive_samples = ctx.base.la.sample(s, predict_rng);
      const GaussianPosterior la = ctx.base.la;
      m.sampler = [la](Eigen::Index n, RngStream& rng) { return la.sample(n, rng); };
      break;
    }
    case MethodSpec::Kind::kLaRefine: {
      RefineConfig rc = ctx.config.refine;
      rc.flow_length = spec.flow_length;
      rc.seed = ctx.root.split(kKeyRefine)
                    .split(static_cast<std::uint64_t>(rc.flow_length))
                    .next_u64();
      auto [rp, trace] = refine(ctx.base.la, ctx.model, ctx.lik, ctx.split.train,
                                ctx.base.lambda, rc);
      m.predictive_samples = sample_refined(rp, s, predict_rng).samples;
      m.trace = std::move(trace);
      m.sampler = [rp = std::move(rp)](Eigen::Index n, RngStream& rng) {
        return sample_refined(rp, n, rng).samples;
      };
      break;
    }
    case MethodSpec::Kind::kVb: {
      VbConfig vc = ctx.config.vb;
      vc.seed = ctx.root.split(kKeyVb).next_u64();
      const GaussianPosterior vb =
          meanfield_vb(ctx.model, ctx.lik, ctx.split.train, ctx.base.lambda, vc);
      m.predictive_samples = vb.sample(s, predict_rng);
      m.sampler = [vb](Eigen::Index n, RngStream& rng) { return vb.sample(n, rng); };
      break;
    }
    case MethodSpec::Kind::kHmc: {
      HmcConfig hc = ctx.config.hmc;
      hc.seed = ctx.root.split(kKeyHmc).next_u64();
      ctx.hmc_chains = hmc_sample_whitened(
          log_posterior_fn(ctx.model, ctx.lik, ctx.split.train, ctx.base.lambda),
          ctx.base.la.mean, ctx.base.la.chol, hc);
      m.rhat = gelman_rubin(*ctx.hmc_chains);
      m.predictive_samples = ctx.hmc_chains->pooled();
      break;
    }
  }
  m.seconds = seconds_since(start);
  return m;
}

std::vector<Eigen::Index> iota_rows(Eigen::Index lo, Eigen::Index hi) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(hi - lo));
  std::iota(rows.begin(), rows.end(), lo);
  return rows;
}

// Gaussian KDE of the first two coordinates on a regular grid.
DensityGrid kde_grid(const std::string& method, const Matrix& draws, const std::vector<double>& xs,
                     const std::vector<double>& ys) {
  DensityGrid g;
  g.method = method;
  g.x = xs;
  g.y = ys;
  g.density = Matrix::Zero(static_cast<Eigen::Index>(xs.size()),
                           static_cast<Eigen::Index>(ys.size()));
  const Eigen::Index n = draws.rows();
  Eigen::Vector2d sd;
  for (int j = 0; j < 2; ++j) {
    const Vector c = draws.col(j).array() - draws.col(j).mean();
    sd[j] = std::max(std::sqrt(c.squaredNorm() / std::max<Eigen::Index>(n - 1, 1)), 1e-12);
  }
  // Scott's rule in two dimensions.
  const Eigen::Vector2d h = sd * std::pow(static_cast<double>(n), -1.0 / 6.0);
  const double norm = 1.0 / (2.0 * std::numbers::pi * h[0] * h[1] * static_cast<double>(n));
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < ys.size(); ++j) {
      double total = 0.0;
      for (Eigen::Index s = 0; s < n; ++s) {
        const double a = (xs[i] - draws(s, 0)) / h[0];
        const double b = (ys[j] - draws(s, 1)) / h[1];
        total += std::exp(-0.5 * (a * a + b * b));
      }
      g.density(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = total * norm;
    }
  return g;
}

}  // namespace

// ---------------------------------------------------------------- mc-grid

void McGridConfig::validate() const {
  if (samples < 1) invalid("mc-grid: samples must be >= 1");
  if (repeats < 1) invalid("mc-grid: repeats must be >= 1");
  if (grid < 1) invalid("mc-grid: grid must be >= 1");
  if (!(m_min <= m_max)) invalid("mc-grid: m range is empty");
  if (!(s_min <= s_max) || !(s_min >= 0.0)) invalid("mc-grid: s range must be within [0, inf)");
  if (grid > 1 && (m_min == m_max || s_min == s_max))
    invalid("mc-grid: degenerate range with more than one grid point");
}

McGridResult run_mc_grid(const McGridConfig& config) {
  config.validate();
  const auto start = Clock::now();
  McGridResult out;
  out.grid = mc_error_grid(linspace(config.m_min, config.m_max, config.grid),
                           linspace(config.s_min, config.s_max, config.grid), config.samples,
                           config.repeats, RngStream(config.seed, kMcGridStream));
  out.seconds = seconds_since(start);
  return out;
}

// ------------------------------------------------------------ shared data

DataSplit split_dataset(const Dataset& data, double test_fraction, double validation_fraction,
                        RngStream& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    invalid("split: test fraction must be in (0, 1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    invalid("split: validation fraction must be in [0, 1)");
  const Eigen::Index n = data.size();
  std::vector<Eigen::Index> perm = iota_rows(0, n);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(std::min(j, i))]);
  }
  const auto n_test = static_cast<Eigen::Index>(std::lround(test_fraction * n));
  const auto n_val = static_cast<Eigen::Index>(std::lround(validation_fraction * (n - n_test)));
  if (n_test < 1 || n - n_test - n_val < 1) invalid("split: too few rows");
  const auto cut = [&](Eigen::Index lo, Eigen::Index hi) {
    return data.subset(std::vector<Eigen::Index>(perm.begin() + lo, perm.begin() + hi));
  };
  DataSplit split;
  split.test = cut(0, n_test);
  split.validation = cut(n_test, n_test + n_val);
  split.train = cut(n_test + n_val, n);
  return split;
}

Dataset make_mixture(const MixtureTask& task, std::uint64_t seed) {
  RngStream rng(seed, kMixtureStream);
  return gen_mixture_classes(task.n_classes, task.n_features, task.n_points, rng, task.radius);
}

Dataset make_ood_mixture(const MixtureTask& task, int n_points, std::uint64_t seed) {
  RngStream rng(seed, kOodStream);
  Dataset d = gen_mixture_classes(task.n_classes, task.n_features, n_points, rng, task.radius);
  return d;
}

// --------------------------------------------------------------- methods

MethodSpec parse_method(const std::string& name) {
  MethodSpec m;
  m.name = name;
  if (name == "map") {
    m.kind = MethodSpec::Kind::kMap;
  } else if (name == "map-temp") {
    m.kind = MethodSpec::Kind::kMapTemp;
  } else if (name == "la") {
    m.kind = MethodSpec::Kind::kLa;
  } else if (name == "vb") {
    m.kind = MethodSpec::Kind::kVb;
  } else if (name == "hmc") {
    m.kind = MethodSpec::Kind::kHmc;
  } else if (name.rfind("la-refine-", 0) == 0) {
    const std::string len = name.substr(10);
    if (len.empty() || len.find_first_not_of("0123456789") != std::string::npos ||
        len.size() > 4)
      invalid("unknown method: " + name);
    m.kind = MethodSpec::Kind::kLaRefine;
    m.flow_length = std::stoi(len);
    if (m.flow_length < 1) invalid("unknown method: " + name);
  } else {
    invalid("unknown method: " + name);
  }
  return m;
}

std::vector<MethodSpec> parse_methods(const std::vector<std::string>& names) {
  if (names.empty()) invalid("no methods given");
  std::vector<MethodSpec> out;
  for (const std::string& n : names) out.push_back(parse_method(n));
  return out;
}

RefineConfig BayesConfig::default_task_refine() {
  RefineConfig rc;
  rc.learning_rate = 1e-2;
  return rc;
}

HmcConfig BayesConfig::default_task_hmc() {
  HmcConfig hc;
  hc.n_chains = 4;
  hc.n_warmup = 200;
  hc.n_samples = 150;
  hc.leapfrog_steps = 16;
  return hc;
}

FittedBase fit_base(const Model& model, const Likelihood& lik, const DataSplit& split,
                    const BayesConfig& config, std::uint64_t seed) {
  const auto start = Clock::now();
  const RngStream root(seed, kMethodStream);
  FittedBase base;
  MapConfig map_config;
  map_config.seed = root.split(kKeyMap).next_u64();
  // Linear models finish with Newton steps; Adam only needs to warm start.
  if (std::holds_alternative<LinearModel>(model)) map_config.max_epochs = 200;
  if (config.lambda) {
    if (!(*config.lambda > 0.0)) invalid("lambda must be positive");
    base.lambda = *config.lambda;
  } else {
    if (split.validation.size() == 0) invalid("lambda search needs a validation split");
    TuneOptions opts;
    opts.seed = root.split(kKeyTune).next_u64();
    opts.map = map_config;
    base.tuning = tune_prior_precision(model, lik, split.train, split.validation,
                                       config.lambda_grid, opts);
    base.lambda = base.tuning->best_precision;
  }
  base.map = fit_map(model, lik, split.train, base.lambda, map_config);
  base.la = laplace_posterior(
      base.map.theta, hessian_log_joint(model, lik, base.map.theta, split.train, base.lambda),
      base.lambda);
  base.la_seconds = seconds_since(start);
  return base;
}

// --------------------------------------------------------------- compare

CompareResult run_compare(const CompareConfig& config) {
  std::vector<MethodSpec> methods = parse_methods(config.methods);
  const Dataset data = task_data(config.data, config.task, config.seed);
  RngStream split_rng(config.seed, kSplitStream);
  const DataSplit split =
      split_dataset(data, config.test_fraction, config.validation_fraction, split_rng);
  const Model model = task_model(data);
  const Likelihood lik = Likelihood::categorical();

  CompareResult result;
  result.n_train = split.train.size();
  result.n_test = split.test.size();
  result.base = fit_base(model, lik, split, config.bayes, config.seed);
  MethodContext ctx{model, lik, split, result.base, config.bayes,
                    RngStream(config.seed, kMethodStream), std::nullopt};

  // HMC first, so every sampled method can be compared against it.
  std::stable_partition(methods.begin(), methods.end(),
                        [](const MethodSpec& m) { return m.kind == MethodSpec::Kind::kHmc; });
  std::vector<FittedMethod> fitted;
  for (const MethodSpec& m : methods) fitted.push_back(fit_method(m, ctx));

  std::optional<SampleSet> reference;
  if (ctx.hmc_chains) reference = ctx.hmc_chains->pooled();

  for (const FittedMethod& f : fitted) {
    MethodOutcome row;
    row.method = f.spec;
    const Matrix probs = predict(f, model, lik, split.test.features);
    const Eigen::Index s = f.predictive_samples ? f.predictive_samples->size() : 1;
    row.metrics = evaluate_predictions(f.spec.name, probs, split.test.labels, s, config.seed);
    row.seconds = f.seconds;
    row.temperature = f.temperature;
    row.trace = f.trace;
    row.rhat = f.rhat;
    if (reference) {
      if (f.spec.kind == MethodSpec::Kind::kHmc) {
        // Self-distance between the two halves of the pooled chains.
        const Matrix& all = reference->draws;
        const Eigen::Index half = all.rows() / 2;
        Matrix even(half, all.cols()), odd(half, all.cols());
        for (Eigen::Index i = 0; i < half; ++i) {
          even.row(i) = all.row(2 * i);
          odd.row(i) = all.row(2 * i + 1);
        }
        row.metrics.mmd = mmd_report(even, odd);
      } else if (f.sampler) {
        RngStream mmd_rng = ctx.root.split(kKeyMmd);
        row.metrics.mmd = mmd_report(f.sampler(config.bayes.mmd_samples, mmd_rng).draws,
                                     reference->draws);
      }
    }
    result.rows.push_back(std::move(row));
  }
  // Report rows in the requested order.
  std::vector<MethodOutcome> ordered;
  for (const std::string& name : config.methods)
    for (const MethodOutcome& r : result.rows)
      if (r.method.name == name) {
        ordered.push_back(r);
        break;
      }
  result.rows = std::move(ordered);
  return result;
}

// ------------------------------------------------------------ ablate-flow

std::string_view ablation_base_name(AblationBase b) {
  return b == AblationBase::kLaplace ? "la" : "standard-normal";
}

AblationBase parse_ablation_base(const std::string& name) {
  if (name == "la") return AblationBase::kLaplace;
  if (name == "standard-normal") return AblationBase::kStandardNormal;
  invalid("unknown base: " + name);
  return AblationBase::kLaplace;
}

AblateResult run_ablate(const AblateConfig& config) {
  if (config.lengths.empty() || config.bases.empty()) invalid("ablate: empty lengths or bases");
  for (int l : config.lengths)
    if (l < 1) invalid("ablate: flow lengths must be >= 1");
  const Dataset data = task_data(config.data, config.task, config.seed);
  RngStream split_rng(config.seed, kSplitStream);
  const DataSplit split =
      split_dataset(data, config.test_fraction, config.validation_fraction, split_rng);
  const Model model = task_model(data);
  const Likelihood lik = Likelihood::categorical();
  const FittedBase base = fit_base(model, lik, split, config.bayes, config.seed);
  const RngStream root(config.seed, kMethodStream);

  AblateResult result;
  result.lambda = base.lambda;
  for (AblationBase b : config.bases) {
    const GaussianPosterior q = b == AblationBase::kLaplace
                                    ? base.la
                                    : GaussianPosterior::standard_normal(model_dim(model));
    for (int l : config.lengths) {
      RefineConfig rc = config.bayes.refine;
      rc.flow_length = l;
      rc.seed = root.split(kKeyRefine).split(static_cast<std::uint64_t>(l)).next_u64();
      const auto start = Clock::now();
      const auto [rp, trace] = refine(q, model, lik, split.train, base.lambda, rc);
      AblationRow row;
      row.seconds = seconds_since(start);
      row.base = b;
      row.length = l;
      RngStream predict_rng = root.split(kKeyPredict);
      const Matrix probs =
          mc_predictive(sample_refined(rp, config.bayes.mc_samples, predict_rng).samples, model,
                        lik, split.test.features)
              .probs;
      row.nll = nll(probs, split.test.labels);
      row.ece = ece(probs, split.test.labels);
      row.accuracy = accuracy(probs, split.test.labels);
      row.final_elbo = trace.best_elbo;
      result.rows.push_back(row);
    }
  }
  return result;
}

// -------------------------------------------------------------------- ood

OodResult run_ood(const OodConfig& config) {
  const std::vector<MethodSpec> methods = parse_methods(config.methods);
  const Dataset in = task_data(config.in_data, config.task, config.seed);
  MixtureTask ood_task = config.task;
  ood_task.n_classes = in.n_classes;
  ood_task.n_features = static_cast<int>(in.n_features());
  const Dataset out = config.out_data ? *config.out_data
                                      : make_ood_mixture(ood_task, config.n_out, config.seed);
  if (out.n_features() != in.n_features())
    throw Error(ErrorCode::kDimensionMismatch, "ood: in and out feature widths differ");
  if (out.size() == 0) invalid("ood: empty out-of-distribution set");
  if (!out.is_regression() && out.n_classes > in.n_classes && config.out_data)
    throw Error(ErrorCode::kDimensionMismatch, "ood: out data has more classes than the model");
  RngStream split_rng(config.seed, kSplitStream);
  const DataSplit split =
      split_dataset(in, config.test_fraction, config.validation_fraction, split_rng);
  const Model model = task_model(in);
  const Likelihood lik = Likelihood::categorical();
  const FittedBase base = fit_base(model, lik, split, config.bayes, config.seed);
  MethodContext ctx{model, lik, split, base, config.bayes, RngStream(config.seed, kMethodStream),
                    std::nullopt};
  OodResult result;
  result.lambda = base.lambda;
  for (const MethodSpec& m : methods) {
    const FittedMethod f = fit_method(m, ctx);
    const Vector score_in = max_probability(predict(f, model, lik, split.test.features));
    const Vector score_out = max_probability(predict(f, model, lik, out.features));
    OodRow row;
    row.method = m;
    row.fpr95 = fpr95(score_in, score_out);
    row.mean_confidence_in = score_in.mean();
    row.mean_confidence_out = score_out.mean();
    result.rows.push_back(row);
  }
  return result;
}

// ----------------------------------------------------------------- toy-2d

RefineConfig Toy2dConfig::default_toy_refine() {
  RefineConfig rc;
  rc.learning_rate = 1e-2;
  rc.steps_per_epoch = 50;
  rc.mc_samples = 64;
  return rc;
}

Toy2dResult run_toy2d(const Toy2dConfig& config) {
  if (config.mmd_samples < 2) invalid("toy-2d: mmd samples must be >= 2");
  if (config.density_grid < 2) invalid("toy-2d: density grid must be >= 2");
  for (int l : config.flow_lengths)
    if (l < 1) invalid("toy-2d: flow lengths must be >= 1");
  const RngStream root(config.seed, kToyStream);
  Toy2dResult r;
  RngStream data_rng = root.split(0);
  r.data = gen_toy_logreg(data_rng);
  const Model model = LinearModel{2, 1, true};
  const Likelihood lik = Likelihood::bernoulli();
  const double lambda = config.lambda;

  MapConfig mc;
  mc.seed = root.split(kKeyMap).next_u64();
  r.map = fit_map(model, lik, r.data, lambda, mc);
  r.la = laplace_posterior(r.map.theta, hessian_log_joint(model, lik, r.map.theta, r.data, lambda),
                           lambda);
  VbConfig vc = config.vb;
  vc.seed = root.split(kKeyVb).next_u64();
  r.vb = meanfield_vb(model, lik, r.data, lambda, vc);
  for (int l : config.flow_lengths) {
    RefineConfig rc = config.refine;
    rc.flow_length = l;
    rc.seed = root.split(kKeyRefine).split(static_cast<std::uint64_t>(l)).next_u64();
    auto [rp, trace] = refine(r.la, model, lik, r.data, lambda, rc);
    r.refined.emplace_back(l, std::move(rp));
    r.traces.push_back(std::move(trace));
  }

  HmcConfig hc = config.hmc;
  hc.seed = root.split(kKeyHmc).next_u64();
  RngStream init_rng = root.split(kKeyInit);
  r.hmc = hmc_sample(log_posterior_fn(model, lik, r.data, lambda),
                     jittered_inits(r.map.theta, r.la.chol, hc.n_chains, 0.1, init_rng), hc);
  r.rhat = gelman_rubin(r.hmc);
  if (!(r.rhat.maxCoeff() < 1.1))
    throw Error(ErrorCode::kNotConverged,
                "toy-2d: HMC did not converge (max split R-hat " +
                    std::to_string(r.rhat.maxCoeff()) + " >= 1.1)");

  const Eigen::Index n = config.mmd_samples;
  const SampleSet reference = r.hmc.thinned(std::min<Eigen::Index>(n, r.hmc.pooled().size()));
  r.samples["hmc"] = reference;
  // Common base noise across LA and its refinements.
  RngStream la_rng = root.split(kKeyMmd);
  r.samples["la"] = r.la.sample(n, la_rng);
  RngStream vb_rng = root.split(kKeyMmd).split(1);
  r.samples["vb"] = r.vb.sample(n, vb_rng);
  for (const auto& [l, rp] : r.refined) {
    RngStream rrng = root.split(kKeyMmd);
    r.samples["la-refine-" + std::to_string(l)] = sample_refined(rp, n, rrng).samples;
  }
  for (const auto& [name, s] : r.samples)
    if (name != "hmc") r.mmd[name] = mmd_report(s.draws, reference.draws);

  // Density grids over the two weights, framed by the HMC draws.
  const Matrix& ref = reference.draws;
  const auto axis = [&](int j) {
    const double lo = ref.col(j).minCoeff(), hi = ref.col(j).maxCoeff();
    const double pad = 0.15 * (hi - lo);
    return linspace(lo - pad, hi + pad, config.density_grid);
  };
  const auto xs = axis(0), ys = axis(1);
  for (const auto& [name, s] : r.samples) r.densities.push_back(kde_grid(name, s.draws, xs, ys));
  return r;
}

// --------------------------------------------------------- mc-vs-analytic

McVsAnalyticResult run_mc_vs_analytic(const McVsAnalyticConfig& config) {
  if (config.n_test < 1 || config.mc_samples < 2 || config.grid2d < 1 ||
      config.linear_samples < 2)
    invalid("mc-vs-analytic: counts must be positive");
  const RngStream root(config.seed, kMvaStream);
  McVsAnalyticResult out;
  HessianOptions hopts;
  hopts.max_dim_mlp = 1000;

  // Regression arm: all-layer LA on a two-hidden-layer tanh network.
  {
    RngStream data_rng = root.split(0);
    const Dataset data =
        config.regression_data ? *config.regression_data : gen_toy_regression(data_rng, 60);
    if (!data.is_regression() || data.n_features() != 1)
      invalid("mc-vs-analytic: regression data must have one feature and a target column");
    const Model net = TinyMlp{{1, 20, 20, 1}, Activation::kTanh};
    const Likelihood lik = Likelihood::gaussian(0.3);
    // Shorter runs stop near a saddle and leave the exact Hessian indefinite.
    MapConfig mc;
    mc.max_epochs = 50000;
    mc.learning_rate = 0.005;
    mc.seed = root.split(kKeyMap).next_u64();
    RngStream init_rng = root.split(kKeyInit);
    const Vector init = 0.5 * init_rng.normal_vector(model_dim(net));
    const MapResult map = fit_map(net, lik, data, config.lambda, mc, &init);
    const GaussianPosterior la = laplace_posterior(
        map.theta, hessian_log_joint(net, lik, map.theta, data, config.lambda, hopts),
        config.lambda);
    const std::vector<double> xs = linspace(-6.0, 6.0, config.n_test);
    Matrix x(config.n_test, 1);
    for (int i = 0; i < config.n_test; ++i) x(i, 0) = xs[static_cast<std::size_t>(i)];
    RngStream s_rng = root.split(kKeyPredict);
    const RegressionPredictive mc_pred =
        mc_regression_predictive(la.sample(config.mc_samples, s_rng), net, lik, x);
    const RegressionPredictive lin_pred =
        linearized_regression_predictive(linearized_outputs(la, net, x), lik);
    double total = 0.0;
    for (int i = 0; i < config.n_test; ++i) {
      RegressionComparisonRow row;
      row.x = xs[static_cast<std::size_t>(i)];
      row.mc_mean = mc_pred.mean[i];
      row.mc_std = std::sqrt(mc_pred.variance[i]);
      row.lin_mean = lin_pred.mean[i];
      row.lin_std = std::sqrt(lin_pred.variance[i]);
      const double gap = std::abs(row.mc_std - row.lin_std);
      out.regression_max_std_gap = std::max(out.regression_max_std_gap, gap);
      total += gap;
      out.regression.push_back(row);
    }
    out.regression_mean_std_gap = total / config.n_test;
  }

  // Classification arm: MC vs MPA confidence over a 2D input grid.
  {
    RngStream data_rng = root.split(10);
    const Dataset data = gen_mixture_classes(3, 2, 150, data_rng, 3.0);
    const Model net = TinyMlp{{2, 16, 3}, Activation::kTanh};
    const Likelihood lik = Likelihood::categorical();
    MapConfig mc;
    mc.max_epochs = 3000;
    mc.learning_rate = 0.02;
    mc.seed = root.split(kKeyMap).split(1).next_u64();
    RngStream init_rng = root.split(kKeyInit).split(1);
    const Vector init = 0.5 * init_rng.normal_vector(model_dim(net));
    const MapResult map = fit_map(net, lik, data, config.lambda, mc, &init);
    const GaussianPosterior la = laplace_posterior(
        map.theta, hessian_log_joint(net, lik, map.theta, data, config.lambda, hopts),
        config.lambda);
    const std::vector<double> axis = linspace(-8.0, 8.0, config.grid2d);
    Matrix x(static_cast<Eigen::Index>(config.grid2d) * config.grid2d, 2);
    for (int i = 0; i < config.grid2d; ++i)
      for (int j = 0; j < config.grid2d; ++j) {
        x(i * config.grid2d + j, 0) = axis[static_cast<std::size_t>(i)];
        x(i * config.grid2d + j, 1) = axis[static_cast<std::size_t>(j)];
      }
    RngStream s_rng = root.split(kKeyPredict).split(1);
    const Vector mc_conf = max_probability(
        mc_predictive(la.sample(config.mc_samples, s_rng), net, lik, x).probs);
    const Vector mpa_conf =
        max_probability(analytic_predictive(linearized_outputs(la, net, x), lik).probs);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out.grid.push_back({x(i, 0), x(i, 1), mc_conf[i], mpa_conf[i]});
      out.grid_max_confidence_gap =
          std::max(out.grid_max_confidence_gap, std::abs(mc_conf[i] - mpa_conf[i]));
    }
  }

  // Linear control: both sampling routes draw sigma(f) with f ~ N(m, s^2).
  {
    RngStream data_rng = root.split(20);
    const Dataset data = gen_toy_logreg(data_rng);
    const LinearModel lin{2, 1, true};
    const Likelihood lik = Likelihood::bernoulli();
    const MapResult map = fit_map(lin, lik, data, config.lambda);
    const GaussianPosterior la = laplace_posterior(
        map.theta, hessian_log_joint(lin, lik, map.theta, data, config.lambda), config.lambda);
    Matrix x(10, 2);
    const std::vector<double> t = linspace(-3.0, 3.0, 10);
    for (int i = 0; i < 10; ++i) {
      x(i, 0) = t[static_cast<std::size_t>(i)];
      x(i, 1) = 0.5 * t[static_cast<std::size_t>(i)] - 1.0;
    }
    const Eigen::Index s = config.linear_samples;
    RngStream a_rng = root.split(kKeyPredict).split(2);
    RngStream b_rng = root.split(kKeyPredict).split(3);
    const SampleSet draws = la.sample(s, a_rng);
    // Per-draw probabilities, kept for the standard errors.
    const Matrix p = (draws.draws * augment_features(lin, x).transpose())
                         .unaryExpr([](double f) { return sigmoid(f); });
    LinearControl& c = out.linear;
    c.via_samples = mc_predictive(draws, lin, lik, x).probs;
    c.via_outputs = linearized_mc_predictive(linearized_outputs(la, lin, x), lik, s, b_rng).probs;
    c.standard_error.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mean = p.col(i).mean();
      const double var = (p.col(i).array() - mean).square().sum() / static_cast<double>(s - 1);
      c.standard_error[i] = std::sqrt(2.0 * var / static_cast<double>(s));
      c.max_z = std::max(c.max_z,
                         std::abs(c.via_samples(i, 1) - c.via_outputs(i, 1)) /
                             c.standard_error[i]);
    }
  }
  return out;
}

}  // namespace lapref
