// Acceptance checks, one PASS/FAIL line per criterion. Exit status is the
// number of failures (capped at 1). `acceptance 3 7` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lapref/data_io.hpp"
#include "lapref/error.hpp"
#include "lapref/experiments.hpp"
#include "lapref/laplace.hpp"

using namespace lapref;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a sub-check; the criterion passes only if every one holds.
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v) {
  std::ostringstream s;
  s.precision(4);
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

RadialFlowStack random_stack(Eigen::Index d, int length, RngStream& rng) {
  RadialFlowStack stack = RadialFlowStack::identity(d);
  for (int l = 0; l < length; ++l) {
    RadialLayer layer;
    layer.center = rng.normal_vector(d);
    layer.raw_alpha = rng.normal();
    layer.raw_beta = 2.0 * rng.normal();
    stack.layers.push_back(layer);
  }
  return stack;
}

GaussianPosterior random_gaussian(Eigen::Index d, double scale, RngStream& rng) {
  const Matrix a = scale * rng.normal_matrix(d, d);
  return GaussianPosterior::from_covariance(scale * rng.normal_vector(d),
                                            a * a.transpose() + 0.3 * scale * Matrix::Identity(d, d),
                                            1.0, Provenance::kManual);
}

// ------------------------------------------------------------------ 1

void mc_error_band(Outcome& o) {
  McGridConfig c;  // S = 100, 10 repeats, 50 x 50 grid
  const auto start = Clock::now();
  const McGridResult r = run_mc_grid(c);
  const double t = seconds_since(start);
  o.detail << "max MC error " << r.grid.max_mc_error << " (mean over repeats "
           << r.grid.max_mean_mc_error << "), max probit error " << r.grid.max_probit_error
           << ", " << t << " s. ";
  o.check(t < 60.0, "runtime < 60 s");
  o.check(r.grid.max_mc_error >= 0.10 && r.grid.max_mc_error <= 0.25, "MC max in [0.10, 0.25]");
  o.check(r.grid.max_probit_error < r.grid.max_mc_error, "probit max < MC max");
}

// ------------------------------------------------------------------ 2

void mc_scaling_law(Outcome& o) {
  const std::vector<ScalingPoint> pts =
      mc_error_scaling(1.0, 2.0, {10, 100, 1000, 10000, 100000}, 200, RngStream(2, 2));
  const double slope = fit_log_log_slope(pts);
  o.detail << "slope " << slope << ". ";
  o.check(std::abs(slope + 0.5) <= 0.1, "slope in -0.5 +- 0.1");
}

// ------------------------------------------------------------------ 3

void change_of_variables(Outcome& o) {
  const auto start = Clock::now();
  RngStream rng(3);
  double worst_density = 0.0, worst_det = 0.0, worst_inverse = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.next_u64() % 5);
    const int length = 1 + static_cast<int>(rng.next_u64() % 3);
    const RefinedPosterior rp(random_gaussian(d, 1.0, rng), random_stack(d, length, rng));
    const Vector z = rp.base.sample(1, rng).draws.row(0).transpose();
    const FlowOutput f = flow_forward(rp.flow, z);

    const double expected = rp.base.log_density(z) - f.log_det;
    worst_density = std::max(worst_density, std::abs(refined_log_density(rp, f.y) - expected) /
                                                std::max(1.0, std::abs(expected)));

    Matrix jac(d, d);
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < d; ++j) {
      Vector up = z, down = z;
      up[j] += h;
      down[j] -= h;
      jac.col(j) = (flow_forward(rp.flow, up).y - flow_forward(rp.flow, down).y) / (2.0 * h);
    }
    worst_det = std::max(worst_det, std::abs(std::abs(jac.determinant()) / std::exp(f.log_det) - 1.0));

    const Vector back = flow_inverse(rp.flow, f.y);
    worst_inverse = std::max(worst_inverse, (back - z).norm() / std::max(1.0, z.norm()));
  }
  const double t = seconds_since(start);
  o.detail << "max density err " << worst_density << ", max rel det err " << worst_det
           << ", max round-trip err " << worst_inverse << ", " << t << " s. ";
  o.check(worst_density <= 1e-9, "log-density identity 1e-9");
  o.check(worst_det <= 1e-5, "log-det vs FD Jacobian rel 1e-5");
  o.check(worst_inverse <= 1e-9, "inverse round-trip 1e-9");
  o.check(t < 30.0, "runtime < 30 s");
}

// ------------------------------------------------------------------ 4

void elbo_gradient(Outcome& o) {
  const auto start = Clock::now();
  RngStream rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    // Alternate binary (d = p + 1) and softmax without bias (d = C), d <= 5.
    Dataset data;
    Model model;
    Likelihood lik;
    const int n = 25;
    if (trial % 2 == 0) {
      const int p = 1 + static_cast<int>(rng.next_u64() % 4);
      data.n_classes = 2;
      data.features = rng.normal_matrix(n, p);
      model = LinearModel{p, 1, true};
      lik = Likelihood::bernoulli();
    } else {
      const int c = 2 + static_cast<int>(rng.next_u64() % 4);
      data.n_classes = c;
      data.features = rng.normal_matrix(n, 1);
      model = LinearModel{1, c, false};
      lik = Likelihood::categorical();
    }
    for (int i = 0; i < n; ++i)
      data.labels.push_back(static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(data.n_classes)));
    const Eigen::Index d = model_dim(model);
    const RefinedPosterior rp(random_gaussian(d, 0.4, rng),
                              random_stack(d, 1 + trial % 2, rng));
    const Matrix points = rp.base.sample(8, rng).draws;
    const ElboEval eval = elbo_value_and_grad(rp, model, lik, data, 1.0, points);
    const Vector numeric = finite_diff_grad(
        [&](const Vector& params) {
          RefinedPosterior moved = rp;
          moved.flow.set_parameters(params);
          return elbo_at(moved, model, lik, data, 1.0, points);
        },
        rp.flow.parameters(), 1e-6);
    worst = std::max(worst, (eval.grad - numeric).norm() / std::max(numeric.norm(), 1e-12));
  }
  const double t = seconds_since(start);
  o.detail << "max rel error " << worst << " over 50 configs, " << t << " s. ";
  o.check(worst < 1e-4, "rel error < 1e-4");
  o.check(t < 60.0, "runtime < 60 s");
}

// ------------------------------------------------------------------ 5

void conjugate_oracle(Outcome& o) {
  // y = X w + noise, w ~ N(0, 1/lambda I): posterior and evidence in closed form.
  RngStream rng(5);
  const int n = 40, p = 2;
  const double lambda = 2.0, sigma = 0.5, s2 = sigma * sigma;
  Dataset data;
  data.features = rng.normal_matrix(n, p);
  data.targets = data.features * Vector::LinSpaced(p, 1.0, -1.0) + sigma * rng.normal_vector(n);
  const Model model = LinearModel{p, 1, true};
  const Likelihood lik = Likelihood::gaussian(sigma);
  const Matrix xa = augment_features(std::get<LinearModel>(model), data.features);
  const Eigen::Index d = xa.cols();
  const Matrix prec = xa.transpose() * xa / s2 + lambda * Matrix::Identity(d, d);
  const Matrix cov = prec.inverse();
  const Vector mean = cov * xa.transpose() * data.targets / s2;
  const Matrix marginal = s2 * Matrix::Identity(n, n) + xa * xa.transpose() / lambda;
  const Eigen::LLT<Matrix> llt(marginal);
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(Matrix(llt.matrixL())(i, i));
  const double evidence = -0.5 * data.targets.dot(llt.solve(data.targets)) - 0.5 * logdet -
                          0.5 * n * std::log(2.0 * std::numbers::pi);

  const MapResult map = fit_map(model, lik, data, lambda);
  const GaussianPosterior la = laplace_posterior(
      map.theta, hessian_log_joint(model, lik, map.theta, data, lambda), lambda);
  const double mean_err = (la.mean - mean).cwiseAbs().maxCoeff();
  const double cov_err = (la.covariance - cov).cwiseAbs().maxCoeff() / cov.cwiseAbs().maxCoeff();

  RefineConfig rc;
  rc.flow_length = 2;
  rc.epochs = 20;
  rc.steps_per_epoch = 10;
  const auto [rp, trace] = refine(la, model, lik, data, lambda, rc);
  RngStream eval_rng(55);
  const double elbo = elbo_estimate(rp, model, lik, data, lambda, 20000, eval_rng);
  o.detail << "mean err " << mean_err << ", cov rel err " << cov_err << ", ELBO " << elbo
           << " vs log evidence " << evidence << ". ";
  o.check(mean_err <= 1e-6, "LA mean 1e-6");
  o.check(cov_err <= 1e-6, "LA cov rel 1e-6");
  o.check(std::abs(elbo - evidence) <= 0.05, "ELBO within 0.05 nats of evidence");
}

// ------------------------------------------------------------------ 6

void hmc_validity(Outcome& o) {
  const auto start = Clock::now();
  Matrix cov(2, 2);
  cov << 1.0, 0.8, 0.8, 1.0;
  const Matrix precision = cov.inverse();
  const LogDensityFn target = [precision](const Vector& theta, Vector& grad) {
    grad = -precision * theta;
    return -0.5 * theta.dot(precision * theta);
  };
  HmcConfig config;  // 4 chains x 600 samples
  config.seed = 6;
  RngStream rng(66);
  const Matrix chol = cov.llt().matrixL();
  const ChainSet chains =
      hmc_sample(target, jittered_inits(Vector::Zero(2), chol, config.n_chains, 0.1, rng), config);
  const double t = seconds_since(start);
  const Vector rhat = gelman_rubin(chains);
  const Vector ess = effective_sample_size(chains);
  const Matrix pooled = chains.pooled().draws;
  const Vector m = pooled.colwise().mean();
  const Matrix centered = pooled.rowwise() - m.transpose();
  const Matrix emp = centered.transpose() * centered / double(pooled.rows() - 1);
  double worst_z = 0.0, worst_cov = 0.0;
  for (int j = 0; j < 2; ++j) worst_z = std::max(worst_z, std::abs(m[j]) / std::sqrt(cov(j, j) / ess[j]));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      worst_cov = std::max(worst_cov, std::abs(emp(i, j) - cov(i, j)) / std::abs(cov(i, j)));
  o.detail << "R-hat " << rhat.maxCoeff() << ", mean |z| " << worst_z << ", cov rel err "
           << worst_cov << ", " << pooled.rows() << " draws, " << t << " s. ";
  o.check(chains.chains.size() == 4 && chains.chains[0].size() == 600, "4 x 600 samples");
  o.check(rhat.maxCoeff() < 1.01, "R-hat < 1.01");
  o.check(worst_z < 3.0, "mean within 3 SE");
  o.check(worst_cov < 0.10, "covariance within 10%");
  o.check(t < 60.0, "runtime < 60 s");
}

// ------------------------------------------------------------------ 7

void toy_ordering(Outcome& o) {
  const auto start = Clock::now();
  std::vector<double> la, vb, refined;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Toy2dConfig c;
    c.flow_lengths = {5};
    c.seed = seed;
    const Toy2dResult r = run_toy2d(c);
    la.push_back(r.mmd.at("la"));
    vb.push_back(r.mmd.at("vb"));
    refined.push_back(r.mmd.at("la-refine-5"));
  }
  const double t = seconds_since(start);
  const double mla = median(la), mvb = median(vb), mref = median(refined);
  o.detail << "median MMD la " << mla << ", vb " << mvb << ", la-refine-5 " << mref
           << " (per seed la " << join(la) << "; vb " << join(vb) << "; refine " << join(refined)
           << "), " << t << " s. ";
  o.check(mref < mvb && mvb < mla, "refine < vb < la");
  o.check(mref < 0.5 * mla, "refine < 0.5 la");
  o.check(t < 600.0, "runtime < 10 min");
}

// ------------------------------------------------------------------ 8

void identity_noop(Outcome& o) {
  CompareConfig c;
  c.methods = {"la", "la-refine-5"};
  c.bayes.refine.epochs = 0;
  const CompareResult r = run_compare(c);
  const MetricsReport& a = r.rows[0].metrics;
  const MetricsReport& b = r.rows[1].metrics;
  const double diff = std::max({std::abs(a.nll - b.nll), std::abs(a.ece - b.ece),
                                std::abs(a.brier - b.brier)});
  o.detail << "LA NLL " << a.nll << ", max |metric diff| " << diff << ". ";
  o.check(diff <= 1e-9, "NLL/ECE/Brier identical to 1e-9");
  o.check(r.rows[1].trace && r.rows[1].trace->best_epoch == -1, "identity flow kept");
}

// ------------------------------------------------------------------ 9

void refinement_helps(Outcome& o) {
  const auto start = Clock::now();
  int nll_wins = 0, gap_wins = 0;
  std::vector<double> la, ref, hmc;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CompareConfig c;
    c.methods = {"la", "la-refine-5", "hmc"};
    c.seed = seed;
    const CompareResult r = run_compare(c);
    const double n_la = r.rows[0].metrics.nll, n_ref = r.rows[1].metrics.nll,
                 n_hmc = r.rows[2].metrics.nll;
    la.push_back(n_la);
    ref.push_back(n_ref);
    hmc.push_back(n_hmc);
    nll_wins += n_ref <= n_la;
    gap_wins += std::abs(n_ref - n_hmc) < std::abs(n_la - n_hmc);
  }
  o.detail << "NLL la " << join(la) << "; la-refine-5 " << join(ref) << "; hmc " << join(hmc)
           << ". refine <= la on " << nll_wins << "/5, closer to hmc on " << gap_wins << "/5, "
           << seconds_since(start) << " s. ";
  o.check(nll_wins >= 4, "NLL(refine) <= NLL(la) on >= 4/5");
  o.check(gap_wins >= 4, "smaller gap to HMC on >= 4/5");
}

// ------------------------------------------------------------------ 10

void base_ablation(Outcome& o) {
  const auto start = Clock::now();
  std::vector<double> la, sn;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    AblateConfig c;
    c.lengths = {1};
    c.seed = seed;
    const AblateResult r = run_ablate(c);
    for (const AblationRow& row : r.rows)
      (row.base == AblationBase::kLaplace ? la : sn).push_back(row.nll);
  }
  o.detail << "median NLL la-base " << median(la) << ", standard-normal base " << median(sn)
           << " (la " << join(la) << "; sn " << join(sn) << "), " << seconds_since(start)
           << " s. ";
  o.check(la.size() == 5 && sn.size() == 5, "five seeds per base");
  o.check(median(la) <= median(sn), "median la-base <= standard-normal");
}

// ------------------------------------------------------------------ 11

void linearity_identity(Outcome& o) {
  McVsAnalyticConfig c;
  const McVsAnalyticResult r = run_mc_vs_analytic(c);
  o.detail << "linear control max |z| " << r.linear.max_z << " at S = " << c.linear_samples
           << "; TinyMLP regression std gap max " << r.regression_max_std_gap << " mean "
           << r.regression_mean_std_gap << "; classification confidence gap max "
           << r.grid_max_confidence_gap << ". ";
  o.check(r.linear.max_z < 3.0, "linear routes within 3 SE");
  o.check(std::isfinite(r.regression_max_std_gap) && r.regression_max_std_gap >= 0.0 &&
              std::isfinite(r.grid_max_confidence_gap) && r.grid_max_confidence_gap >= 0.0,
          "TinyMLP disagreement statistic computed");
}

// ------------------------------------------------------------------ 12

void metric_units(Outcome& o) {
  RngStream rng(12);
  // Probit: m = 0 is exactly one half; s2 = 0 is the plain sigmoid.
  bool probit_ok = true;
  for (double s2 : {0.0, 0.5, 4.0, 100.0}) probit_ok &= probit_binary(0.0, s2) == 0.5;
  for (double m : {-3.0, 0.7, 2.0}) probit_ok &= std::abs(probit_binary(m, 0.0) - sigmoid(m)) < 1e-15;
  o.check(probit_ok, "probit trivial cases");

  // MPA: zero variance is softmax, zero mean is uniform.
  const Vector f = rng.normal_vector(4);
  const bool mpa_ok = (mpa(f, Vector::Zero(4)) - softmax(f)).cwiseAbs().maxCoeff() < 1e-15 &&
                      (mpa(Vector::Zero(4), Vector::Constant(4, 3.0)).array() - 0.25).abs().maxCoeff() < 1e-15;
  o.check(mpa_ok, "MPA trivial cases");

  // ECE: always confident and right is 0; confidence 1 with half right is 0.5.
  Matrix onehot = Matrix::Zero(10, 2);
  std::vector<int> labels(10);
  for (int i = 0; i < 10; ++i) {
    labels[static_cast<std::size_t>(i)] = i % 2;
    onehot(i, i % 2) = 1.0;
  }
  std::vector<int> half = labels;
  for (int i = 0; i < 10; i += 2) half[static_cast<std::size_t>(i)] = 1 - half[static_cast<std::size_t>(i)];
  const double ece_right = ece(onehot, labels), ece_half = ece(onehot, half);
  o.check(ece_right < 1e-12, "ECE confident and right = 0");
  o.check(std::abs(ece_half - 0.5) < 1e-12, "ECE confidence 1, accuracy 0.5 = 0.5");

  // MMD of a set with itself.
  const Matrix x = rng.normal_matrix(1000, 2);
  const double self = mmd(x, x);
  o.check(std::abs(self) < 2.0 / std::sqrt(1000.0), "MMD self-distance < 2/sqrt(n)");

  // fpr95 on exchangeable scores.
  const double fpr = fpr95(rng.normal_vector(100000), rng.normal_vector(100000));
  o.check(std::abs(fpr - 0.95) < 0.01, "fpr95 exchangeable ~ 0.95");
  o.detail << "ECE cases " << ece_right << " / " << ece_half << ", MMD self " << self
           << ", fpr95 exchangeable " << fpr << ". ";
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "mc-error-band", mc_error_band},
      {2, "mc-scaling-law", mc_scaling_law},
      {3, "change-of-variables", change_of_variables},
      {4, "elbo-gradient", elbo_gradient},
      {5, "conjugate-oracle", conjugate_oracle},
      {6, "hmc-validity", hmc_validity},
      {7, "toy-2d-ordering", toy_ordering},
      {8, "identity-refinement-noop", identity_noop},
      {9, "refinement-helps", refinement_helps},
      {10, "base-ablation", base_ablation},
      {11, "linearity-identity", linearity_identity},
      {12, "metric-units", metric_units},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      c.run(o);
    } catch (const Error& e) {
      o.pass = false;
      o.detail << "threw " << error_code_name(e.code()) << ": " << e.what();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "threw " << e.what();
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failures > 0 ? 1 : 0;
}
