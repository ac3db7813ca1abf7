#include "lapref/predictive.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "lapref/parallel.hpp"

namespace lapref {

namespace {

constexpr double kProbitScale = std::numbers::pi / 8.0;

void require_classification(const Likelihood& lik, const char* where) {
  if (lik.kind == LikelihoodKind::kGaussian)
    throw Error(ErrorCode::kInvalidArgument,
                std::string(where) + ": classification likelihood required");
}

// Square-root factor of a symmetric PSD matrix; tiny negative eigenvalues
// from round-off are clamped to zero.
Matrix psd_sqrt(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

// Chunked sum with Kahan compensation across chunks.
class ChunkedSum {
 public:
  void add(double v) {
    chunk_ += v;
    if (++count_ == 4096) flush();
  }
  double total() {
    flush();
    return sum_;
  }

 private:
  void flush() {
    const double y = chunk_ - carry_;
    const double t = sum_ + y;
    carry_ = (t - sum_) - y;
    sum_ = t;
    chunk_ = 0.0;
    count_ = 0;
  }
  double sum_ = 0.0, carry_ = 0.0, chunk_ = 0.0;
  int count_ = 0;
};

}  // namespace

std::string_view predictive_method_name(PredictiveMethod m) {
  switch (m) {
    case PredictiveMethod::kPlugin: return "plugin";
    case PredictiveMethod::kMc: return "mc";
    case PredictiveMethod::kLinearizedMc: return "linearized-mc";
    case PredictiveMethod::kProbit: return "probit";
    case PredictiveMethod::kMpa: return "mpa";
    case PredictiveMethod::kQuadrature: return "quadrature";
  }
  return "unknown";
}

void PredictiveMatrix::check(double tol) const {
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const auto row = probs.row(i);
    if (std::abs(row.sum() - 1.0) > tol || row.minCoeff() < -tol ||
        row.maxCoeff() > 1.0 + tol || !row.allFinite())
      throw Error(ErrorCode::kInvalidArgument,
                  "predictive: row " + std::to_string(i) + " is not a distribution");
  }
}

Matrix class_probabilities(const Likelihood& lik, const Matrix& outputs) {
  switch (lik.kind) {
    case LikelihoodKind::kCategorical:
      return softmax_rows(outputs);
    case LikelihoodKind::kBernoulli: {
      if (outputs.cols() != 1)
        throw Error(ErrorCode::kDimensionMismatch, "bernoulli head must have one output");
      Matrix probs(outputs.rows(), 2);
      for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
        const double p = sigmoid(outputs(i, 0));
        probs(i, 0) = sigmoid(-outputs(i, 0));
        probs(i, 1) = p;
      }
      return probs;
    }
    case LikelihoodKind::kGaussian:
      break;
  }
  throw Error(ErrorCode::kInvalidArgument, "class_probabilities: regression likelihood");
}

PredictiveMatrix plugin_predictive(const Model& model, const Likelihood& lik,
                                   const Vector& theta, const Matrix& x) {
  require_classification(lik, "plugin_predictive");
  PredictiveMatrix out;
  out.probs = class_probabilities(lik, model_outputs(model, theta, x));
  out.method = PredictiveMethod::kPlugin;
  out.samples = 1;
  return out;
}

PredictiveMatrix mc_predictive(const SampleSet& samples, const Model& model,
                               const Likelihood& lik, const Matrix& x) {
  require_classification(lik, "mc_predictive");
  if (samples.size() < 1)
    throw Error(ErrorCode::kInvalidArgument, "mc_predictive: empty sample set");
  if (samples.dim() != model_dim(model))
    throw Error(ErrorCode::kDimensionMismatch, "mc_predictive: sample dimension");
  Matrix acc;
  for (Eigen::Index s = 0; s < samples.size(); ++s) {
    const Matrix p =
        class_probabilities(lik, model_outputs(model, samples.draws.row(s).transpose(), x));
    if (s == 0)
      acc = p;
    else
      acc += p;
  }
  PredictiveMatrix out;
  out.probs = acc / static_cast<double>(samples.size());
  out.method = PredictiveMethod::kMc;
  out.samples = samples.size();
  return out;
}

RegressionPredictive mc_regression_predictive(const SampleSet& samples,
                                              const Model& model,
                                              const Likelihood& lik,
                                              const Matrix& x) {
  if (lik.kind != LikelihoodKind::kGaussian)
    throw Error(ErrorCode::kInvalidArgument,
                "mc_regression_predictive: Gaussian likelihood required");
  if (samples.size() < 1)
    throw Error(ErrorCode::kInvalidArgument, "mc_regression_predictive: empty sample set");
  if (samples.dim() != model_dim(model))
    throw Error(ErrorCode::kDimensionMismatch, "mc_regression_predictive: sample dimension");
  const Eigen::Index n = x.rows();
  Matrix f(n, samples.size());
  for (Eigen::Index s = 0; s < samples.size(); ++s)
    f.col(s) = model_outputs(model, samples.draws.row(s).transpose(), x).col(0);
  RegressionPredictive out;
  out.mean = f.rowwise().mean();
  const Matrix centered = f.colwise() - out.mean;
  out.epistemic_variance =
      centered.array().square().rowwise().sum() / static_cast<double>(samples.size());
  out.variance = out.epistemic_variance.array() + lik.noise_std * lik.noise_std;
  return out;
}

OutputGaussian linearized_output(const GaussianPosterior& posterior, const Model& model,
                                 const Vector& x) {
  if (posterior.dim() != model_dim(model))
    throw Error(ErrorCode::kDimensionMismatch, "linearized_output: posterior dimension");
  if (x.size() != model_inputs(model))
    throw Error(ErrorCode::kDimensionMismatch, "linearized_output: input dimension");
  const Matrix jac = output_jacobian(model, posterior.mean, x);
  OutputGaussian out;
  out.mean = model_outputs(model, posterior.mean, x.transpose()).row(0).transpose();
  const Matrix cov = jac * posterior.covariance * jac.transpose();
  out.cov = 0.5 * (cov + cov.transpose());
  return out;
}

std::vector<OutputGaussian> linearized_outputs(const GaussianPosterior& posterior,
                                               const Model& model, const Matrix& x) {
  std::vector<OutputGaussian> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out.push_back(linearized_output(posterior, model, x.row(i).transpose()));
  return out;
}

PredictiveMatrix linearized_mc_predictive(const std::vector<OutputGaussian>& outputs,
                                          const Likelihood& lik, Eigen::Index samples,
                                          RngStream& rng) {
  require_classification(lik, "linearized_mc_predictive");
  if (samples < 1)
    throw Error(ErrorCode::kInvalidArgument, "linearized_mc_predictive: samples must be >= 1");
  const Eigen::Index n = static_cast<Eigen::Index>(outputs.size());
  const Eigen::Index n_classes = lik.kind == LikelihoodKind::kBernoulli
                                     ? 2
                                     : (outputs.empty() ? 0 : outputs.front().mean.size());
  PredictiveMatrix out;
  out.probs = Matrix::Zero(n, n_classes);
  out.method = PredictiveMethod::kLinearizedMc;
  out.samples = samples;
  for (Eigen::Index i = 0; i < n; ++i) {
    const OutputGaussian& g = outputs[static_cast<std::size_t>(i)];
    const Matrix root = psd_sqrt(g.cov);
    Matrix f = rng.normal_matrix(samples, g.mean.size()) * root.transpose();
    f.rowwise() += g.mean.transpose();
    out.probs.row(i) = class_probabilities(lik, f).colwise().mean();
  }
  return out;
}

RegressionPredictive linearized_regression_predictive(
    const std::vector<OutputGaussian>& outputs, const Likelihood& lik) {
  if (lik.kind != LikelihoodKind::kGaussian)
    throw Error(ErrorCode::kInvalidArgument,
                "linearized_regression_predictive: Gaussian likelihood required");
  const Eigen::Index n = static_cast<Eigen::Index>(outputs.size());
  RegressionPredictive out;
  out.mean.resize(n);
  out.epistemic_variance.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const OutputGaussian& g = outputs[static_cast<std::size_t>(i)];
    out.mean[i] = g.mean[0];
    out.epistemic_variance[i] = std::max(0.0, g.cov(0, 0));
  }
  out.variance = out.epistemic_variance.array() + lik.noise_std * lik.noise_std;
  return out;
}

double probit_binary(double m, double s2) {
  if (!(s2 >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "probit_binary: s2 must be >= 0");
  return sigmoid(m / std::sqrt(1.0 + kProbitScale * s2));
}

Vector mpa(const Vector& f_mean, const Vector& s_diag) {
  if (f_mean.size() != s_diag.size())
    throw Error(ErrorCode::kDimensionMismatch, "mpa: length mismatch");
  if (s_diag.size() > 0 && !(s_diag.minCoeff() >= 0.0))
    throw Error(ErrorCode::kInvalidArgument, "mpa: variances must be >= 0");
  const Vector scaled =
      f_mean.array() / (1.0 + kProbitScale * s_diag.array()).sqrt();
  return softmax(scaled);
}

PredictiveMatrix analytic_predictive(const std::vector<OutputGaussian>& outputs,
                                     const Likelihood& lik) {
  require_classification(lik, "analytic_predictive");
  const Eigen::Index n = static_cast<Eigen::Index>(outputs.size());
  PredictiveMatrix out;
  out.samples = 0;
  if (lik.kind == LikelihoodKind::kBernoulli) {
    out.method = PredictiveMethod::kProbit;
    out.probs.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const OutputGaussian& g = outputs[static_cast<std::size_t>(i)];
      const double m = g.mean[0];
      const double scale = std::sqrt(1.0 + kProbitScale * std::max(0.0, g.cov(0, 0)));
      out.probs(i, 0) = sigmoid(-m / scale);
      out.probs(i, 1) = sigmoid(m / scale);
    }
    return out;
  }
  out.method = PredictiveMethod::kMpa;
  out.probs.resize(n, outputs.empty() ? 0 : outputs.front().mean.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const OutputGaussian& g = outputs[static_cast<std::size_t>(i)];
    out.probs.row(i) = mpa(g.mean, g.cov.diagonal().cwiseMax(0.0)).transpose();
  }
  return out;
}

double logistic_gaussian_quadrature(double m, double s, int n_points) {
  if (!(s >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "quadrature: s must be >= 0");
  if (n_points < 2) throw Error(ErrorCode::kInvalidArgument, "quadrature: n_points must be >= 2");
  if (s == 0.0) return sigmoid(m);
  const double lo = -10.0;
  const double h = 20.0 / (n_points - 1);
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  double total = 0.0;
  for (int i = 0; i < n_points; ++i) {
    const double z = lo + h * i;
    const double w = (i == 0 || i == n_points - 1) ? 0.5 : 1.0;
    total += w * sigmoid(m + s * z) * norm * std::exp(-0.5 * z * z);
  }
  return total * h;
}

double logistic_gaussian_mc(double m, double s, std::int64_t samples, RngStream& rng) {
  if (samples < 1) throw Error(ErrorCode::kInvalidArgument, "mc: samples must be >= 1");
  ChunkedSum sum;
  for (std::int64_t i = 0; i < samples; ++i) sum.add(sigmoid(m + s * rng.normal()));
  return sum.total() / static_cast<double>(samples);
}

ErrorGrid mc_error_grid(const std::vector<double>& m_grid,
                        const std::vector<double>& s_grid, std::int64_t samples,
                        int n_repeats, const RngStream& rng) {
  if (m_grid.empty() || s_grid.empty())
    throw Error(ErrorCode::kInvalidArgument, "mc_error_grid: empty grid");
  if (n_repeats < 1 || samples < 1)
    throw Error(ErrorCode::kInvalidArgument, "mc_error_grid: need samples and repeats >= 1");
  const auto n_m = static_cast<Eigen::Index>(m_grid.size());
  const auto n_s = static_cast<Eigen::Index>(s_grid.size());
  ErrorGrid grid;
  grid.m_values = m_grid;
  grid.s_values = s_grid;
  grid.mc_mean_error.resize(n_m, n_s);
  grid.mc_max_error.resize(n_m, n_s);
  grid.probit_error.resize(n_m, n_s);

  parallel_for(static_cast<std::size_t>(n_m * n_s), [&](std::size_t cell) {
    const Eigen::Index i = static_cast<Eigen::Index>(cell) / n_s;
    const Eigen::Index j = static_cast<Eigen::Index>(cell) % n_s;
    const double m = m_grid[static_cast<std::size_t>(i)];
    const double s = s_grid[static_cast<std::size_t>(j)];
    const double exact = logistic_gaussian_quadrature(m, s);
    RngStream cell_rng = rng.split(static_cast<std::uint64_t>(cell));
    double total = 0.0, worst = 0.0;
    for (int r = 0; r < n_repeats; ++r) {
      const double err = std::abs(logistic_gaussian_mc(m, s, samples, cell_rng) - exact);
      total += err;
      worst = std::max(worst, err);
    }
    grid.mc_mean_error(i, j) = total / n_repeats;
    grid.mc_max_error(i, j) = worst;
    grid.probit_error(i, j) = std::abs(probit_binary(m, s * s) - exact);
  });

  Eigen::Index mi, mj, pi, pj, ai, aj;
  grid.max_mc_error = grid.mc_max_error.maxCoeff(&mi, &mj);
  grid.max_mean_mc_error = grid.mc_mean_error.maxCoeff(&ai, &aj);
  grid.max_probit_error = grid.probit_error.maxCoeff(&pi, &pj);
  grid.max_mc_m = m_grid[static_cast<std::size_t>(mi)];
  grid.max_mc_s = s_grid[static_cast<std::size_t>(mj)];
  grid.max_probit_m = m_grid[static_cast<std::size_t>(pi)];
  grid.max_probit_s = s_grid[static_cast<std::size_t>(pj)];
  return grid;
}

std::vector<ScalingPoint> mc_error_scaling(double m, double s,
                                           const std::vector<std::int64_t>& sample_counts,
                                           int n_repeats, const RngStream& rng) {
  if (n_repeats < 2)
    throw Error(ErrorCode::kInvalidArgument, "mc_error_scaling: need n_repeats >= 2");
  for (std::size_t k = 0; k < sample_counts.size(); ++k) {
    if (sample_counts[k] < 1 || (k > 0 && sample_counts[k] <= sample_counts[k - 1]))
      throw Error(ErrorCode::kInvalidArgument,
                  "mc_error_scaling: sample counts must be positive and increasing");
  }
  std::vector<ScalingPoint> out(sample_counts.size());
  parallel_for(sample_counts.size(), [&](std::size_t k) {
    RngStream child = rng.split(k);
    Vector estimates(n_repeats);
    for (int r = 0; r < n_repeats; ++r)
      estimates[r] = logistic_gaussian_mc(m, s, sample_counts[k], child);
    const double mean = estimates.mean();
    const double var = (estimates.array() - mean).square().sum() / (n_repeats - 1);
    out[k] = {sample_counts[k], std::sqrt(var)};
  });
  return out;
}

double fit_log_log_slope(const std::vector<ScalingPoint>& points) {
  if (points.size() < 2)
    throw Error(ErrorCode::kInvalidArgument, "fit_log_log_slope: need two points");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const ScalingPoint& p : points) {
    if (!(p.standard_error > 0.0))
      throw Error(ErrorCode::kInvalidArgument,
                  "fit_log_log_slope: standard errors must be positive");
    const double x = std::log(static_cast<double>(p.samples));
    const double y = std::log(p.standard_error);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(points.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "linspace: n must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(n));
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  out.back() = hi;
  return out;
}

}  // namespace lapref
