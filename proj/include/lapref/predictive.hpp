#pragma once

// Predictive distributions: Monte Carlo over parameter samples, the
// linearized output Gaussian, the binary and multi-class probit
// approximations, and the trapezoid gold standard for the logistic-Gaussian
// integral I(m, s) = E[sigmoid(f)], f ~ N(m, s^2).

#include <cstdint>
#include <string_view>
#include <vector>

#include "lapref/gaussian.hpp"
#include "lapref/models.hpp"

namespace lapref {

enum class PredictiveMethod { kPlugin, kMc, kLinearizedMc, kProbit, kMpa, kQuadrature };

std::string_view predictive_method_name(PredictiveMethod m);

// N x C class probabilities; rows sum to one.
struct PredictiveMatrix {
  Matrix probs;
  PredictiveMethod method = PredictiveMethod::kMc;
  Eigen::Index samples = 0;

  // Throws InvalidArgument if a row leaves the simplex by more than tol.
  void check(double tol = 1e-9) const;
};

struct OutputGaussian {
  Vector mean;  // f_mu(x), length K
  Matrix cov;   // J Sigma J^T, K x K
};

struct RegressionPredictive {
  Vector mean;
  Vector epistemic_variance;
  Vector variance;  // epistemic + noise_std^2
};

// Class probabilities for the given outputs (softmax, or [1 - p, p] for the
// Bernoulli head).
Matrix class_probabilities(const Likelihood& lik, const Matrix& outputs);

PredictiveMatrix plugin_predictive(const Model& model, const Likelihood& lik,
                                   const Vector& theta, const Matrix& x);

// (1/S) sum_s p(y | f_{theta_s}(x)).
PredictiveMatrix mc_predictive(const SampleSet& samples, const Model& model,
                               const Likelihood& lik, const Matrix& x);

// Mixture mean and variance of the Gaussian-likelihood predictive.
RegressionPredictive mc_regression_predictive(const SampleSet& samples,
                                              const Model& model,
                                              const Likelihood& lik,
                                              const Matrix& x);

OutputGaussian linearized_output(const GaussianPosterior& posterior,
                                 const Model& model, const Vector& x);
std::vector<OutputGaussian> linearized_outputs(const GaussianPosterior& posterior,
                                               const Model& model, const Matrix& x);

// Samples f ~ N(f_mu, S) per point and averages the class probabilities.
PredictiveMatrix linearized_mc_predictive(const std::vector<OutputGaussian>& outputs,
                                          const Likelihood& lik, Eigen::Index samples,
                                          RngStream& rng);

RegressionPredictive linearized_regression_predictive(
    const std::vector<OutputGaussian>& outputs, const Likelihood& lik);

// sigmoid(m / sqrt(1 + pi/8 s2)).
double probit_binary(double m, double s2);

// softmax(f_mean / sqrt(1 + pi/8 s_diag)); off-diagonal covariance ignored.
Vector mpa(const Vector& f_mean, const Vector& s_diag);

// Probit (Bernoulli) or MPA (categorical) applied to each output Gaussian.
PredictiveMatrix analytic_predictive(const std::vector<OutputGaussian>& outputs,
                                     const Likelihood& lik);

// Trapezoid rule for I(m, s) over [m - 10 s, m + 10 s].
double logistic_gaussian_quadrature(double m, double s, int n_points = 20000);

// Plain MC estimate of I(m, s) with `samples` draws.
double logistic_gaussian_mc(double m, double s, std::int64_t samples, RngStream& rng);

struct ErrorGrid {
  std::vector<double> m_values;
  std::vector<double> s_values;
  // Row-major over (m index, s index).
  Matrix mc_mean_error;  // |MC - quadrature| averaged over repeats
  Matrix mc_max_error;   // worst repeat per cell
  Matrix probit_error;   // |probit - quadrature|
  double max_mc_error = 0.0;       // max over cells and repeats
  double max_mean_mc_error = 0.0;  // max over cells of the repeat average
  double max_probit_error = 0.0;
  double max_mc_m = 0.0, max_mc_s = 0.0;
  double max_probit_m = 0.0, max_probit_s = 0.0;
};

// Absolute error surfaces of MC (S samples, n_repeats seeds per cell) and of
// the probit approximation against the quadrature. Each cell draws from its
// own child stream of `rng`.
ErrorGrid mc_error_grid(const std::vector<double>& m_grid,
                        const std::vector<double>& s_grid, std::int64_t samples,
                        int n_repeats, const RngStream& rng);

struct ScalingPoint {
  std::int64_t samples;
  double standard_error;
};

// Empirical standard error of the MC estimate of I(m, s) per S.
std::vector<ScalingPoint> mc_error_scaling(double m, double s,
                                           const std::vector<std::int64_t>& sample_counts,
                                           int n_repeats, const RngStream& rng);

// Least-squares slope of log SE against log S.
double fit_log_log_slope(const std::vector<ScalingPoint>& points);

std::vector<double> linspace(double lo, double hi, int n);

}  // namespace lapref
