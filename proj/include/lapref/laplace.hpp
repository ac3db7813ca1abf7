#pragma once

// MAP estimation and the Laplace approximation around it.

#include <cstdint>
#include <vector>

#include "lapref/gaussian.hpp"
#include "lapref/models.hpp"

namespace lapref {

struct MapConfig {
  int max_epochs = 2000;
  double learning_rate = 0.05;
  double grad_tolerance = 1e-6;
  std::uint64_t seed = 0;
  // Newton iterations allowed after the Adam phase (linear models only).
  int newton_iterations = 50;
};

struct MapResult {
  Vector theta;
  double log_joint = 0.0;
  double grad_norm = 0.0;
  int epochs = 0;
  bool converged = false;
};

// Full-batch Adam ascent on the log joint with a cosine-decayed learning
// rate, stopping once the gradient norm falls below the tolerance. Linear
// models then take damped Newton steps with the analytic Hessian until the
// tolerance is met. Throws Diverged when the objective turns non-finite.
MapResult fit_map(const Model& model, const Likelihood& lik, const Dataset& data,
                  double precision, const MapConfig& config = {},
                  const Vector* init = nullptr);

struct HessianOptions {
  Eigen::Index max_dim_linear = 2000;
  Eigen::Index max_dim_mlp = 200;
  double fd_step = 1e-5;
};

// Negative Hessian of the log joint (the posterior precision at theta).
// Analytic for the linear model; central differences of the gradient,
// symmetrized, for the network.
Matrix hessian_log_joint(const Model& model, const Likelihood& lik,
                         const Vector& theta, const Dataset& data,
                         double precision, const HessianOptions& options = {});

// N(theta_map, precision_matrix^-1).
GaussianPosterior laplace_posterior(const Vector& theta_map,
                                    const Matrix& precision_matrix,
                                    double prior_precision);

enum class TuneMethod {
  kLaplaceMc,  // validation NLL of the MC predictive under the LA
  kMap,        // validation NLL of the MAP plug-in prediction
};

struct TuneOptions {
  TuneMethod method = TuneMethod::kLaplaceMc;
  int mc_samples = 100;
  std::uint64_t seed = 0;
  MapConfig map;
};

struct TuneResult {
  double best_precision = 0.0;
  std::vector<double> grid;
  std::vector<double> validation_nll;  // +inf for diverged candidates
};

// Grid search over prior precisions by validation NLL; ties go to the larger
// precision. Throws Diverged when every candidate fails.
TuneResult tune_prior_precision(const Model& model, const Likelihood& lik,
                                const Dataset& train, const Dataset& validation,
                                const std::vector<double>& grid,
                                const TuneOptions& options = {});

}  // namespace lapref
