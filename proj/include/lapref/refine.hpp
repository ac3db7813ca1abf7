#pragma once

// ELBO training of a radial flow on top of a frozen Gaussian base, and a
// diagonal-Gaussian variational baseline.

#include <cstdint>
#include <utility>
#include <vector>

#include "lapref/flows.hpp"
#include "lapref/laplace.hpp"
#include "lapref/models.hpp"

namespace lapref {

struct RefineConfig {
  int epochs = 20;
  double learning_rate = 1e-3;
  int mc_samples = 32;
  int flow_length = 5;
  std::uint64_t seed = 0;
  // Full-batch Adam steps per epoch; 0 selects ceil(N / 128), the number of
  // updates one pass with minibatches of 128 would make.
  int steps_per_epoch = 0;
  // Base draws used to re-estimate the ELBO at every epoch end.
  int eval_samples = 200;

  void validate() const;
  int resolved_steps_per_epoch(Eigen::Index n_data) const;
};

struct ElboTrace {
  std::vector<double> step_elbo;       // n_mc-sample estimate at each step
  std::vector<double> step_lr;
  std::vector<double> epoch_elbo;      // fixed-noise re-estimate per epoch
  std::vector<double> epoch_seconds;
  double initial_elbo = 0.0;           // identity flow, same fixed noise
  double best_elbo = 0.0;
  int best_epoch = -1;                 // -1: the identity flow was best
  int steps_per_epoch = 0;
};

struct ElboEval {
  double value = 0.0;
  Vector grad;  // w.r.t. raw flow parameters
};

// ELBO at explicit base points z_s:
// mean_s[log_joint(F(z_s)) + log_det(z_s)] + H[base].
double elbo_at(const RefinedPosterior& rp, const Model& model, const Likelihood& lik,
               const Dataset& data, double precision, const Matrix& base_points);
// Value and reparameterized gradient at explicit base points.
ElboEval elbo_value_and_grad(const RefinedPosterior& rp, const Model& model,
                             const Likelihood& lik, const Dataset& data,
                             double precision, const Matrix& base_points);

// Draw n_mc base points from `rng` and evaluate.
double elbo_estimate(const RefinedPosterior& rp, const Model& model,
                     const Likelihood& lik, const Dataset& data, double precision,
                     int n_mc, RngStream& rng);
Vector elbo_grad(const RefinedPosterior& rp, const Model& model, const Likelihood& lik,
                 const Dataset& data, double precision, int n_mc, RngStream& rng);

// Adam with cosine decay on the raw flow parameters. Returns the iterate
// with the best fixed-noise ELBO among the identity flow and every epoch
// end; with epochs == 0 that is the identity flow.
std::pair<RefinedPosterior, ElboTrace> refine(const GaussianPosterior& base,
                                              const Model& model, const Likelihood& lik,
                                              const Dataset& data, double precision,
                                              const RefineConfig& config);

struct VbConfig {
  int steps = 1000;
  double learning_rate = 1e-2;
  int mc_samples = 32;
  std::uint64_t seed = 0;
  MapConfig map;
};

// Diagonal Gaussian fitted by reparameterized ELBO ascent (Adam, cosine
// decay), started at the MAP with variances 1 / diag(precision matrix).
GaussianPosterior meanfield_vb(const Model& model, const Likelihood& lik,
                               const Dataset& data, double precision,
                               const VbConfig& config = {});

}  // namespace lapref
