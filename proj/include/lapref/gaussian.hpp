#pragma once

#include "lapref/numeric.hpp"

namespace lapref {

// Full-covariance Gaussian over the parameter vector. Construct through
// `from_covariance`, which computes and stores the Cholesky factor.
struct GaussianPosterior {
  Vector mean;
  Matrix covariance;
  Matrix chol;  // lower, chol * chol^T == covariance
  double prior_precision = 1.0;
  Provenance provenance = Provenance::kManual;

  // Symmetrizes `covariance` and applies the jitter policy if needed (the
  // stored covariance then includes the jitter).
  static GaussianPosterior from_covariance(Vector mean, Matrix covariance,
                                           double prior_precision,
                                           Provenance provenance);
  static GaussianPosterior standard_normal(Eigen::Index d);

  Eigen::Index dim() const noexcept { return mean.size(); }
  double log_density(const Vector& theta) const;
  // d/2 (1 + log 2 pi) + sum log diag(L)
  double entropy() const;
  SampleSet sample(Eigen::Index n, RngStream& rng) const;
};

}  // namespace lapref
