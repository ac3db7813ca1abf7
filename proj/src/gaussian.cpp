#include "lapref/gaussian.hpp"

#include <cmath>
#include <numbers>

namespace lapref {

GaussianPosterior GaussianPosterior::from_covariance(Vector mean, Matrix covariance,
                                                     double prior_precision,
                                                     Provenance provenance) {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
    throw Error(ErrorCode::kDimensionMismatch,
                "gaussian: covariance does not match mean");
  if (!mean.allFinite())
    throw Error(ErrorCode::kNonFiniteValue, "gaussian: non-finite mean");
  GaussianPosterior g;
  g.mean = std::move(mean);
  g.covariance = 0.5 * (covariance + covariance.transpose());
  double jitter = 0.0;
  g.chol = cholesky_with_jitter(g.covariance, &jitter);
  if (jitter > 0.0) g.covariance.diagonal().array() += jitter;
  g.prior_precision = prior_precision;
  g.provenance = provenance;
  return g;
}

GaussianPosterior GaussianPosterior::standard_normal(Eigen::Index d) {
  GaussianPosterior g;
  g.mean = Vector::Zero(d);
  g.covariance = Matrix::Identity(d, d);
  g.chol = Matrix::Identity(d, d);
  g.provenance = Provenance::kManual;
  return g;
}

double GaussianPosterior::log_density(const Vector& theta) const {
  if (theta.size() != dim())
    throw Error(ErrorCode::kDimensionMismatch, "gaussian: point dimension mismatch");
  return gaussian_log_density(theta, mean, chol);
}

double GaussianPosterior::entropy() const {
  const double d = static_cast<double>(dim());
  return 0.5 * d * (1.0 + std::log(2.0 * std::numbers::pi)) +
         chol.diagonal().array().log().sum();
}

SampleSet GaussianPosterior::sample(Eigen::Index n, RngStream& rng) const {
  SampleSet s = sample_gaussian(mean, chol, n, rng);
  s.provenance = provenance;
  return s;
}

}  // namespace lapref
