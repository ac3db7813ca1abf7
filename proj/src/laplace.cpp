#include "lapref/laplace.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "lapref/metrics.hpp"
#include "lapref/predictive.hpp"

namespace lapref {

namespace {

Vector initial_parameters(const Model& model, std::uint64_t seed) {
  if (std::holds_alternative<LinearModel>(model)) return Vector::Zero(model_dim(model));
  // Scaled normal weights, zero biases.
  const auto& net = std::get<TinyMlp>(model);
  RngStream rng(seed, 0x6d6c70);
  Vector theta = Vector::Zero(net.dim());
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
    const int in = net.widths[l];
    const int out = net.widths[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(in) * out; ++i)
      theta[offset + i] = scale * rng.normal();
    offset += static_cast<Eigen::Index>(in) * out + out;
  }
  return theta;
}

Matrix linear_precision(const LinearModel& lin, const Likelihood& lik,
                        const Vector& theta, const Dataset& data, double precision) {
  const Eigen::Index d = lin.dim();
  const Eigen::Index width = lin.row_width();
  const int k = lin.n_outputs;
  Matrix h = precision * Matrix::Identity(d, d);
  if (data.size() == 0) return h;
  const Matrix xa = augment_features(lin, data.features);
  auto weighted_gram = [&xa](const Vector& w) -> Matrix {
    return (xa.array().colwise() * w.array()).matrix().transpose() * xa;
  };
  switch (lik.kind) {
    case LikelihoodKind::kCategorical: {
      const Matrix probs = softmax_rows(
          xa * Eigen::Map<const RowMajorMatrix>(theta.data(), k, width).transpose());
      for (int c = 0; c < k; ++c) {
        for (int c2 = c; c2 < k; ++c2) {
          Vector w = -probs.col(c).cwiseProduct(probs.col(c2));
          if (c == c2) w += probs.col(c);
          const Matrix block = weighted_gram(w);
          h.block(c * width, c2 * width, width, width) += block;
          if (c2 != c) h.block(c2 * width, c * width, width, width) += block.transpose();
        }
      }
      break;
    }
    case LikelihoodKind::kBernoulli: {
      const Vector f = xa * theta;
      Vector w(f.size());
      for (Eigen::Index i = 0; i < f.size(); ++i) {
        const double p = sigmoid(f[i]);
        w[i] = p * (1.0 - p);
      }
      h += weighted_gram(w);
      break;
    }
    case LikelihoodKind::kGaussian:
      h += xa.transpose() * xa / (lik.noise_std * lik.noise_std);
      break;
  }
  return h;
}

}  // namespace

MapResult fit_map(const Model& model, const Likelihood& lik, const Dataset& data,
                  double precision, const MapConfig& config, const Vector* init) {
  if (!(precision > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "fit_map: precision must be > 0");
  if (config.max_epochs < 0 || !(config.learning_rate > 0.0) ||
      !(config.grad_tolerance > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "fit_map: invalid config");
  check_compatible(model, lik, data);

  MapResult result;
  result.theta = init ? *init : initial_parameters(model, config.seed);
  if (result.theta.size() != model_dim(model))
    throw Error(ErrorCode::kDimensionMismatch, "fit_map: init has wrong length");

  AdamState adam = AdamState::zeros(result.theta.size(), config.learning_rate);
  auto diverged = [] {
    return Error(ErrorCode::kDiverged, "fit_map: objective became non-finite");
  };

  Vector grad;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    grad = grad_log_joint(model, lik, result.theta, data, precision);
    if (!grad.allFinite()) throw diverged();
    result.epochs = epoch;
    if (grad.norm() < config.grad_tolerance) break;
    const double lr = cosine_lr(epoch, config.max_epochs, config.learning_rate);
    adam_step(adam, result.theta, -grad, lr);
    if (!result.theta.allFinite()) throw diverged();
  }

  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    double current = log_joint(model, lik, result.theta, data, precision);
    for (int it = 0; it < config.newton_iterations; ++it) {
      grad = grad_log_joint(model, lik, result.theta, data, precision);
      if (grad.norm() < config.grad_tolerance) break;
      const Matrix h = linear_precision(*lin, lik, result.theta, data, precision);
      const Vector step = h.llt().solve(grad);
      double t = 1.0;
      bool accepted = false;
      while (t > 1e-12) {
        const Vector candidate = result.theta + t * step;
        const double value = log_joint(model, lik, candidate, data, precision);
        if (std::isfinite(value) && value >= current - 1e-12 * std::abs(current)) {
          result.theta = candidate;
          current = value;
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) break;
    }
  }

  result.log_joint = log_joint(model, lik, result.theta, data, precision);
  if (!std::isfinite(result.log_joint)) throw diverged();
  result.grad_norm = grad_log_joint(model, lik, result.theta, data, precision).norm();
  result.converged = result.grad_norm < config.grad_tolerance;
  return result;
}

Matrix hessian_log_joint(const Model& model, const Likelihood& lik,
                         const Vector& theta, const Dataset& data, double precision,
                         const HessianOptions& options) {
  const Eigen::Index d = model_dim(model);
  if (theta.size() != d)
    throw Error(ErrorCode::kDimensionMismatch, "hessian: parameter length mismatch");
  if (!(precision > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "hessian: precision must be > 0");
  check_compatible(model, lik, data);
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    if (d > options.max_dim_linear)
      throw Error(ErrorCode::kInvalidArgument,
                  "hessian: dimension " + std::to_string(d) + " over limit");
    return linear_precision(*lin, lik, theta, data, precision);
  }
  if (d > options.max_dim_mlp)
    throw Error(ErrorCode::kInvalidArgument,
                "hessian: dimension " + std::to_string(d) + " over limit");
  Matrix h(d, d);
  Vector probe = theta;
  const double eps = options.fd_step;
  for (Eigen::Index j = 0; j < d; ++j) {
    probe[j] = theta[j] + eps;
    const Vector up = grad_log_joint(model, lik, probe, data, precision);
    probe[j] = theta[j] - eps;
    const Vector down = grad_log_joint(model, lik, probe, data, precision);
    probe[j] = theta[j];
    h.col(j) = -(up - down) / (2.0 * eps);
  }
  return 0.5 * (h + h.transpose());
}

GaussianPosterior laplace_posterior(const Vector& theta_map,
                                    const Matrix& precision_matrix,
                                    double prior_precision) {
  const Eigen::Index d = theta_map.size();
  if (precision_matrix.rows() != d || precision_matrix.cols() != d)
    throw Error(ErrorCode::kDimensionMismatch,
                "laplace_posterior: precision matrix does not match mean");
  const Matrix sym = 0.5 * (precision_matrix + precision_matrix.transpose());
  const Matrix l = cholesky_with_jitter(sym);
  // Sigma = L^-T L^-1
  Matrix l_inv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  Matrix cov = l_inv.transpose() * l_inv;
  return GaussianPosterior::from_covariance(theta_map, std::move(cov),
                                            prior_precision, Provenance::kLaplace);
}

TuneResult tune_prior_precision(const Model& model, const Likelihood& lik,
                                const Dataset& train, const Dataset& validation,
                                const std::vector<double>& grid,
                                const TuneOptions& options) {
  if (grid.empty()) throw Error(ErrorCode::kInvalidArgument, "tune: empty grid");
  for (double g : grid)
    if (!(g > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tune: precision <= 0");
  if (validation.is_regression())
    throw Error(ErrorCode::kInvalidArgument, "tune: classification data required");

  TuneResult result;
  result.grid = grid;
  double best = std::numeric_limits<double>::infinity();
  for (double precision : grid) {
    double value = std::numeric_limits<double>::infinity();
    try {
      const MapResult map = fit_map(model, lik, train, precision, options.map);
      Matrix probs;
      if (options.method == TuneMethod::kMap) {
        probs = plugin_predictive(model, lik, map.theta, validation.features).probs;
      } else {
        const GaussianPosterior la = laplace_posterior(
            map.theta, hessian_log_joint(model, lik, map.theta, train, precision),
            precision);
        RngStream rng(options.seed, 0x74756e65);
        probs = mc_predictive(la.sample(options.mc_samples, rng), model, lik,
                              validation.features)
                    .probs;
      }
      value = nll(probs, validation.labels);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDiverged && e.code() != ErrorCode::kNotPositiveDefinite)
        throw;
    }
    result.validation_nll.push_back(value);
    if (std::isfinite(value) &&
        (value < best || (value == best && precision > result.best_precision))) {
      best = value;
      result.best_precision = precision;
    }
  }
  if (!std::isfinite(best))
    throw Error(ErrorCode::kDiverged, "tune: every candidate diverged");
  return result;
}

}  // namespace lapref
