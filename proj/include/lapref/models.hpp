#pragma once

// Likelihood models: a last-layer linear model (softmax / logistic /
// Gaussian heads) and a small fully connected network with hand-written
// backpropagation for all-layer toy experiments.

#include <variant>
#include <vector>

#include "lapref/numeric.hpp"

namespace lapref {

struct Dataset {
  Matrix features;          // N x P
  std::vector<int> labels;  // classification targets in [0, n_classes)
  Vector targets;           // regression targets (length N), else empty
  int n_classes = 0;        // 0 for regression

  Eigen::Index size() const noexcept { return features.rows(); }
  Eigen::Index n_features() const noexcept { return features.cols(); }
  bool is_regression() const noexcept { return n_classes == 0; }

  // Throws when labels/targets are inconsistent with the features.
  void validate() const;
  Dataset subset(const std::vector<Eigen::Index>& rows) const;
};

enum class LikelihoodKind { kCategorical, kBernoulli, kGaussian };

struct Likelihood {
  LikelihoodKind kind = LikelihoodKind::kCategorical;
  double noise_std = 0.3;  // Gaussian kind only

  static Likelihood categorical() { return {LikelihoodKind::kCategorical, 0.0}; }
  static Likelihood bernoulli() { return {LikelihoodKind::kBernoulli, 0.0}; }
  static Likelihood gaussian(double noise_std = 0.3) {
    return {LikelihoodKind::kGaussian, noise_std};
  }
};

// f(x) = W x~, where x~ is x with a trailing 1 when `bias` is set.
// Parameters are class-major: theta[k * (P + bias) + j], bias last per output.
struct LinearModel {
  int n_features = 0;
  int n_outputs = 0;
  bool bias = true;

  Eigen::Index dim() const noexcept {
    return static_cast<Eigen::Index>(n_outputs) * (n_features + (bias ? 1 : 0));
  }
  Eigen::Index row_width() const noexcept { return n_features + (bias ? 1 : 0); }
};

enum class Activation { kTanh, kIdentity };

// Fully connected network, activation on hidden layers only. Per layer the
// parameter block is W (out x in, row-major) followed by b (out).
struct TinyMlp {
  std::vector<int> widths;  // e.g. {1, 20, 20, 1}
  Activation activation = Activation::kTanh;

  Eigen::Index dim() const;
  int n_inputs() const { return widths.front(); }
  int n_outputs() const { return widths.back(); }
};

using Model = std::variant<LinearModel, TinyMlp>;

Eigen::Index model_dim(const Model& model);
int model_outputs(const Model& model);
int model_inputs(const Model& model);

// N x K matrix of outputs (logits, or regression means).
Matrix model_outputs(const Model& model, const Vector& theta, const Matrix& x);

// Linear model with features augmented by the bias column.
Matrix augment_features(const LinearModel& model, const Matrix& x);

double log_likelihood(const Model& model, const Likelihood& lik,
                      const Vector& theta, const Dataset& data);
Vector grad_log_likelihood(const Model& model, const Likelihood& lik,
                           const Vector& theta, const Dataset& data);

// log N(theta | 0, I / precision), normalization included.
double log_prior(const Vector& theta, double precision);
Vector grad_log_prior(const Vector& theta, double precision);

double log_joint(const Model& model, const Likelihood& lik, const Vector& theta,
                 const Dataset& data, double precision);
Vector grad_log_joint(const Model& model, const Likelihood& lik,
                      const Vector& theta, const Dataset& data, double precision);

// Log joint and its gradient for many parameter vectors at once (rows of
// `thetas`). Linear models batch the evaluation into a single product.
struct BatchJoint {
  Vector values;   // S
  Matrix gradients;  // S x d
};
BatchJoint log_joint_batch(const Model& model, const Likelihood& lik,
                           const Matrix& thetas, const Dataset& data,
                           double precision, bool with_gradients = true);

Vector tiny_mlp_forward(const TinyMlp& net, const Vector& theta, const Vector& x);
// Gradient of the log-likelihood by backpropagation.
Vector tiny_mlp_grad(const TinyMlp& net, const Likelihood& lik,
                     const Vector& theta, const Dataset& data);

// K x d Jacobian of f_theta(x) with respect to theta.
Matrix output_jacobian(const Model& model, const Vector& theta, const Vector& x);

// Per-example log p(y | f) given outputs F (N x K), and dlogp/dF.
Vector pointwise_log_likelihood(const Likelihood& lik, const Matrix& outputs,
                                const Dataset& data);
Matrix grad_outputs_log_likelihood(const Likelihood& lik, const Matrix& outputs,
                                   const Dataset& data);

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);
Vector softmax(const Vector& logits);

// Throws DimensionMismatch/InvalidArgument when model, likelihood and data
// do not fit together.
void check_compatible(const Model& model, const Likelihood& lik,
                      const Dataset& data);

}  // namespace lapref
