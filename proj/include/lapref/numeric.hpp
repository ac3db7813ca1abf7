#pragma once

// Dense linear algebra, seeded random streams, optimizers and
// finite-difference helpers shared by every other module.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string_view>

#include <Eigen/Dense>

#include "lapref/error.hpp"

namespace lapref {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Where a set of parameter samples (or a Gaussian) came from.
enum class Provenance { kLaplace, kVb, kManual, kRefined, kHmc };

std::string_view provenance_name(Provenance p);
Provenance provenance_from_name(std::string_view name);

// Reproducible random stream. Two streams built from the same (seed,
// stream_id) pair yield the same draws; different stream ids give
// statistically independent sequences, so parallel chains can each own one.
//
// The engine (mt19937_64) and the seed_seq mixing are fully specified by the
// C++ standard; the uniform and normal transforms are implemented here rather
// than through <random> distributions, whose algorithms are
// implementation-defined.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  // Independent child stream keyed by `key`.
  RngStream split(std::uint64_t key) const;

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on (0, 1).
  double uniform_open();
  double normal();
  Vector normal_vector(Eigen::Index n);
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

// Draws from a parameter distribution, one row per sample.
struct SampleSet {
  Matrix draws;  // S x d
  Provenance provenance = Provenance::kManual;
  std::uint64_t seed = 0;

  Eigen::Index size() const noexcept { return draws.rows(); }
  Eigen::Index dim() const noexcept { return draws.cols(); }
};

// Lower Cholesky factor L with L * L^T == a. Throws NotPositiveDefinite when a
// pivot is not strictly positive and InvalidArgument when `a` is not
// symmetric to 1e-10 (relative to its largest entry).
Matrix cholesky(const Matrix& a);

// Cholesky with the jitter policy: on failure retry with
// a + 1e-6 * mean(diag(a)) * I, escalating x10 up to three times.
// `jitter_used` receives the added diagonal (0 when none was needed).
Matrix cholesky_with_jitter(const Matrix& a, double* jitter_used = nullptr);

// Rows are mean + L z with z ~ N(0, I).
SampleSet sample_gaussian(const Vector& mean, const Matrix& chol_factor,
                          Eigen::Index n, RngStream& rng);

// Gaussian log-density given the lower Cholesky factor of the covariance.
double gaussian_log_density(const Vector& x, const Vector& mean,
                            const Matrix& chol_factor);

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;

  static AdamState zeros(Eigen::Index n, double learning_rate = 1e-3);
};

// One Adam descent step, in place: params -= lr * m_hat / (sqrt(v_hat) + eps).
// An all-zero gradient leaves both params and state untouched.
void adam_step(AdamState& state, Eigen::Ref<Vector> params, const Vector& grad,
               double lr);

// lr0 * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0);

using ScalarFunction = std::function<double(const Vector&)>;

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
Vector finite_diff_grad(const ScalarFunction& f, const Vector& x,
                        double eps = 1e-5);

// Pairwise (cascade) summation.
double pairwise_sum(std::span<const double> values);
double pairwise_sum(const Vector& values);
double pairwise_mean(const Vector& values);

// log(1 + exp(x)) without overflow.
double softplus(double x);
// Inverse of softplus for y > 0.
double softplus_inverse(double y);
double sigmoid(double x);

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

}  // namespace lapref
