#include "lapref/numeric.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

namespace lapref {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kNonFiniteElbo: return "NonFiniteElbo";
    case ErrorCode::kDiverged: return "Diverged";
    case ErrorCode::kAdaptationFailed: return "AdaptationFailed";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kLaplace: return "laplace";
    case Provenance::kVb: return "vb";
    case Provenance::kManual: return "manual";
    case Provenance::kRefined: return "refined";
    case Provenance::kHmc: return "hmc";
  }
  return "manual";
}

Provenance provenance_from_name(std::string_view name) {
  if (name == "laplace") return Provenance::kLaplace;
  if (name == "vb") return Provenance::kVb;
  if (name == "manual") return Provenance::kManual;
  if (name == "refined") return Provenance::kRefined;
  if (name == "hmc") return Provenance::kHmc;
  throw Error(ErrorCode::kParseError,
              "unknown provenance '" + std::string(name) + "'");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream_id) {
  std::seed_seq seq{
      static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
      static_cast<std::uint32_t>(stream_id),
      static_cast<std::uint32_t>(stream_id >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

RngStream RngStream::split(std::uint64_t key) const {
  return RngStream(seed_, splitmix64(stream_id_ ^ splitmix64(key + 1)));
}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open() {
  return (static_cast<double>(engine_() >> 12) + 0.5) * 0x1.0p-52;
}

double RngStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // Box-Muller.
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_normal_ = true;
  return radius * std::cos(angle);
}

Vector RngStream::normal_vector(Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

Matrix RngStream::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  // Filled row by row so that row s only depends on draws before it.
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal();
  return m;
}

Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols())
    throw Error(ErrorCode::kDimensionMismatch, "cholesky: matrix not square");
  const Eigen::Index n = a.rows();
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if (!all_finite(a))
    throw Error(ErrorCode::kNonFiniteValue, "cholesky: non-finite entry");
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw Error(ErrorCode::kInvalidArgument, "cholesky: matrix not symmetric");

  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > 0.0)) {
      std::ostringstream msg;
      msg << "cholesky: pivot " << j << " is " << pivot;
      throw Error(ErrorCode::kNotPositiveDefinite, msg.str());
    }
    const double diag = std::sqrt(pivot);
    l(j, j) = diag;
    if (j + 1 < n) {
      const Eigen::Index rest = n - j - 1;
      l.col(j).tail(rest) =
          (a.col(j).tail(rest) -
           l.bottomLeftCorner(rest, j) * l.row(j).head(j).transpose()) /
          diag;
    }
  }
  return l;
}

Matrix cholesky_with_jitter(const Matrix& a, double* jitter_used) {
  if (jitter_used) *jitter_used = 0.0;
  try {
    return cholesky(a);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNotPositiveDefinite) throw;
  }
  const double mean_diag = std::abs(a.diagonal().mean());
  double jitter = 1e-6 * (mean_diag > 0.0 ? mean_diag : 1.0);
  for (int attempt = 0; attempt <= 3; ++attempt, jitter *= 10.0) {
    Matrix shifted = a;
    shifted.diagonal().array() += jitter;
    try {
      Matrix l = cholesky(shifted);
      if (jitter_used) *jitter_used = jitter;
      return l;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotPositiveDefinite) throw;
    }
  }
  throw Error(ErrorCode::kNotPositiveDefinite,
              "cholesky: not positive definite after jitter escalation");
}

SampleSet sample_gaussian(const Vector& mean, const Matrix& chol_factor,
                          Eigen::Index n, RngStream& rng) {
  if (chol_factor.rows() != mean.size() || chol_factor.cols() != mean.size())
    throw Error(ErrorCode::kDimensionMismatch,
                "sample_gaussian: factor does not match mean");
  if (n < 0) throw Error(ErrorCode::kInvalidArgument, "sample_gaussian: n < 0");
  SampleSet out;
  out.seed = rng.seed();
  const Matrix z = rng.normal_matrix(n, mean.size());
  out.draws = z * chol_factor.triangularView<Eigen::Lower>().transpose();
  out.draws.rowwise() += mean.transpose();
  return out;
}

double gaussian_log_density(const Vector& x, const Vector& mean,
                            const Matrix& chol_factor) {
  const Eigen::Index d = mean.size();
  const Vector w =
      chol_factor.triangularView<Eigen::Lower>().solve(x - mean);
  const double log_det = chol_factor.diagonal().array().log().sum();
  return -0.5 * w.squaredNorm() - log_det -
         0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
}

AdamState AdamState::zeros(Eigen::Index n, double learning_rate) {
  AdamState s;
  s.first_moment = Vector::Zero(n);
  s.second_moment = Vector::Zero(n);
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(AdamState& state, Eigen::Ref<Vector> params, const Vector& grad,
               double lr) {
  if (params.size() != grad.size() ||
      state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw Error(ErrorCode::kDimensionMismatch, "adam_step: length mismatch");
  if (!(lr > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "adam_step: lr must be > 0");
  if (!all_finite(grad))
    throw Error(ErrorCode::kNonFiniteGradient, "adam_step: non-finite gradient");
  if (grad.isZero(0.0)) return;

  state.step += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  state.second_moment = state.beta2 * state.second_moment +
                        (1.0 - state.beta2) * grad.cwiseAbs2();
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() -= lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0) {
  if (total_steps <= 0)
    throw Error(ErrorCode::kInvalidArgument, "cosine_lr: total_steps must be > 0");
  if (step < 0 || step > total_steps)
    throw Error(ErrorCode::kInvalidArgument, "cosine_lr: step out of range");
  if (!(lr0 > 0.0)) throw Error(ErrorCode::kInvalidArgument, "cosine_lr: lr0 <= 0");
  if (step == total_steps) return 0.0;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

Vector finite_diff_grad(const ScalarFunction& f, const Vector& x, double eps) {
  if (!(eps > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "finite_diff_grad: eps <= 0");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error(ErrorCode::kNonFiniteValue,
                  "finite_diff_grad: non-finite function value");
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kBlock = 16;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double pairwise_sum(const Vector& values) {
  return pairwise_sum(std::span<const double>(values.data(),
                                              static_cast<std::size_t>(values.size())));
}

double pairwise_mean(const Vector& values) {
  if (values.size() == 0)
    throw Error(ErrorCode::kInvalidArgument, "pairwise_mean: empty input");
  return pairwise_sum(values) / static_cast<double>(values.size());
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "softplus_inverse: y must be > 0");
  // log(exp(y) - 1) = y + log(1 - exp(-y))
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace lapref
