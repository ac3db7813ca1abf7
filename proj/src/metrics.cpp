#include "lapref/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "lapref/models.hpp"

namespace lapref {

namespace {

void check_labels(const Matrix& probs, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows())
    throw Error(ErrorCode::kDimensionMismatch, "metrics: label count does not match rows");
  for (int y : labels) {
    if (y < 0 || y >= probs.cols())
      throw Error(ErrorCode::kInvalidArgument,
                  "metrics: label " + std::to_string(y) + " out of range");
  }
}

Eigen::Index argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

// True when `a` should come before `b` in the canonical order used to make
// the MMD estimate exactly symmetric.
bool canonical_before(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (a(i, j) != b(i, j)) return a(i, j) < b(i, j);
  return true;
}

Matrix squared_distances(const Matrix& a, const Matrix& b) {
  const Vector na = a.rowwise().squaredNorm();
  const Vector nb = b.rowwise().squaredNorm();
  Matrix d = -2.0 * a * b.transpose();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

double mmd_ordered(const Matrix& x, const Matrix& y) {
  const Eigen::Index n = x.rows(), m = y.rows();
  Matrix pooled(n + m, x.cols());
  pooled << x, y;
  const Eigen::RowVectorXd mean = pooled.colwise().mean();
  Eigen::RowVectorXd std_dev =
      ((pooled.rowwise() - mean).array().square().colwise().sum() /
       static_cast<double>(n + m))
          .sqrt();
  for (Eigen::Index j = 0; j < std_dev.size(); ++j)
    if (!(std_dev[j] > 0.0)) std_dev[j] = 1.0;
  pooled = (pooled.rowwise() - mean).array().rowwise() / std_dev.array();

  const Matrix d2 = squared_distances(pooled, pooled);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>((n + m) * (n + m - 1) / 2));
  for (Eigen::Index j = 0; j < n + m; ++j)
    for (Eigen::Index i = j + 1; i < n + m; ++i) dists.push_back(std::sqrt(d2(i, j)));
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  double bandwidth = *mid;
  if (dists.size() % 2 == 0) {
    const double lower = *std::max_element(dists.begin(), mid);
    bandwidth = 0.5 * (bandwidth + lower);
  }
  if (!(bandwidth > 0.0)) bandwidth = 1.0;
  const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);

  const Matrix k = (-gamma * d2.array()).exp();
  const auto kxx = k.topLeftCorner(n, n);
  const auto kyy = k.bottomRightCorner(m, m);
  const auto kxy = k.topRightCorner(n, m);
  const double xx = (kxx.sum() - kxx.trace()) / static_cast<double>(n * (n - 1));
  const double yy = (kyy.sum() - kyy.trace()) / static_cast<double>(m * (m - 1));
  const double xy = kxy.sum() / static_cast<double>(n * m);
  return xx + yy - 2.0 * xy;
}

}  // namespace

double nll(const Matrix& probs, const std::vector<int>& labels) {
  check_labels(probs, labels);
  if (labels.empty()) throw Error(ErrorCode::kInvalidArgument, "nll: no examples");
  Vector terms(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    terms[i] = -std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]),
                                  kProbabilityFloor));
  return pairwise_mean(terms);
}

double ece(const Matrix& probs, const std::vector<int>& labels, int n_bins) {
  check_labels(probs, labels);
  if (n_bins < 1) throw Error(ErrorCode::kInvalidArgument, "ece: n_bins must be >= 1");
  if (labels.empty()) throw Error(ErrorCode::kInvalidArgument, "ece: no examples");
  std::vector<double> conf_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> correct(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> count(static_cast<std::size_t>(n_bins), 0.0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const Eigen::Index pred = argmax_lowest(probs.row(i));
    const double conf = probs(i, pred);
    int bin = static_cast<int>(std::ceil(conf * n_bins)) - 1;
    bin = std::clamp(bin, 0, n_bins - 1);
    const auto b = static_cast<std::size_t>(bin);
    conf_sum[b] += conf;
    correct[b] += pred == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    count[b] += 1.0;
  }
  double total = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b)
    if (count[b] > 0.0) total += std::abs(correct[b] - conf_sum[b]);
  return total / static_cast<double>(probs.rows());
}

double brier(const Matrix& probs, const std::vector<int>& labels) {
  check_labels(probs, labels);
  if (labels.empty()) throw Error(ErrorCode::kInvalidArgument, "brier: no examples");
  Vector terms(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      const double target = k == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      sum += (probs(i, k) - target) * (probs(i, k) - target);
    }
    terms[i] = sum;
  }
  return pairwise_mean(terms);
}

double accuracy(const Matrix& probs, const std::vector<int>& labels) {
  check_labels(probs, labels);
  if (labels.empty()) throw Error(ErrorCode::kInvalidArgument, "accuracy: no examples");
  std::int64_t hits = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    hits += argmax_lowest(probs.row(i)) == labels[static_cast<std::size_t>(i)];
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

double mmd(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols()) throw Error(ErrorCode::kDimensionMismatch, "mmd: dimension mismatch");
  if (x.rows() < 2 || y.rows() < 2)
    throw Error(ErrorCode::kInvalidArgument, "mmd: need at least two samples per set");
  return canonical_before(x, y) ? mmd_ordered(x, y) : mmd_ordered(y, x);
}

double mmd_report(const Matrix& x, const Matrix& y) { return std::max(0.0, mmd(x, y)); }

double percentile(Vector values, double q) {
  if (values.size() == 0) throw Error(ErrorCode::kInvalidArgument, "percentile: empty input");
  if (!(q >= 0.0 && q <= 100.0))
    throw Error(ErrorCode::kInvalidArgument, "percentile: q must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<Eigen::Index>(std::floor(pos));
  const Eigen::Index hi = std::min<Eigen::Index>(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double fpr95(const Vector& scores_in, const Vector& scores_out) {
  if (scores_in.size() == 0 || scores_out.size() == 0)
    throw Error(ErrorCode::kInvalidArgument, "fpr95: empty score set");
  const double threshold = percentile(scores_in, 5.0);
  const auto above = (scores_out.array() >= threshold).count();
  return static_cast<double>(above) / static_cast<double>(scores_out.size());
}

Vector max_probability(const Matrix& probs) { return probs.rowwise().maxCoeff(); }

double temperature_scale(const Matrix& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  if (labels.empty())
    throw Error(ErrorCode::kInvalidArgument, "temperature_scale: empty validation set");
  const auto objective = [&](double t) { return nll(softmax_rows(logits / t), labels); };
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.05, b = 20.0;
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = objective(c), fd = objective(d);
  while (b - a > 1e-4) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = objective(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = objective(d);
    }
  }
  return 0.5 * (a + b);
}

MetricsReport evaluate_predictions(const std::string& method, const Matrix& probs,
                                   const std::vector<int>& labels, std::int64_t samples,
                                   std::uint64_t seed) {
  MetricsReport report;
  report.method = method;
  report.nll = nll(probs, labels);
  report.ece = ece(probs, labels);
  report.brier = brier(probs, labels);
  report.accuracy = accuracy(probs, labels);
  report.samples = samples;
  report.seed = seed;
  return report;
}

}  // namespace lapref
