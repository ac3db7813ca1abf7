#pragma once

// Calibration, accuracy, sample-distance and OOD metrics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lapref/numeric.hpp"

namespace lapref {

inline constexpr double kProbabilityFloor = 1e-12;

// -(1/N) sum log p[i, y_i], probabilities floored at 1e-12.
double nll(const Matrix& probs, const std::vector<int>& labels);

// Equal-width bins over the max-probability confidence, bins (i/B, (i+1)/B].
double ece(const Matrix& probs, const std::vector<int>& labels, int n_bins = 15);

// Mean over examples of sum over classes (p - onehot)^2.
double brier(const Matrix& probs, const std::vector<int>& labels);

// Fraction with argmax == label, ties resolved to the lowest class index.
double accuracy(const Matrix& probs, const std::vector<int>& labels);

// Unbiased quadratic-time MMD^2 with an RBF kernel. Samples are standardized
// by the pooled per-dimension mean and std, and the bandwidth is the median
// pairwise distance of the pooled standardized samples. May be negative;
// use mmd_report for the clamped value. Symmetric in its arguments.
double mmd(const Matrix& x, const Matrix& y);
double mmd_report(const Matrix& x, const Matrix& y);

// FPR on `scores_out` at the threshold keeping 95% of `scores_in`
// (higher score = more in-distribution).
double fpr95(const Vector& scores_in, const Vector& scores_out);

// Linear-interpolation percentile, q in [0, 100].
double percentile(Vector values, double q);

// Max predicted probability per row.
Vector max_probability(const Matrix& probs);

// Temperature T in [0.05, 20] minimizing NLL(softmax(logits / T)), found by
// golden-section search to 1e-4.
double temperature_scale(const Matrix& logits, const std::vector<int>& labels);

struct MetricsReport {
  std::string method;
  double nll = 0.0;
  double ece = 0.0;
  double brier = 0.0;
  double accuracy = 0.0;
  std::optional<double> mmd;
  std::optional<double> fpr95;
  std::int64_t samples = 0;
  std::uint64_t seed = 0;
};

MetricsReport evaluate_predictions(const std::string& method, const Matrix& probs,
                                   const std::vector<int>& labels,
                                   std::int64_t samples, std::uint64_t seed);

}  // namespace lapref
