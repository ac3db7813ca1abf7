#pragma once

// Synthetic dataset generators, feature-CSV ingestion, and persistence of
// posteriors and sample sets.

#include <cstdint>
#include <optional>
#include <string>

#include "lapref/flows.hpp"
#include "lapref/gaussian.hpp"
#include "lapref/models.hpp"

namespace lapref {

inline constexpr std::uint32_t kFormatVersion = 1;

// 50 points, 25 per class, class k drawn from N((2k - 1) * [1.5, 1.5], 0.8^2 I).
Dataset gen_toy_logreg(RngStream& rng);

// x uniform on [-4, -1] U [1, 4], y = sin(2x) exp(-0.1 x^2) + 0.3 eps.
Dataset gen_toy_regression(RngStream& rng, int n = 60);

// C unit-covariance Gaussian modes in R^P with means at `radius` along
// random unit directions; label i % C for point i, so classes are balanced.
Dataset gen_mixture_classes(int n_classes, int n_features, int n_points, RngStream& rng,
                            double radius = 3.5);

// Header f0,...,f{P-1},label (classification) or f0,...,f{P-1},target
// (regression). `n_classes` = 0 infers max label + 1.
Dataset load_features_csv(const std::string& path, int n_classes = 0);
void save_features_csv(const std::string& path, const Dataset& data);

enum class PosteriorKind { kGaussian, kRefined };

struct PosteriorFile {
  PosteriorKind kind = PosteriorKind::kGaussian;
  GaussianPosterior base;
  std::optional<RadialFlowStack> flow;  // set for kRefined
};

void save_posterior(const std::string& path, const GaussianPosterior& posterior);
void save_posterior(const std::string& path, const RefinedPosterior& posterior);
PosteriorFile load_posterior(const std::string& path);
RefinedPosterior as_refined(const PosteriorFile& file);

enum class SamplesFormat { kBinary, kCsv };

// Binary layout: 32-byte little-endian header (magic "LRSS", version u32,
// d u32, provenance u32, S u64, seed u64) then S x d float64 rows.
// The CSV form starts with a "# lapref-samples" metadata line.
void save_samples(const std::string& path, const SampleSet& samples,
                  SamplesFormat format = SamplesFormat::kBinary);
// Format detected from the leading bytes.
SampleSet load_samples(const std::string& path);

// Writes `contents` to `path`, throwing IoError on failure.
void write_text_file(const std::string& path, const std::string& contents);

}  // namespace lapref
