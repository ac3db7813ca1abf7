#pragma once

// Hamiltonian Monte Carlo with an identity mass matrix and dual-averaging
// step-size adaptation, plus split-R-hat and ESS diagnostics.

#include <cstdint>
#include <functional>
#include <vector>

#include "lapref/numeric.hpp"
#include "lapref/parallel.hpp"

namespace lapref {

// Returns log p(theta) and writes its gradient into `grad`.
using LogDensityFn = std::function<double(const Vector& theta, Vector& grad)>;
using GradientFn = std::function<Vector(const Vector& theta)>;

struct HmcConfig {
  int n_chains = 4;
  int n_warmup = 500;
  int n_samples = 600;  // per chain
  int leapfrog_steps = 32;
  double target_accept = 0.8;
  std::uint64_t seed = 0;
  // Post-warmup step sizes are drawn uniformly from step * [1 - j, 1 + j].
  double step_jitter = 0.1;
  // Cap on concurrently running chains; 0 means REFINE_NUM_THREADS or the
  // hardware concurrency.
  int max_threads = 0;

  void validate() const;
};

struct ChainSet {
  std::vector<SampleSet> chains;
  std::vector<double> acceptance_rates;
  std::vector<double> step_sizes;
  std::vector<int> divergences;

  Eigen::Index dim() const { return chains.empty() ? 0 : chains.front().dim(); }
  // All chains stacked, chain 0 first.
  SampleSet pooled() const;
  // Every k-th pooled row so that `count` rows remain (count <= pooled size).
  SampleSet thinned(Eigen::Index count) const;
};

struct LeapfrogResult {
  Vector theta;
  Vector momentum;
};

// n_steps leapfrog steps of size `step` for H = -log p(theta) + |p|^2 / 2.
LeapfrogResult leapfrog(const GradientFn& grad_log_post, Vector theta,
                        Vector momentum, double step, int n_steps);

// One chain per initial point. Chain c draws from its own child stream of
// `seed`, so results do not depend on how many threads run them. Throws AdaptationFailed if
// every warmup transition of a chain diverges.
ChainSet hmc_sample(const LogDensityFn& log_post, const std::vector<Vector>& inits,
                    const HmcConfig& config);

// Runs HMC on u with theta = mean + chol * u, i.e. on the target whitened by
// a Gaussian approximation, and maps the draws back to theta.
ChainSet hmc_sample_whitened(const LogDensityFn& log_post, const Vector& mean,
                             const Matrix& chol, const HmcConfig& config);

// mean + scale * chol * eps for each chain.
std::vector<Vector> jittered_inits(const Vector& mean, const Matrix& chol,
                                   int n_chains, double scale, RngStream& rng);

// Split R-hat per dimension (each chain halved). Dimensions with zero
// within-chain variance report +infinity.
Vector gelman_rubin(const ChainSet& chains);
Vector gelman_rubin(const std::vector<Matrix>& chains);

// Effective sample size per dimension over all chains (Geyer's initial
// positive sequence on the pooled autocorrelation).
Vector effective_sample_size(const ChainSet& chains);

}  // namespace lapref
