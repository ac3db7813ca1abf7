#include "lapref/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lapref {

namespace {

constexpr double kDivergenceThreshold = 1000.0;
constexpr std::uint64_t kChainStream = 0x686d63;

struct PhasePoint {
  Vector theta;
  Vector grad;
  double log_p = 0.0;
};

// Integrates from `start` with momentum `p`; returns false when the state
// turns non-finite.
bool integrate(const LogDensityFn& log_post, const PhasePoint& start, Vector& p,
               double step, int n_steps, PhasePoint& end) {
  end = start;
  if (n_steps == 0) return true;
  p.noalias() += 0.5 * step * end.grad;
  for (int i = 0; i < n_steps; ++i) {
    end.theta.noalias() += step * p;
    end.log_p = log_post(end.theta, end.grad);
    if (!std::isfinite(end.log_p) || !end.grad.allFinite()) return false;
    if (i + 1 < n_steps) p.noalias() += step * end.grad;
  }
  p.noalias() += 0.5 * step * end.grad;
  return p.allFinite() && end.theta.allFinite();
}

struct Transition {
  PhasePoint state;
  double accept_prob = 0.0;
  bool accepted = false;
  bool divergent = false;
};

Transition transition(const LogDensityFn& log_post, const PhasePoint& current,
                      double step, int n_steps, RngStream& rng) {
  Vector p = rng.normal_vector(current.theta.size());
  const double h0 = -current.log_p + 0.5 * p.squaredNorm();
  Transition out;
  PhasePoint proposal;
  const bool finite = integrate(log_post, current, p, step, n_steps, proposal);
  const double h1 = -proposal.log_p + 0.5 * p.squaredNorm();
  const double delta = h1 - h0;
  if (!finite || !std::isfinite(delta) || delta > kDivergenceThreshold) {
    out.state = current;
    out.divergent = true;
    return out;
  }
  out.accept_prob = std::min(1.0, std::exp(-delta));
  if (rng.uniform() < out.accept_prob) {
    out.state = std::move(proposal);
    out.accepted = true;
  } else {
    out.state = current;
  }
  return out;
}

// Doubles or halves the step until the one-step acceptance ratio crosses 1/2.
double initial_step_size(const LogDensityFn& log_post, const PhasePoint& start,
                         RngStream& rng) {
  double step = 1.0;
  const auto log_ratio = [&](double eps) {
    Vector p = rng.normal_vector(start.theta.size());
    const double h0 = -start.log_p + 0.5 * p.squaredNorm();
    PhasePoint end;
    if (!integrate(log_post, start, p, eps, 1, end))
      return -std::numeric_limits<double>::infinity();
    const double h1 = -end.log_p + 0.5 * p.squaredNorm();
    return std::isfinite(h1) ? h0 - h1 : -std::numeric_limits<double>::infinity();
  };
  double lr = log_ratio(step);
  const double direction = lr > std::log(0.5) ? 1.0 : -1.0;
  for (int i = 0; i < 100; ++i) {
    if (!(direction * lr > -direction * std::log(2.0))) break;
    step *= std::pow(2.0, direction);
    lr = log_ratio(step);
  }
  return step;
}

struct ChainResult {
  Matrix draws;
  double acceptance = 0.0;
  double step = 0.0;
  int divergences = 0;
};

ChainResult run_chain(const LogDensityFn& log_post, const Vector& init,
                      const HmcConfig& config, RngStream rng) {
  PhasePoint current;
  current.theta = init;
  current.grad = Vector::Zero(init.size());
  current.log_p = log_post(current.theta, current.grad);
  if (!std::isfinite(current.log_p) || !current.grad.allFinite())
    throw Error(ErrorCode::kInvalidArgument, "hmc: log density not finite at init");

  // Dual averaging (gamma 0.05, t0 10, kappa 0.75).
  double step = initial_step_size(log_post, current, rng);
  const double mu = std::log(10.0 * step);
  double h_bar = 0.0, log_step_bar = 0.0;
  int warmup_divergent = 0;
  for (int m = 1; m <= config.n_warmup; ++m) {
    Transition t = transition(log_post, current, step, config.leapfrog_steps, rng);
    warmup_divergent += t.divergent;
    current = std::move(t.state);
    const double w = 1.0 / (m + 10.0);
    h_bar = (1.0 - w) * h_bar + w * (config.target_accept - t.accept_prob);
    const double log_step = mu - std::sqrt(static_cast<double>(m)) / 0.05 * h_bar;
    const double eta = std::pow(static_cast<double>(m), -0.75);
    log_step_bar = eta * log_step + (1.0 - eta) * log_step_bar;
    step = std::exp(log_step);
  }
  if (config.n_warmup > 0) {
    if (warmup_divergent == config.n_warmup)
      throw Error(ErrorCode::kAdaptationFailed, "hmc: every warmup transition diverged");
    step = std::exp(log_step_bar);
  }
  if (!(step > 0.0) || !std::isfinite(step))
    throw Error(ErrorCode::kAdaptationFailed, "hmc: adapted step size is not finite");

  ChainResult out;
  out.step = step;
  out.draws.resize(config.n_samples, init.size());
  int accepted = 0;
  for (int i = 0; i < config.n_samples; ++i) {
    const double jitter = config.step_jitter * (2.0 * rng.uniform() - 1.0);
    Transition t =
        transition(log_post, current, step * (1.0 + jitter), config.leapfrog_steps, rng);
    accepted += t.accepted;
    out.divergences += t.divergent;
    current = std::move(t.state);
    out.draws.row(i) = current.theta.transpose();
  }
  out.acceptance = config.n_samples > 0
                       ? static_cast<double>(accepted) / config.n_samples
                       : 0.0;
  return out;
}

}  // namespace

void HmcConfig::validate() const {
  if (n_chains < 1 || n_warmup < 0 || n_samples < 1 || leapfrog_steps < 1 ||
      !(target_accept > 0.0 && target_accept < 1.0) ||
      !(step_jitter >= 0.0 && step_jitter < 1.0) || max_threads < 0)
    throw Error(ErrorCode::kInvalidArgument, "hmc: invalid config");
}

SampleSet ChainSet::pooled() const {
  SampleSet out;
  out.provenance = Provenance::kHmc;
  if (chains.empty()) return out;
  out.seed = chains.front().seed;
  Eigen::Index rows = 0;
  for (const SampleSet& c : chains) rows += c.size();
  out.draws.resize(rows, dim());
  Eigen::Index offset = 0;
  for (const SampleSet& c : chains) {
    out.draws.middleRows(offset, c.size()) = c.draws;
    offset += c.size();
  }
  return out;
}

SampleSet ChainSet::thinned(Eigen::Index count) const {
  SampleSet all = pooled();
  if (count < 1 || count > all.size())
    throw Error(ErrorCode::kInvalidArgument, "thinned: count out of range");
  SampleSet out;
  out.provenance = all.provenance;
  out.seed = all.seed;
  out.draws.resize(count, all.dim());
  for (Eigen::Index i = 0; i < count; ++i)
    out.draws.row(i) = all.draws.row(i * all.size() / count);
  return out;
}

LeapfrogResult leapfrog(const GradientFn& grad_log_post, Vector theta, Vector momentum,
                        double step, int n_steps) {
  if (!(step > 0.0)) throw Error(ErrorCode::kInvalidArgument, "leapfrog: step must be > 0");
  if (n_steps < 0) throw Error(ErrorCode::kInvalidArgument, "leapfrog: n_steps must be >= 0");
  if (theta.size() != momentum.size())
    throw Error(ErrorCode::kDimensionMismatch, "leapfrog: theta and momentum sizes differ");
  if (n_steps == 0) return {std::move(theta), std::move(momentum)};
  Vector grad = grad_log_post(theta);
  momentum.noalias() += 0.5 * step * grad;
  for (int i = 0; i < n_steps; ++i) {
    theta.noalias() += step * momentum;
    grad = grad_log_post(theta);
    if (i + 1 < n_steps) momentum.noalias() += step * grad;
  }
  momentum.noalias() += 0.5 * step * grad;
  return {std::move(theta), std::move(momentum)};
}

ChainSet hmc_sample(const LogDensityFn& log_post, const std::vector<Vector>& inits,
                    const HmcConfig& config) {
  config.validate();
  if (static_cast<int>(inits.size()) != config.n_chains)
    throw Error(ErrorCode::kInvalidArgument, "hmc: need one initial point per chain");
  for (const Vector& v : inits)
    if (v.size() != inits.front().size())
      throw Error(ErrorCode::kDimensionMismatch, "hmc: initial points differ in dimension");

  const RngStream root(config.seed, kChainStream);
  std::vector<ChainResult> results(inits.size());
  parallel_for(
      inits.size(),
      [&](std::size_t c) {
        results[c] = run_chain(log_post, inits[c], config, root.split(c));
      },
      config.max_threads);

  ChainSet out;
  for (ChainResult& r : results) {
    out.chains.push_back({std::move(r.draws), Provenance::kHmc, config.seed});
    out.acceptance_rates.push_back(r.acceptance);
    out.step_sizes.push_back(r.step);
    out.divergences.push_back(r.divergences);
  }
  return out;
}

ChainSet hmc_sample_whitened(const LogDensityFn& log_post, const Vector& mean,
                             const Matrix& chol, const HmcConfig& config) {
  if (chol.rows() != mean.size() || chol.cols() != mean.size())
    throw Error(ErrorCode::kDimensionMismatch, "hmc: factor does not match mean");
  const LogDensityFn whitened = [&](const Vector& u, Vector& grad) {
    Vector theta = mean + chol * u;
    Vector g(theta.size());
    const double value = log_post(theta, g);
    grad = chol.transpose() * g;
    return value;
  };
  const Eigen::Index d = mean.size();
  RngStream jitter_rng(config.seed, 0x6a6974);
  const std::vector<Vector> inits =
      jittered_inits(Vector::Zero(d), Matrix::Identity(d, d), config.n_chains, 0.1,
                     jitter_rng);
  ChainSet out = hmc_sample(whitened, inits, config);
  for (SampleSet& c : out.chains) {
    c.draws = c.draws * chol.transpose();
    c.draws.rowwise() += mean.transpose();
  }
  return out;
}

std::vector<Vector> jittered_inits(const Vector& mean, const Matrix& chol, int n_chains,
                                   double scale, RngStream& rng) {
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(n_chains));
  for (int c = 0; c < n_chains; ++c)
    out.push_back(mean + scale * (chol * rng.normal_vector(mean.size())));
  return out;
}

Vector gelman_rubin(const std::vector<Matrix>& chains) {
  if (chains.size() < 2) throw Error(ErrorCode::kInvalidArgument, "gelman_rubin: need >= 2 chains");
  const Eigen::Index n = chains.front().rows();
  const Eigen::Index d = chains.front().cols();
  if (n < 10) throw Error(ErrorCode::kInvalidArgument, "gelman_rubin: chains need >= 10 draws");
  for (const Matrix& c : chains)
    if (c.rows() != n || c.cols() != d)
      throw Error(ErrorCode::kDimensionMismatch, "gelman_rubin: chains differ in shape");

  const Eigen::Index half = n / 2;
  std::vector<Matrix> halves;
  for (const Matrix& c : chains) {
    halves.push_back(c.topRows(half));
    halves.push_back(c.bottomRows(half));
  }
  const double m = static_cast<double>(halves.size());
  const double len = static_cast<double>(half);
  Vector out(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Vector means(halves.size()), vars(halves.size());
    for (std::size_t k = 0; k < halves.size(); ++k) {
      const auto col = halves[k].col(j);
      means[static_cast<Eigen::Index>(k)] = col.mean();
      vars[static_cast<Eigen::Index>(k)] =
          (col.array() - col.mean()).square().sum() / (len - 1.0);
    }
    const double within = vars.mean();
    const double between = len * (means.array() - means.mean()).square().sum() / (m - 1.0);
    if (!(within > 0.0)) {
      out[j] = std::numeric_limits<double>::infinity();
      continue;
    }
    const double var_plus = (len - 1.0) / len * within + between / len;
    out[j] = std::sqrt(var_plus / within);
  }
  return out;
}

Vector gelman_rubin(const ChainSet& chains) {
  std::vector<Matrix> draws;
  for (const SampleSet& c : chains.chains) draws.push_back(c.draws);
  return gelman_rubin(draws);
}

Vector effective_sample_size(const ChainSet& chains) {
  const std::size_t n_chains = chains.chains.size();
  if (n_chains < 1) throw Error(ErrorCode::kInvalidArgument, "ess: no chains");
  const Eigen::Index n = chains.chains.front().size();
  const Eigen::Index d = chains.dim();
  if (n < 4) throw Error(ErrorCode::kInvalidArgument, "ess: chains too short");
  const double m = static_cast<double>(n_chains);
  Vector out(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    std::vector<Vector> centered;
    Vector means(static_cast<Eigen::Index>(n_chains));
    double within = 0.0;
    for (std::size_t c = 0; c < n_chains; ++c) {
      const auto col = chains.chains[c].draws.col(j);
      means[static_cast<Eigen::Index>(c)] = col.mean();
      centered.push_back(col.array() - col.mean());
      within += centered.back().squaredNorm() / static_cast<double>(n - 1);
    }
    within /= m;
    const double between =
        n_chains > 1 ? static_cast<double>(n) * (means.array() - means.mean()).square().sum() /
                           (m - 1.0)
                     : 0.0;
    const double var_plus =
        static_cast<double>(n - 1) / static_cast<double>(n) * within +
        between / static_cast<double>(n);
    if (!(var_plus > 0.0)) {
      out[j] = 0.0;
      continue;
    }
    const auto rho = [&](Eigen::Index lag) {
      double acov = 0.0;
      for (const Vector& x : centered)
        acov += x.head(n - lag).dot(x.tail(n - lag)) / static_cast<double>(n);
      return 1.0 - (within - acov / m) / var_plus;
    };
    double tau = -1.0;
    double previous_pair = std::numeric_limits<double>::infinity();
    for (Eigen::Index lag = 0; lag + 1 < n; lag += 2) {
      double pair = rho(lag) + rho(lag + 1);
      if (pair <= 0.0) break;
      pair = std::min(pair, previous_pair);
      tau += 2.0 * pair;
      previous_pair = pair;
    }
    out[j] = m * static_cast<double>(n) / std::max(tau, 1e-12);
  }
  return out;
}

}  // namespace lapref
