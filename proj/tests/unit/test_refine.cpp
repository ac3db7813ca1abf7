#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "lapref/data_io.hpp"
#include "lapref/refine.hpp"

namespace lapref {
namespace {

struct Conjugate {
  Dataset data;
  LinearModel model;
  Likelihood lik;
  double precision;
  GaussianPosterior posterior;
  double log_evidence;
};

// y = X w + noise with a Gaussian prior: posterior and evidence in closed form.
Conjugate make_conjugate(std::uint64_t seed, int n = 30, int p = 2, bool bias = true) {
  RngStream rng(seed);
  Conjugate c;
  c.data.features = rng.normal_matrix(n, p);
  c.data.targets = c.data.features * Vector::LinSpaced(p, 1.0, -1.0) + 0.5 * rng.normal_vector(n);
  c.model = LinearModel{p, 1, bias};
  c.lik = Likelihood::gaussian(0.5);
  c.precision = 2.0;
  const Matrix xa = augment_features(c.model, c.data.features);
  const double s2 = 0.25;
  const Matrix a = xa.transpose() * xa / s2 + c.precision * Matrix::Identity(xa.cols(), xa.cols());
  const Matrix cov = a.inverse();
  c.posterior = GaussianPosterior::from_covariance(cov * xa.transpose() * c.data.targets / s2, cov,
                                                   c.precision, Provenance::kLaplace);
  const Matrix marginal = s2 * Matrix::Identity(n, n) + xa * xa.transpose() / c.precision;
  const Eigen::LLT<Matrix> llt(marginal);
  const Vector alpha = llt.solve(c.data.targets);
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(Matrix(llt.matrixL())(i, i));
  c.log_evidence = -0.5 * c.data.targets.dot(alpha) - 0.5 * logdet -
                   0.5 * n * std::log(2.0 * std::numbers::pi);
  return c;
}

RadialFlowStack random_stack(Eigen::Index d, int length, RngStream& rng) {
  RadialFlowStack stack = RadialFlowStack::identity(d);
  for (int l = 0; l < length; ++l) {
    RadialLayer layer;
    layer.center = rng.normal_vector(d);
    layer.raw_alpha = rng.normal();
    layer.raw_beta = rng.normal();
    stack.layers.push_back(layer);
  }
  return stack;
}

TEST(ElboEstimate, IdentityFlowMatchesDirectGaussianElbo) {
  RngStream rng(1);
  Dataset data = gen_toy_logreg(rng);
  const LinearModel model{2, 1, true};
  const Likelihood lik = Likelihood::bernoulli();
  const MapResult map = fit_map(model, lik, data, 1.0);
  const GaussianPosterior base =
      laplace_posterior(map.theta, hessian_log_joint(model, lik, map.theta, data, 1.0), 1.0);
  const RefinedPosterior rp(base, RadialFlowStack::identity(3));
  RngStream a(7), b(7);
  const double elbo = elbo_estimate(rp, model, lik, data, 1.0, 64, a);
  const SampleSet z = base.sample(64, b);
  double total = 0.0;
  for (Eigen::Index s = 0; s < 64; ++s)
    total += log_joint(model, lik, z.draws.row(s).transpose(), data, 1.0);
  const double entropy = 0.5 * 3 * (1.0 + std::log(2.0 * std::numbers::pi)) +
                         0.5 * std::log(base.covariance.determinant());
  EXPECT_NEAR(elbo, total / 64.0 + entropy, 1e-10);
}

TEST(ElboEstimate, PriorBaseWithoutDataIsZero) {
  Dataset data;
  data.features.resize(0, 2);
  data.targets.resize(0);
  const LinearModel model{2, 1, true};
  const double lambda = 2.0;
  const GaussianPosterior prior = GaussianPosterior::from_covariance(
      Vector::Zero(3), Matrix::Identity(3, 3) / lambda, lambda, Provenance::kManual);
  const RefinedPosterior rp(prior, RadialFlowStack::identity(3));
  RngStream rng(3);
  const int n = 4000;
  const double elbo = elbo_estimate(rp, model, Likelihood::gaussian(0.3), data, lambda, n, rng);
  // Per-sample terms are -lambda/2 |theta|^2 + const, with variance d/2.
  const double se = std::sqrt(1.5 / n);
  EXPECT_LT(std::abs(elbo), 4.0 * se);
}

TEST(ElboEstimate, LowerBoundOnAverage) {
  const Conjugate c = make_conjugate(5);
  RngStream rng(6);
  const RefinedPosterior rp(
      GaussianPosterior::from_covariance(c.posterior.mean + Vector::Constant(3, 0.2),
                                         1.5 * c.posterior.covariance, c.precision,
                                         Provenance::kManual),
      random_stack(3, 2, rng));
  Vector values(100);
  for (int seed = 0; seed < 100; ++seed) {
    RngStream r(100 + seed);
    values[seed] = elbo_estimate(rp, c.model, c.lik, c.data, c.precision, 32, r);
  }
  const double mean = values.mean();
  const double se = std::sqrt((values.array() - mean).square().sum() / 99.0 / 100.0);
  EXPECT_LE(mean, c.log_evidence + 3.0 * se);
}

TEST(ElboEstimate, ExactPosteriorAttainsEvidence) {
  const Conjugate c = make_conjugate(8);
  const RefinedPosterior rp(c.posterior, RadialFlowStack::identity(3));
  RngStream rng(9);
  EXPECT_NEAR(elbo_estimate(rp, c.model, c.lik, c.data, c.precision, 20000, rng), c.log_evidence,
              0.02);
}

TEST(ElboEstimate, RejectsZeroSamples) {
  const Conjugate c = make_conjugate(8);
  const RefinedPosterior rp(c.posterior, RadialFlowStack::identity(3));
  RngStream rng(9);
  EXPECT_THROW(elbo_estimate(rp, c.model, c.lik, c.data, c.precision, 0, rng), Error);
}

TEST(ElboGrad, MatchesFiniteDifferencesWithSharedNoise) {
  RngStream rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const int p = 1 + trial % 3;
    RngStream data_rng(200 + trial);
    Dataset data;
    data.n_classes = 3;
    data.features = data_rng.normal_matrix(20, p);
    for (int i = 0; i < 20; ++i) data.labels.push_back(static_cast<int>(data_rng.next_u64() % 3));
    const LinearModel model{p, 3, false};
    const Eigen::Index d = model.dim();
    const Matrix a = rng.normal_matrix(d, d) * 0.3;
    const GaussianPosterior base = GaussianPosterior::from_covariance(
        rng.normal_vector(d) * 0.3, a * a.transpose() + 0.1 * Matrix::Identity(d, d), 1.0,
        Provenance::kManual);
    if (d > 5) continue;
    const RefinedPosterior rp(base, random_stack(d, 1 + trial % 2, rng));
    const Matrix points = base.sample(8, rng).draws;
    const ElboEval eval =
        elbo_value_and_grad(rp, model, Likelihood::categorical(), data, 1.0, points);
    const Vector numeric = finite_diff_grad(
        [&](const Vector& params) {
          RefinedPosterior moved = rp;
          moved.flow.set_parameters(params);
          return elbo_at(moved, model, Likelihood::categorical(), data, 1.0, points);
        },
        rp.flow.parameters(), 1e-6);
    EXPECT_LT((eval.grad - numeric).norm() / numeric.norm(), 1e-4);
    EXPECT_NEAR(eval.value, elbo_at(rp, model, Likelihood::categorical(), data, 1.0, points),
                1e-10 * std::abs(eval.value));
  }
}

TEST(ElboGrad, VanishesInExpectationAtPrior) {
  Dataset data;
  data.features.resize(0, 1);
  data.targets.resize(0);
  const LinearModel model{1, 1, true};
  const GaussianPosterior prior = GaussianPosterior::from_covariance(
      Vector::Zero(2), Matrix::Identity(2, 2), 1.0, Provenance::kManual);
  RngStream init(11);
  const RefinedPosterior rp(prior, with_zero_beta(init_near_identity(2, 1, prior, init)));
  const int seeds = 50;
  Matrix grads(seeds, rp.flow.num_parameters());
  for (int s = 0; s < seeds; ++s) {
    RngStream r(300 + s);
    grads.row(s) = elbo_grad(rp, model, Likelihood::gaussian(0.3), data, 1.0, 32, r).transpose();
  }
  const Vector mean = grads.colwise().mean();
  for (Eigen::Index j = 0; j < grads.cols(); ++j) {
    const double se =
        std::sqrt((grads.col(j).array() - mean[j]).square().sum() / (seeds - 1) / seeds);
    EXPECT_LE(std::abs(mean[j]), 3.0 * se + 1e-12) << "coordinate " << j;
  }
}

TEST(ElboGrad, VarianceHalvesWhenSamplesDouble) {
  const Conjugate c = make_conjugate(12);
  RngStream rng(13);
  const RefinedPosterior rp(c.posterior, random_stack(3, 1, rng));
  std::vector<double> log_n, log_var;
  for (int n_mc = 8; n_mc <= 512; n_mc *= 2) {
    const int repeats = 60;
    Matrix grads(repeats, rp.flow.num_parameters());
    for (int r = 0; r < repeats; ++r) {
      RngStream s(1000 * n_mc + r);
      grads.row(r) = elbo_grad(rp, c.model, c.lik, c.data, c.precision, n_mc, s).transpose();
    }
    const Matrix centered = grads.rowwise() - grads.colwise().mean();
    log_n.push_back(std::log(n_mc));
    log_var.push_back(std::log(centered.squaredNorm() / (repeats - 1)));
  }
  const double mx = std::accumulate(log_n.begin(), log_n.end(), 0.0) / log_n.size();
  const double my = std::accumulate(log_var.begin(), log_var.end(), 0.0) / log_var.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < log_n.size(); ++i) {
    sxy += (log_n[i] - mx) * (log_var[i] - my);
    sxx += (log_n[i] - mx) * (log_n[i] - mx);
  }
  EXPECT_NEAR(sxy / sxx, -1.0, 0.15);
}

TEST(ElboGrad, UnbiasedAgainstPreciseFiniteDifference) {
  const Conjugate c = make_conjugate(14, 20, 1, true);
  RngStream rng(15);
  const RefinedPosterior rp(c.posterior, random_stack(2, 1, rng));
  RngStream fixed_rng(16);
  const Matrix fixed = c.posterior.sample(200000, fixed_rng).draws;
  const Vector reference = finite_diff_grad(
      [&](const Vector& params) {
        RefinedPosterior moved = rp;
        moved.flow.set_parameters(params);
        return elbo_at(moved, c.model, c.lik, c.data, c.precision, fixed);
      },
      rp.flow.parameters(), 1e-5);
  const int seeds = 200;
  Matrix grads(seeds, rp.flow.num_parameters());
  for (int s = 0; s < seeds; ++s) {
    RngStream r(5000 + s);
    grads.row(s) = elbo_grad(rp, c.model, c.lik, c.data, c.precision, 32, r).transpose();
  }
  const Vector mean = grads.colwise().mean();
  for (Eigen::Index j = 0; j < grads.cols(); ++j) {
    const double se =
        std::sqrt((grads.col(j).array() - mean[j]).square().sum() / (seeds - 1) / seeds);
    // The reference itself carries MC error from 200000 draws (~0.03 se).
    EXPECT_LE(std::abs(mean[j] - reference[j]), 3.0 * se * 1.05) << "coordinate " << j;
  }
}

class RefineToy : public ::testing::Test {
 protected:
  void SetUp() override {
    RngStream rng(21);
    data = gen_toy_logreg(rng);
    const MapResult map = fit_map(model, lik, data, 1.0);
    base = laplace_posterior(map.theta, hessian_log_joint(model, lik, map.theta, data, 1.0), 1.0);
  }
  Dataset data;
  LinearModel model{2, 1, true};
  Likelihood lik = Likelihood::bernoulli();
  GaussianPosterior base;
};

TEST_F(RefineToy, ImprovesElbo) {
  RefineConfig config;
  config.flow_length = 5;
  config.epochs = 20;
  config.steps_per_epoch = 50;
  config.learning_rate = 1e-2;
  config.seed = 3;
  const auto [rp, trace] = refine(base, model, lik, data, 1.0, config);
  EXPECT_GE(trace.best_elbo, trace.initial_elbo + 0.1);
  EXPECT_EQ(trace.step_elbo.size(), 20u * 50u);
  EXPECT_EQ(trace.step_lr.size(), trace.step_elbo.size());
  EXPECT_EQ(trace.epoch_elbo.size(), 20u);
  EXPECT_EQ(trace.epoch_seconds.size(), 20u);
}

TEST_F(RefineToy, ZeroEpochsIsIdentity) {
  RefineConfig config;
  config.epochs = 0;
  const auto [rp, trace] = refine(base, model, lik, data, 1.0, config);
  RngStream a(4), b(4);
  const RefinedSamples refined = sample_refined(rp, 100, a);
  const SampleSet direct = base.sample(100, b);
  EXPECT_LT((refined.samples.draws - direct.draws).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(trace.best_epoch, -1);
  EXPECT_TRUE(trace.step_elbo.empty());
}

TEST_F(RefineToy, DeterministicAndFrozenBase) {
  RefineConfig config;
  config.epochs = 3;
  config.steps_per_epoch = 5;
  config.seed = 9;
  const GaussianPosterior before = base;
  const auto [rp1, trace1] = refine(base, model, lik, data, 1.0, config);
  const auto [rp2, trace2] = refine(base, model, lik, data, 1.0, config);
  EXPECT_EQ(trace1.step_elbo, trace2.step_elbo);
  EXPECT_EQ(trace1.epoch_elbo, trace2.epoch_elbo);
  EXPECT_TRUE((rp1.flow.parameters().array() == rp2.flow.parameters().array()).all());
  EXPECT_TRUE((base.mean.array() == before.mean.array()).all());
  EXPECT_TRUE((base.covariance.array() == before.covariance.array()).all());
  EXPECT_TRUE((rp1.base.covariance.array() == before.covariance.array()).all());
}

TEST_F(RefineToy, NeverWorseThanIdentity) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RefineConfig config;
    config.epochs = 4;
    config.steps_per_epoch = 10;
    config.learning_rate = 0.5;  // deliberately aggressive
    config.seed = seed;
    const auto [rp, trace] = refine(base, model, lik, data, 1.0, config);
    EXPECT_GE(trace.best_elbo, trace.initial_elbo);
  }
}

TEST_F(RefineToy, InvalidConfigRejected) {
  RefineConfig config;
  config.mc_samples = 0;
  EXPECT_THROW(refine(base, model, lik, data, 1.0, config), Error);
}

TEST(RefineConfig, StepsPerEpochDefault) {
  RefineConfig config;
  EXPECT_EQ(config.resolved_steps_per_epoch(50), 1);
  EXPECT_EQ(config.resolved_steps_per_epoch(8000), 63);
  config.steps_per_epoch = 7;
  EXPECT_EQ(config.resolved_steps_per_epoch(8000), 7);
}

TEST(Refine, ConjugateElboReachesEvidence) {
  const Conjugate c = make_conjugate(31);
  RefineConfig config;
  config.flow_length = 2;
  config.epochs = 20;
  config.steps_per_epoch = 10;
  const auto [rp, trace] = refine(c.posterior, c.model, c.lik, c.data, c.precision, config);
  RngStream rng(32);
  const double elbo = elbo_estimate(rp, c.model, c.lik, c.data, c.precision, 20000, rng);
  EXPECT_LT(std::abs(elbo - c.log_evidence), 0.05);
}

TEST(MeanfieldVb, RecoversDiagonalConjugatePosterior) {
  // Orthogonal design without bias gives a diagonal exact posterior.
  RngStream rng(41);
  const int n = 40;
  Matrix q = Eigen::HouseholderQR<Matrix>(rng.normal_matrix(n, 2)).householderQ() *
             Matrix::Identity(n, 2);
  Dataset data;
  data.features = q * Vector(Eigen::Vector2d(3.0, 1.5)).asDiagonal();
  data.targets = data.features * Vector(Eigen::Vector2d(0.7, -0.4)) + 0.5 * rng.normal_vector(n);
  const LinearModel model{2, 1, false};
  const Likelihood lik = Likelihood::gaussian(0.5);
  const double lambda = 1.0;
  const Matrix a = data.features.transpose() * data.features / 0.25 + lambda * Matrix::Identity(2, 2);
  const Matrix cov = a.inverse();
  const Vector mean = cov * data.features.transpose() * data.targets / 0.25;
  VbConfig config;
  config.seed = 2;
  const GaussianPosterior vb = meanfield_vb(model, lik, data, lambda, config);
  EXPECT_EQ(vb.provenance, Provenance::kVb);
  EXPECT_LT((vb.mean - mean).cwiseAbs().maxCoeff(), 1e-2);
  for (int j = 0; j < 2; ++j)
    EXPECT_LT(std::abs(vb.covariance(j, j) - cov(j, j)) / cov(j, j), 5e-2);
  EXPECT_EQ(vb.covariance(0, 1), 0.0);
}

TEST(MeanfieldVb, StrongPriorShrinksMean) {
  RngStream rng(42);
  Dataset data = gen_toy_logreg(rng);
  VbConfig config;
  config.steps = 200;
  const GaussianPosterior vb =
      meanfield_vb(LinearModel{2, 1, true}, Likelihood::bernoulli(), data, 1e4, config);
  EXPECT_LT(vb.mean.cwiseAbs().maxCoeff(), 0.05);
}

}  // namespace
}  // namespace lapref
