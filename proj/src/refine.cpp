#include "lapref/refine.hpp"

#include <chrono>
#include <cmath>

namespace lapref {

namespace {

Matrix push_forward(const RadialFlowStack& stack, const Matrix& base_points,
                    Vector& log_dets) {
  Matrix out(base_points.rows(), base_points.cols());
  log_dets.resize(base_points.rows());
  for (Eigen::Index s = 0; s < base_points.rows(); ++s) {
    const FlowOutput f = flow_forward(stack, base_points.row(s).transpose());
    out.row(s) = f.y.transpose();
    log_dets[s] = f.log_det;
  }
  return out;
}

Matrix draw_base_points(const GaussianPosterior& base, Eigen::Index n, RngStream& rng) {
  return base.sample(n, rng).draws;
}

}  // namespace

void RefineConfig::validate() const {
  if (epochs < 0 || !(learning_rate > 0.0) || mc_samples < 1 || flow_length < 1 ||
      steps_per_epoch < 0 || eval_samples < 1)
    throw Error(ErrorCode::kInvalidArgument, "refine: invalid config");
}

int RefineConfig::resolved_steps_per_epoch(Eigen::Index n_data) const {
  if (steps_per_epoch > 0) return steps_per_epoch;
  return static_cast<int>(std::max<Eigen::Index>(1, (n_data + 127) / 128));
}

double elbo_at(const RefinedPosterior& rp, const Model& model, const Likelihood& lik,
               const Dataset& data, double precision, const Matrix& base_points) {
  if (base_points.rows() < 1)
    throw Error(ErrorCode::kInvalidArgument, "elbo: need at least one sample");
  Vector log_dets;
  const Matrix thetas = push_forward(rp.flow, base_points, log_dets);
  const Vector terms =
      log_joint_batch(model, lik, thetas, data, precision, false).values + log_dets;
  const double value = pairwise_mean(terms) + rp.base.entropy();
  if (!std::isfinite(value))
    throw Error(ErrorCode::kNonFiniteElbo, "elbo: non-finite estimate");
  return value;
}

ElboEval elbo_value_and_grad(const RefinedPosterior& rp, const Model& model,
                             const Likelihood& lik, const Dataset& data,
                             double precision, const Matrix& base_points) {
  const Eigen::Index n = base_points.rows();
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "elbo: need at least one sample");
  Vector log_dets;
  const Matrix thetas = push_forward(rp.flow, base_points, log_dets);
  const BatchJoint joint = log_joint_batch(model, lik, thetas, data, precision);
  ElboEval out;
  const Vector terms = joint.values + log_dets;
  out.value = pairwise_mean(terms) + rp.base.entropy();
  if (!std::isfinite(out.value))
    throw Error(ErrorCode::kNonFiniteElbo, "elbo: non-finite estimate");
  out.grad = flow_backward(rp.flow, base_points, joint.gradients) /
             static_cast<double>(n);
  if (!out.grad.allFinite())
    throw Error(ErrorCode::kNonFiniteGradient, "elbo: non-finite gradient");
  return out;
}

double elbo_estimate(const RefinedPosterior& rp, const Model& model,
                     const Likelihood& lik, const Dataset& data, double precision,
                     int n_mc, RngStream& rng) {
  if (n_mc < 1) throw Error(ErrorCode::kInvalidArgument, "elbo: n_mc must be >= 1");
  return elbo_at(rp, model, lik, data, precision, draw_base_points(rp.base, n_mc, rng));
}

Vector elbo_grad(const RefinedPosterior& rp, const Model& model, const Likelihood& lik,
                 const Dataset& data, double precision, int n_mc, RngStream& rng) {
  if (n_mc < 1) throw Error(ErrorCode::kInvalidArgument, "elbo: n_mc must be >= 1");
  return elbo_value_and_grad(rp, model, lik, data, precision,
                             draw_base_points(rp.base, n_mc, rng))
      .grad;
}

std::pair<RefinedPosterior, ElboTrace> refine(const GaussianPosterior& base,
                                              const Model& model, const Likelihood& lik,
                                              const Dataset& data, double precision,
                                              const RefineConfig& config) {
  config.validate();
  if (base.dim() != model_dim(model))
    throw Error(ErrorCode::kDimensionMismatch, "refine: base does not match model");
  check_compatible(model, lik, data);

  const RngStream root(config.seed, 0x726566);
  RngStream init_rng = root.split(1);
  RngStream eval_rng = root.split(2);
  RngStream train_rng = root.split(3);

  RadialFlowStack stack = init_near_identity(
      base.dim(), static_cast<std::size_t>(config.flow_length), base, init_rng);
  const Matrix eval_points = draw_base_points(base, config.eval_samples, eval_rng);

  ElboTrace trace;
  trace.steps_per_epoch = config.resolved_steps_per_epoch(data.size());
  RefinedPosterior best(base, with_zero_beta(stack));
  trace.initial_elbo = elbo_at(best, model, lik, data, precision, eval_points);
  trace.best_elbo = trace.initial_elbo;
  if (config.epochs == 0) return {std::move(best), std::move(trace)};

  RefinedPosterior current(base, stack);
  Vector params = stack.parameters();
  AdamState adam = AdamState::zeros(params.size(), config.learning_rate);
  const std::int64_t total_steps =
      static_cast<std::int64_t>(config.epochs) * trace.steps_per_epoch;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < trace.steps_per_epoch; ++i, ++step) {
      const Matrix points = draw_base_points(base, config.mc_samples, train_rng);
      ElboEval eval;
      try {
        eval = elbo_value_and_grad(current, model, lik, data, precision, points);
      } catch (const Error& e) {
        throw Error(ErrorCode::kDiverged, std::string("refine: ") + e.what());
      }
      const double lr = cosine_lr(step, total_steps, config.learning_rate);
      trace.step_elbo.push_back(eval.value);
      trace.step_lr.push_back(lr);
      if (lr > 0.0) adam_step(adam, params, -eval.grad, lr);
      current.flow.set_parameters(params);
    }
    double epoch_elbo;
    try {
      epoch_elbo = elbo_at(current, model, lik, data, precision, eval_points);
    } catch (const Error& e) {
      throw Error(ErrorCode::kDiverged, std::string("refine: ") + e.what());
    }
    trace.epoch_elbo.push_back(epoch_elbo);
    trace.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (epoch_elbo > trace.best_elbo) {
      trace.best_elbo = epoch_elbo;
      trace.best_epoch = epoch;
      best.flow = current.flow;
    }
  }
  return {std::move(best), std::move(trace)};
}

GaussianPosterior meanfield_vb(const Model& model, const Likelihood& lik,
                               const Dataset& data, double precision,
                               const VbConfig& config) {
  if (config.steps < 0 || !(config.learning_rate > 0.0) || config.mc_samples < 1)
    throw Error(ErrorCode::kInvalidArgument, "meanfield_vb: invalid config");
  const MapResult map = fit_map(model, lik, data, precision, config.map);
  const Eigen::Index d = map.theta.size();
  const Vector diag_precision =
      hessian_log_joint(model, lik, map.theta, data, precision).diagonal();

  // params = [mean, log std]
  Vector params(2 * d);
  params.head(d) = map.theta;
  params.tail(d) = -0.5 * diag_precision.array().max(1e-12).log();

  RngStream rng(config.seed, 0x7662);
  AdamState adam = AdamState::zeros(params.size(), config.learning_rate);
  const double n_mc = static_cast<double>(config.mc_samples);
  for (int step = 0; step < config.steps; ++step) {
    const Vector mean = params.head(d);
    const Vector std_dev = params.tail(d).array().exp();
    const Matrix eps = rng.normal_matrix(config.mc_samples, d);
    Matrix thetas = eps * std_dev.asDiagonal();
    thetas.rowwise() += mean.transpose();
    const BatchJoint joint = log_joint_batch(model, lik, thetas, data, precision);
    if (!joint.values.allFinite() || !joint.gradients.allFinite())
      throw Error(ErrorCode::kDiverged, "meanfield_vb: non-finite objective");
    Vector grad(2 * d);
    grad.head(d) = joint.gradients.colwise().sum().transpose() / n_mc;
    grad.tail(d) = (joint.gradients.cwiseProduct(eps).colwise().sum().transpose() / n_mc)
                       .cwiseProduct(std_dev)
                       .array() +
                   1.0;
    const double lr = cosine_lr(step, config.steps, config.learning_rate);
    if (lr > 0.0) adam_step(adam, params, -grad, lr);
    if (!params.allFinite())
      throw Error(ErrorCode::kDiverged, "meanfield_vb: parameters became non-finite");
  }
  const Vector variance = (2.0 * params.tail(d).array()).exp();
  return GaussianPosterior::from_covariance(params.head(d), variance.asDiagonal(),
                                            precision, Provenance::kVb);
}

}  // namespace lapref
