#pragma once

// Radial normalizing flows on top of a Gaussian base.
//
// A radial layer maps z to y = z + beta h(r) (z - z0), with r = |z - z0| and
// h(r) = 1 / (alpha + r). alpha = softplus(raw_alpha) and
// beta = -alpha + softplus(raw_beta), so beta > -alpha and every layer is
// invertible for any raw parameter values.

#include <vector>

#include "lapref/gaussian.hpp"

namespace lapref {

struct RadialLayer {
  Vector center;  // z0
  double raw_alpha = 0.0;
  double raw_beta = 0.0;

  Eigen::Index dim() const noexcept { return center.size(); }
  double alpha() const;
  double beta() const;

  // Layer with the given center, alpha and beta (beta > -alpha).
  static RadialLayer from_alpha_beta(Vector center, double alpha, double beta);
};

struct RadialFlowStack {
  std::vector<RadialLayer> layers;
  Eigen::Index dimension = 0;

  Eigen::Index dim() const noexcept { return dimension; }
  std::size_t length() const noexcept { return layers.size(); }

  // Number of raw parameters: length * (d + 2).
  Eigen::Index num_parameters() const;
  // Raw parameters per layer, [z0..., raw_alpha, raw_beta].
  Vector parameters() const;
  void set_parameters(const Vector& params);

  static RadialFlowStack identity(Eigen::Index d) { return {{}, d}; }
};

struct FlowOutput {
  Vector y;
  double log_det = 0.0;
};

// log|det J| = (d - 1) log(1 + beta h) + log(1 + beta alpha h^2).
FlowOutput radial_forward(const RadialLayer& layer, const Vector& z);
// Solves for the radius by bisection to 1e-12 along the direction y - z0.
Vector radial_inverse(const RadialLayer& layer, const Vector& y);

FlowOutput flow_forward(const RadialFlowStack& stack, const Vector& z);
// Applies the layers last to first.
Vector flow_inverse(const RadialFlowStack& stack, const Vector& y);

// Layer centers at base.mean + 0.1 L eps, alpha = 1, beta = 1e-3.
RadialFlowStack init_near_identity(Eigen::Index d, std::size_t length,
                                   const GaussianPosterior& base, RngStream& rng);

// Same stack with every beta set to zero, i.e. the identity map.
RadialFlowStack with_zero_beta(RadialFlowStack stack);

struct RefinedPosterior {
  GaussianPosterior base;
  RadialFlowStack flow;

  RefinedPosterior(GaussianPosterior base_in, RadialFlowStack flow_in);
  Eigen::Index dim() const noexcept { return base.dim(); }
};

// log q(F^-1(x)) - sum of layer log-dets at the pre-images.
double refined_log_density(const RefinedPosterior& rp, const Vector& theta);

struct RefinedSamples {
  SampleSet samples;
  Vector log_density;  // log q~ at each sample
};

// theta_s = F(z_s), z_s drawn from the base with the same stream as
// GaussianPosterior::sample, so an identity flow reproduces base samples.
RefinedSamples sample_refined(const RefinedPosterior& rp, Eigen::Index n,
                              RngStream& rng);

// Gradient of L = sum_s w . F(z_s) + sum_s log_det(z_s) with respect to the
// raw flow parameters, where `output_grads` row s holds dL/dF(z_s). Used by
// the ELBO gradient; laid out like RadialFlowStack::parameters().
Vector flow_backward(const RadialFlowStack& stack, const Matrix& base_points,
                     const Matrix& output_grads);

}  // namespace lapref
