#include "lapref/flows.hpp"

#include <cmath>

namespace lapref {

namespace {

constexpr double kInitBeta = 1e-3;
constexpr double kCenterSpread = 0.1;

void check_dim(Eigen::Index expected, Eigen::Index got, const char* what) {
  if (expected != got)
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": expected dimension " + std::to_string(expected) +
                    ", got " + std::to_string(got));
}

}  // namespace

double RadialLayer::alpha() const { return softplus(raw_alpha); }

double RadialLayer::beta() const { return -alpha() + softplus(raw_beta); }

RadialLayer RadialLayer::from_alpha_beta(Vector center, double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > -alpha))
    throw Error(ErrorCode::kInvalidArgument,
                "radial layer needs alpha > 0 and beta > -alpha");
  RadialLayer layer;
  layer.center = std::move(center);
  layer.raw_alpha = softplus_inverse(alpha);
  layer.raw_beta = softplus_inverse(alpha + beta);
  return layer;
}

Eigen::Index RadialFlowStack::num_parameters() const {
  return static_cast<Eigen::Index>(layers.size()) * (dimension + 2);
}

Vector RadialFlowStack::parameters() const {
  Vector p(num_parameters());
  Eigen::Index offset = 0;
  for (const auto& layer : layers) {
    p.segment(offset, dimension) = layer.center;
    p[offset + dimension] = layer.raw_alpha;
    p[offset + dimension + 1] = layer.raw_beta;
    offset += dimension + 2;
  }
  return p;
}

void RadialFlowStack::set_parameters(const Vector& params) {
  check_dim(num_parameters(), params.size(), "set_parameters");
  Eigen::Index offset = 0;
  for (auto& layer : layers) {
    layer.center = params.segment(offset, dimension);
    layer.raw_alpha = params[offset + dimension];
    layer.raw_beta = params[offset + dimension + 1];
    offset += dimension + 2;
  }
}

FlowOutput radial_forward(const RadialLayer& layer, const Vector& z) {
  check_dim(layer.dim(), z.size(), "radial_forward");
  const double alpha = layer.alpha();
  const double beta = layer.beta();
  const Vector diff = z - layer.center;
  const double r = diff.norm();
  const double h = 1.0 / (alpha + r);
  const double d = static_cast<double>(z.size());
  FlowOutput out;
  out.y = z + beta * h * diff;
  // At r = 0 this reduces to d log(1 + beta / alpha).
  out.log_det = (d - 1.0) * std::log1p(beta * h) + std::log1p(beta * alpha * h * h);
  return out;
}

Vector radial_inverse(const RadialLayer& layer, const Vector& y) {
  check_dim(layer.dim(), y.size(), "radial_inverse");
  const double alpha = layer.alpha();
  const double beta = layer.beta();
  const Vector diff = y - layer.center;
  const double rho = diff.norm();
  if (rho == 0.0) return layer.center;
  // r (1 + beta / (alpha + r)) = rho is strictly increasing in r.
  auto radius_image = [&](double r) { return r + beta * r / (alpha + r); };
  double lo = 0.0;
  double hi = rho + std::abs(beta);
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (radius_image(mid) < rho)
      lo = mid;
    else
      hi = mid;
  }
  const double r = 0.5 * (lo + hi);
  return layer.center + diff * (r / rho);
}

FlowOutput flow_forward(const RadialFlowStack& stack, const Vector& z) {
  check_dim(stack.dim(), z.size(), "flow_forward");
  FlowOutput out{z, 0.0};
  for (const auto& layer : stack.layers) {
    FlowOutput step = radial_forward(layer, out.y);
    out.y = std::move(step.y);
    out.log_det += step.log_det;
  }
  return out;
}

Vector flow_inverse(const RadialFlowStack& stack, const Vector& y) {
  check_dim(stack.dim(), y.size(), "flow_inverse");
  Vector x = y;
  for (auto it = stack.layers.rbegin(); it != stack.layers.rend(); ++it)
    x = radial_inverse(*it, x);
  return x;
}

RadialFlowStack init_near_identity(Eigen::Index d, std::size_t length,
                                   const GaussianPosterior& base, RngStream& rng) {
  if (length < 1)
    throw Error(ErrorCode::kInvalidArgument, "init_near_identity: length must be >= 1");
  check_dim(d, base.dim(), "init_near_identity");
  RadialFlowStack stack{{}, d};
  for (std::size_t l = 0; l < length; ++l) {
    const Vector eps = rng.normal_vector(d);
    Vector center = base.mean + kCenterSpread * (base.chol * eps);
    stack.layers.push_back(RadialLayer::from_alpha_beta(std::move(center), 1.0, kInitBeta));
  }
  return stack;
}

RadialFlowStack with_zero_beta(RadialFlowStack stack) {
  for (auto& layer : stack.layers) layer.raw_beta = softplus_inverse(layer.alpha());
  return stack;
}

RefinedPosterior::RefinedPosterior(GaussianPosterior base_in, RadialFlowStack flow_in)
    : base(std::move(base_in)), flow(std::move(flow_in)) {
  check_dim(base.dim(), flow.dim(), "RefinedPosterior");
}

double refined_log_density(const RefinedPosterior& rp, const Vector& theta) {
  check_dim(rp.dim(), theta.size(), "refined_log_density");
  Vector x = theta;
  double log_det = 0.0;
  for (auto it = rp.flow.layers.rbegin(); it != rp.flow.layers.rend(); ++it) {
    x = radial_inverse(*it, x);
    log_det += radial_forward(*it, x).log_det;
  }
  return rp.base.log_density(x) - log_det;
}

RefinedSamples sample_refined(const RefinedPosterior& rp, Eigen::Index n,
                              RngStream& rng) {
  RefinedSamples out;
  out.samples = rp.base.sample(n, rng);
  out.samples.provenance = Provenance::kRefined;
  out.log_density.resize(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const Vector z = out.samples.draws.row(s).transpose();
    const FlowOutput f = flow_forward(rp.flow, z);
    out.log_density[s] = rp.base.log_density(z) - f.log_det;
    out.samples.draws.row(s) = f.y.transpose();
  }
  return out;
}

Vector flow_backward(const RadialFlowStack& stack, const Matrix& base_points,
                     const Matrix& output_grads) {
  const Eigen::Index d = stack.dim();
  check_dim(d, base_points.cols(), "flow_backward");
  check_dim(base_points.rows(), output_grads.rows(), "flow_backward");
  check_dim(d, output_grads.cols(), "flow_backward");
  const std::size_t n_layers = stack.layers.size();
  const double dd = static_cast<double>(d);

  Vector grad = Vector::Zero(stack.num_parameters());
  std::vector<Vector> inputs(n_layers);
  for (Eigen::Index s = 0; s < base_points.rows(); ++s) {
    Vector x = base_points.row(s).transpose();
    for (std::size_t l = 0; l < n_layers; ++l) {
      inputs[l] = x;
      x = radial_forward(stack.layers[l], x).y;
    }
    Vector g = output_grads.row(s).transpose();
    for (std::size_t l = n_layers; l-- > 0;) {
      const RadialLayer& layer = stack.layers[l];
      const double alpha = layer.alpha();
      const double beta = layer.beta();
      const Vector v = inputs[l] - layer.center;
      const double r = v.norm();
      const double h = 1.0 / (alpha + r);
      const double a_term = 1.0 + beta * h;
      const double b_term = 1.0 + beta * alpha * h * h;

      // log-det partials
      const double dld_dh = (dd - 1.0) * beta / a_term + 2.0 * beta * alpha * h / b_term;
      const double dld_dbeta = (dd - 1.0) * h / a_term + alpha * h * h / b_term;
      const double dld_dalpha = beta * h * h / b_term - h * h * dld_dh;
      const double dld_dr = -h * h * dld_dh;

      const double vg = v.dot(g);
      const double g_alpha = -beta * h * h * vg + dld_dalpha;
      const double g_beta = h * vg + dld_dbeta;

      Vector g_z = (1.0 + beta * h) * g;
      Vector g_center = -beta * h * g;
      if (r > 0.0) {
        const double coef = beta * h * h * vg / r;
        const double radial = dld_dr / r;
        g_z += (radial - coef) * v;
        g_center += (coef - radial) * v;
      }

      const Eigen::Index offset = static_cast<Eigen::Index>(l) * (d + 2);
      grad.segment(offset, d) += g_center;
      grad[offset + d] += sigmoid(layer.raw_alpha) * (g_alpha - g_beta);
      grad[offset + d + 1] += sigmoid(layer.raw_beta) * g_beta;
      g = std::move(g_z);
    }
  }
  return grad;
}

}  // namespace lapref
