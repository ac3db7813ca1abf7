#include "lapref/models.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace lapref {

namespace {

[[noreturn]] void mismatch(const std::string& what) {
  throw Error(ErrorCode::kDimensionMismatch, what);
}

int expected_outputs(const Likelihood& lik, const Dataset& data) {
  switch (lik.kind) {
    case LikelihoodKind::kCategorical: return data.n_classes;
    case LikelihoodKind::kBernoulli: return 1;
    case LikelihoodKind::kGaussian: return 1;
  }
  return 0;
}

struct LayerView {
  Eigen::Index weight_offset;
  Eigen::Index bias_offset;
  int in;
  int out;
};

std::vector<LayerView> layer_views(const TinyMlp& net) {
  std::vector<LayerView> views;
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
    const int in = net.widths[l];
    const int out = net.widths[l + 1];
    views.push_back({offset, offset + static_cast<Eigen::Index>(in) * out, in, out});
    offset += static_cast<Eigen::Index>(in) * out + out;
  }
  return views;
}

using ConstRowMap = Eigen::Map<const RowMajorMatrix>;

ConstRowMap layer_weights(const LayerView& v, const Vector& theta) {
  return ConstRowMap(theta.data() + v.weight_offset, v.out, v.in);
}

Eigen::Map<const Vector> layer_bias(const LayerView& v, const Vector& theta) {
  return Eigen::Map<const Vector>(theta.data() + v.bias_offset, v.out);
}

// Forward pass over a batch, keeping every layer's activations.
std::vector<Matrix> mlp_activations(const TinyMlp& net, const Vector& theta,
                                    const Matrix& x) {
  const auto views = layer_views(net);
  std::vector<Matrix> acts;
  acts.reserve(views.size() + 1);
  acts.push_back(x);
  for (std::size_t l = 0; l < views.size(); ++l) {
    Matrix z = acts.back() * layer_weights(views[l], theta).transpose();
    z.rowwise() += layer_bias(views[l], theta).transpose();
    const bool hidden = l + 1 < views.size();
    if (hidden && net.activation == Activation::kTanh) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  return acts;
}

// Backpropagates output gradients G (N x K) to a parameter gradient.
Vector mlp_backprop(const TinyMlp& net, const Vector& theta,
                    const std::vector<Matrix>& acts, Matrix grad_out) {
  const auto views = layer_views(net);
  Vector grad = Vector::Zero(net.dim());
  for (std::size_t li = views.size(); li-- > 0;) {
    const LayerView& v = views[li];
    const Matrix& input = acts[li];
    Eigen::Map<RowMajorMatrix> gw(grad.data() + v.weight_offset, v.out, v.in);
    gw = grad_out.transpose() * input;
    grad.segment(v.bias_offset, v.out) = grad_out.colwise().sum().transpose();
    if (li > 0) {
      Matrix back = grad_out * layer_weights(v, theta);
      if (net.activation == Activation::kTanh)
        back.array() *= 1.0 - input.array().square();
      grad_out = std::move(back);
    }
  }
  return grad;
}

void check_theta(const Model& model, const Vector& theta) {
  if (theta.size() != model_dim(model))
    mismatch("parameter vector has length " + std::to_string(theta.size()) +
             ", model expects " + std::to_string(model_dim(model)));
  if (!theta.allFinite())
    throw Error(ErrorCode::kNonFiniteValue, "non-finite parameter vector");
}

}  // namespace

void Dataset::validate() const {
  const Eigen::Index n = features.rows();
  if (!features.allFinite())
    throw Error(ErrorCode::kNonFiniteValue, "dataset: non-finite feature");
  if (n_classes < 0) throw Error(ErrorCode::kInvalidArgument, "dataset: n_classes < 0");
  if (is_regression()) {
    if (targets.size() != n) mismatch("dataset: targets length != rows");
    if (!targets.allFinite())
      throw Error(ErrorCode::kNonFiniteValue, "dataset: non-finite target");
  } else {
    if (static_cast<Eigen::Index>(labels.size()) != n)
      mismatch("dataset: labels length != rows");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || labels[i] >= n_classes)
        throw Error(ErrorCode::kInvalidArgument,
                    "dataset: label out of range at row " + std::to_string(i));
  }
}

Dataset Dataset::subset(const std::vector<Eigen::Index>& rows) const {
  Dataset out;
  out.n_classes = n_classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  if (is_regression()) out.targets.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(r);
    if (is_regression())
      out.targets[static_cast<Eigen::Index>(i)] = targets[r];
    else
      out.labels.push_back(labels[static_cast<std::size_t>(r)]);
  }
  return out;
}

Eigen::Index TinyMlp::dim() const {
  Eigen::Index d = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    d += static_cast<Eigen::Index>(widths[l]) * widths[l + 1] + widths[l + 1];
  return d;
}

Eigen::Index model_dim(const Model& model) {
  return std::visit([](const auto& m) { return m.dim(); }, model);
}

int model_outputs(const Model& model) {
  if (const auto* lin = std::get_if<LinearModel>(&model)) return lin->n_outputs;
  return std::get<TinyMlp>(model).n_outputs();
}

int model_inputs(const Model& model) {
  if (const auto* lin = std::get_if<LinearModel>(&model)) return lin->n_features;
  return std::get<TinyMlp>(model).n_inputs();
}

Matrix augment_features(const LinearModel& model, const Matrix& x) {
  if (x.cols() != model.n_features) mismatch("linear model: feature count mismatch");
  if (!model.bias) return x;
  Matrix aug(x.rows(), x.cols() + 1);
  aug.leftCols(x.cols()) = x;
  aug.col(x.cols()).setOnes();
  return aug;
}

Matrix model_outputs(const Model& model, const Vector& theta, const Matrix& x) {
  check_theta(model, theta);
  if (x.cols() != model_inputs(model)) mismatch("model_outputs: input width mismatch");
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    ConstRowMap w(theta.data(), lin->n_outputs, lin->row_width());
    return augment_features(*lin, x) * w.transpose();
  }
  return mlp_activations(std::get<TinyMlp>(model), theta, x).back();
}

void check_compatible(const Model& model, const Likelihood& lik,
                      const Dataset& data) {
  if (data.features.cols() != model_inputs(model))
    mismatch("data has " + std::to_string(data.features.cols()) +
             " features, model expects " + std::to_string(model_inputs(model)));
  const bool regression = lik.kind == LikelihoodKind::kGaussian;
  if (regression != data.is_regression())
    throw Error(ErrorCode::kInvalidArgument,
                "likelihood kind does not match dataset type");
  if (lik.kind == LikelihoodKind::kGaussian && !(lik.noise_std > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "gaussian likelihood needs noise_std > 0");
  if (lik.kind == LikelihoodKind::kBernoulli && data.n_classes != 2)
    throw Error(ErrorCode::kInvalidArgument, "bernoulli likelihood needs 2 classes");
  if (model_outputs(model) != expected_outputs(lik, data))
    mismatch("model has " + std::to_string(model_outputs(model)) +
             " outputs, likelihood/data expect " +
             std::to_string(expected_outputs(lik, data)));
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Vector softmax(const Vector& logits) {
  Vector p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

Vector pointwise_log_likelihood(const Likelihood& lik, const Matrix& outputs,
                                const Dataset& data) {
  const Eigen::Index n = outputs.rows();
  Vector out(n);
  switch (lik.kind) {
    case LikelihoodKind::kCategorical: {
      const RowMajorMatrix rows = outputs;
      const Eigen::Index k = rows.cols();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double* f = rows.row(i).data();
        double m = f[0];
        for (Eigen::Index c = 1; c < k; ++c) m = std::max(m, f[c]);
        double z = 0.0;
        for (Eigen::Index c = 0; c < k; ++c) z += std::exp(f[c] - m);
        out[i] = f[data.labels[static_cast<std::size_t>(i)]] - (m + std::log(z));
      }
      break;
    }
    case LikelihoodKind::kBernoulli:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double f = outputs(i, 0);
        out[i] = data.labels[static_cast<std::size_t>(i)] == 1 ? -softplus(-f)
                                                               : -softplus(f);
      }
      break;
    case LikelihoodKind::kGaussian: {
      const double s = lik.noise_std;
      const double c = -std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double r = (data.targets[i] - outputs(i, 0)) / s;
        out[i] = c - 0.5 * r * r;
      }
      break;
    }
  }
  return out;
}

Matrix grad_outputs_log_likelihood(const Likelihood& lik, const Matrix& outputs,
                                   const Dataset& data) {
  const Eigen::Index n = outputs.rows();
  switch (lik.kind) {
    case LikelihoodKind::kCategorical: {
      Matrix g = -softmax_rows(outputs);
      for (Eigen::Index i = 0; i < n; ++i)
        g(i, data.labels[static_cast<std::size_t>(i)]) += 1.0;
      return g;
    }
    case LikelihoodKind::kBernoulli: {
      Matrix g(n, 1);
      for (Eigen::Index i = 0; i < n; ++i)
        g(i, 0) = data.labels[static_cast<std::size_t>(i)] - sigmoid(outputs(i, 0));
      return g;
    }
    case LikelihoodKind::kGaussian: {
      const double inv_var = 1.0 / (lik.noise_std * lik.noise_std);
      return ((data.targets - outputs.col(0)) * inv_var).eval();
    }
  }
  return {};
}

double log_likelihood(const Model& model, const Likelihood& lik,
                      const Vector& theta, const Dataset& data) {
  check_theta(model, theta);
  check_compatible(model, lik, data);
  if (data.size() == 0) return 0.0;
  return pairwise_sum(pointwise_log_likelihood(
      lik, model_outputs(model, theta, data.features), data));
}

Vector grad_log_likelihood(const Model& model, const Likelihood& lik,
                           const Vector& theta, const Dataset& data) {
  check_theta(model, theta);
  check_compatible(model, lik, data);
  if (data.size() == 0) return Vector::Zero(theta.size());
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    const Matrix xa = augment_features(*lin, data.features);
    ConstRowMap w(theta.data(), lin->n_outputs, lin->row_width());
    const Matrix g = grad_outputs_log_likelihood(lik, xa * w.transpose(), data);
    Vector grad(theta.size());
    Eigen::Map<RowMajorMatrix>(grad.data(), lin->n_outputs, lin->row_width()) =
        g.transpose() * xa;
    return grad;
  }
  return tiny_mlp_grad(std::get<TinyMlp>(model), lik, theta, data);
}

double log_prior(const Vector& theta, double precision) {
  if (!(precision > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "prior precision must be > 0");
  const double d = static_cast<double>(theta.size());
  const Vector sq = theta.cwiseAbs2();
  return 0.5 * d * std::log(precision / (2.0 * std::numbers::pi)) -
         0.5 * precision * pairwise_sum(sq);
}

Vector grad_log_prior(const Vector& theta, double precision) {
  if (!(precision > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "prior precision must be > 0");
  return -precision * theta;
}

double log_joint(const Model& model, const Likelihood& lik, const Vector& theta,
                 const Dataset& data, double precision) {
  return log_likelihood(model, lik, theta, data) + log_prior(theta, precision);
}

Vector grad_log_joint(const Model& model, const Likelihood& lik,
                      const Vector& theta, const Dataset& data, double precision) {
  return grad_log_likelihood(model, lik, theta, data) +
         grad_log_prior(theta, precision);
}

BatchJoint log_joint_batch(const Model& model, const Likelihood& lik,
                           const Matrix& thetas, const Dataset& data,
                           double precision, bool with_gradients) {
  const Eigen::Index s_count = thetas.rows();
  const Eigen::Index d = model_dim(model);
  if (thetas.cols() != d) mismatch("log_joint_batch: parameter width mismatch");
  BatchJoint out{Vector(s_count), Matrix(with_gradients ? s_count : 0, d)};
  const auto* lin = std::get_if<LinearModel>(&model);
  if (lin == nullptr || data.size() == 0 || s_count == 0) {
    for (Eigen::Index s = 0; s < s_count; ++s) {
      const Vector theta = thetas.row(s).transpose();
      out.values[s] = log_joint(model, lik, theta, data, precision);
      if (with_gradients)
        out.gradients.row(s) =
            grad_log_joint(model, lik, theta, data, precision).transpose();
    }
    return out;
  }
  check_compatible(model, lik, data);
  if (!thetas.allFinite())
    throw Error(ErrorCode::kNonFiniteValue, "non-finite parameter vector");

  const Eigen::Index k = lin->n_outputs;
  const Eigen::Index width = lin->row_width();
  const Eigen::Index n = data.size();
  // Row s*K + c holds output c of sample s; the class-major parameter layout
  // makes this a plain reshape.
  RowMajorMatrix stacked(s_count * k, width);
  for (Eigen::Index s = 0; s < s_count; ++s) {
    const Vector theta = thetas.row(s).transpose();
    stacked.middleRows(s * k, k) = ConstRowMap(theta.data(), k, width);
  }
  const Matrix xa = augment_features(*lin, data.features);

  if (lik.kind == LikelihoodKind::kCategorical) {
    // (S K) x N: the K logits of sample s at point i are contiguous.
    Matrix logits = stacked * xa.transpose();
    RowMajorMatrix pointwise(s_count, n);
    // Shift each group by its max, exponentiate in one vectorized pass, then
    // normalize; the shifted label logit gives the log-likelihood.
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto y = static_cast<Eigen::Index>(data.labels[static_cast<std::size_t>(i)]);
      double* col = logits.col(i).data();
      for (Eigen::Index s = 0; s < s_count; ++s) {
        double* f = col + s * k;
        double m = f[0];
        for (Eigen::Index c = 1; c < k; ++c) m = std::max(m, f[c]);
        for (Eigen::Index c = 0; c < k; ++c) f[c] -= m;
        pointwise(s, i) = f[y];
      }
    }
    logits = logits.array().exp();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto y = static_cast<Eigen::Index>(data.labels[static_cast<std::size_t>(i)]);
      double* col = logits.col(i).data();
      for (Eigen::Index s = 0; s < s_count; ++s) {
        double* f = col + s * k;
        double z = 0.0;
        for (Eigen::Index c = 0; c < k; ++c) z += f[c];
        pointwise(s, i) -= std::log(z);
        // Overwrite with d log p / d f = onehot - softmax.
        const double inv_z = 1.0 / z;
        for (Eigen::Index c = 0; c < k; ++c) f[c] *= -inv_z;
        f[y] += 1.0;
      }
    }
    for (Eigen::Index s = 0; s < s_count; ++s)
      out.values[s] = pairwise_sum(pointwise.row(s).transpose()) +
                      log_prior(thetas.row(s).transpose(), precision);
    if (!with_gradients) return out;
    const RowMajorMatrix param_grads = logits * xa;  // (S K) x width
    for (Eigen::Index s = 0; s < s_count; ++s) {
      RowMajorMatrix g = param_grads.middleRows(s * k, k);
      out.gradients.row(s) = Eigen::Map<const Vector>(g.data(), k * width).transpose() -
                             precision * thetas.row(s);
    }
    return out;
  }

  const Matrix all_outputs = xa * stacked.transpose();  // N x (S K)
  Matrix all_grads(with_gradients ? n : 0, s_count * k);
  for (Eigen::Index s = 0; s < s_count; ++s) {
    const Matrix block = all_outputs.middleCols(s * k, k);
    out.values[s] = pairwise_sum(pointwise_log_likelihood(lik, block, data)) +
                    log_prior(thetas.row(s).transpose(), precision);
    if (with_gradients)
      all_grads.middleCols(s * k, k) = grad_outputs_log_likelihood(lik, block, data);
  }
  if (!with_gradients) return out;
  const Matrix param_grads = all_grads.transpose() * xa;  // (S K) x width
  for (Eigen::Index s = 0; s < s_count; ++s) {
    for (Eigen::Index c = 0; c < k; ++c)
      out.gradients.row(s).segment(c * width, width) = param_grads.row(s * k + c);
    out.gradients.row(s) -= precision * thetas.row(s);
  }
  return out;
}

Vector tiny_mlp_forward(const TinyMlp& net, const Vector& theta, const Vector& x) {
  const Model model = net;
  return model_outputs(model, theta, x.transpose()).row(0).transpose();
}

Vector tiny_mlp_grad(const TinyMlp& net, const Likelihood& lik,
                     const Vector& theta, const Dataset& data) {
  const Model model = net;
  check_theta(model, theta);
  check_compatible(model, lik, data);
  if (data.size() == 0) return Vector::Zero(theta.size());
  const auto acts = mlp_activations(net, theta, data.features);
  return mlp_backprop(net, theta, acts,
                      grad_outputs_log_likelihood(lik, acts.back(), data));
}

Matrix output_jacobian(const Model& model, const Vector& theta, const Vector& x) {
  check_theta(model, theta);
  if (x.size() != model_inputs(model)) mismatch("output_jacobian: input width mismatch");
  const int k = model_outputs(model);
  Matrix jac = Matrix::Zero(k, theta.size());
  if (const auto* lin = std::get_if<LinearModel>(&model)) {
    const Matrix xa = augment_features(*lin, x.transpose());
    for (int c = 0; c < k; ++c)
      jac.row(c).segment(c * lin->row_width(), lin->row_width()) = xa.row(0);
    return jac;
  }
  const auto& net = std::get<TinyMlp>(model);
  const auto acts = mlp_activations(net, theta, x.transpose());
  for (int c = 0; c < k; ++c) {
    Matrix unit = Matrix::Zero(1, k);
    unit(0, c) = 1.0;
    jac.row(c) = mlp_backprop(net, theta, acts, unit).transpose();
  }
  return jac;
}

}  // namespace lapref
