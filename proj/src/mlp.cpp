#include "orpo/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace orpo {

MlpNetwork::MlpNetwork(const std::vector<int>& sizes, Rng& rng, Activation hidden,
                       double final_scale)
    : activation_(hidden) {
  if (sizes.size() < 2) throw ValidationError("MlpNetwork: need at least input and output sizes");
  for (int s : sizes)
    if (s <= 0) throw ValidationError("MlpNetwork: layer sizes must be positive");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l], out = sizes[l + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    if (l + 2 == sizes.size()) bound *= final_scale;
    DenseLayer layer{Matrix(out, in), Vector(out)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
      layer.weight.data()[i] = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = rng.uniform(-bound, bound);
    layers_.push_back(std::move(layer));
  }
}

std::vector<int> MlpNetwork::sizes() const {
  std::vector<int> out;
  if (layers_.empty()) return out;
  out.push_back(input_size());
  for (const auto& l : layers_) out.push_back(static_cast<int>(l.weight.rows()));
  return out;
}

std::size_t MlpNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

namespace {

void activate(Matrix& z, Activation act) {
  if (act == Activation::relu)
    z = z.cwiseMax(0.0);
  else
    z = z.array().tanh().matrix();
}

// dL/dz given dL/da and the pre-activation z.
void activate_backward(Matrix& grad, const Matrix& z, Activation act) {
  if (act == Activation::relu) {
    grad = (z.array() > 0.0).select(grad, 0.0);
  } else {
    const Eigen::ArrayXXd t = z.array().tanh();
    grad.array() *= 1.0 - t.square();
  }
}

}  // namespace

Matrix MlpNetwork::forward(const Matrix& inputs, MlpCache* cache) const {
  if (layers_.empty()) throw ValidationError("MlpNetwork::forward: network is empty");
  if (inputs.cols() != input_size())
    throw ValidationError("MlpNetwork::forward: input width " + std::to_string(inputs.cols()) +
                          " != " + std::to_string(input_size()));
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix a = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Matrix z = a * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (cache) cache->inputs.push_back(std::move(a));
    if (l + 1 == layers_.size()) return z;
    if (cache) cache->pre.push_back(z);
    activate(z, activation_);
    a = std::move(z);
  }
  return a;
}

Matrix MlpNetwork::backward(const MlpCache& cache, const Matrix& output_grad,
                            MlpGradient* grads) const {
  if (cache.inputs.size() != layers_.size())
    throw ValidationError("MlpNetwork::backward: cache does not match network");
  Matrix g = output_grad;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    if (grads) {
      (*grads)[l].weight.noalias() += g.transpose() * cache.inputs[l];
      (*grads)[l].bias += g.colwise().sum().transpose();
    }
    Matrix next = g * layer.weight;
    if (l > 0) activate_backward(next, cache.pre[l - 1], activation_);
    g = std::move(next);
  }
  return g;
}

MlpGradient MlpNetwork::zero_gradient() const {
  MlpGradient out;
  out.reserve(layers_.size());
  for (const auto& l : layers_)
    out.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return out;
}

std::vector<double*> MlpNetwork::parameter_pointers() {
  std::vector<double*> out;
  out.reserve(parameter_count());
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out.push_back(&l.weight(r, c));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out.push_back(&l.bias[i]);
  }
  return out;
}

Vector MlpNetwork::flat_parameters() const { return flatten(layers_); }

Matrix mlp_apply(const MlpNetwork& net, const Matrix& inputs) { return net.forward(inputs); }

void soft_update(MlpNetwork& target, const MlpNetwork& online, double tau) {
  auto& t = target.layers();
  const auto& o = online.layers();
  if (t.size() != o.size()) throw ValidationError("soft_update: architecture mismatch");
  for (std::size_t l = 0; l < t.size(); ++l) {
    if (tau == 1.0) {
      t[l] = o[l];
      continue;
    }
    t[l].weight = tau * o[l].weight + (1.0 - tau) * t[l].weight;
    t[l].bias = tau * o[l].bias + (1.0 - tau) * t[l].bias;
  }
}

Vector flatten(const MlpGradient& grads) {
  std::size_t n = 0;
  for (const auto& l : grads) n += l.weight.size() + l.bias.size();
  Vector out(n);
  std::size_t k = 0;
  for (const auto& l : grads) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out[k++] = l.weight(r, c);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out[k++] = l.bias[i];
  }
  return out;
}

bool all_finite(const MlpGradient& grads) {
  return std::all_of(grads.begin(), grads.end(), [](const DenseLayer& l) {
    return l.weight.allFinite() && l.bias.allFinite();
  });
}

void check_finite(const MlpGradient& grads, const std::string& context) {
  if (!all_finite(grads)) throw NumericalError(context + ": non-finite gradient");
}

AdamState::AdamState(const MlpNetwork& net, AdamConfig config)
    : config_(config), m_(net.zero_gradient()), v_(net.zero_gradient()) {}

void AdamState::step(MlpNetwork& net, const MlpGradient& grads) {
  auto& layers = net.layers();
  if (grads.size() != layers.size() || m_.size() != layers.size())
    throw ValidationError("AdamState::step: shape mismatch");
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = config_.learning_rate;
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.eps);
  };
  const double wd = config_.weight_decay;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (wd > 0.0) {
      const Matrix g = grads[l].weight + wd * layers[l].weight;
      update(layers[l].weight, m_[l].weight, v_[l].weight, g);
    } else {
      update(layers[l].weight, m_[l].weight, v_[l].weight, grads[l].weight);
    }
    update(layers[l].bias, m_[l].bias, v_[l].bias, grads[l].bias);
  }
}

void ScalarAdam::step(double& value, double grad) {
  ++steps_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad * grad;
  const double mh = m_ / (1.0 - std::pow(config_.beta1, static_cast<double>(steps_)));
  const double vh = v_ / (1.0 - std::pow(config_.beta2, static_cast<double>(steps_)));
  value -= config_.learning_rate * mh / (std::sqrt(vh) + config_.eps);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double soft_clamp(double raw, double lo, double hi) {
  const double upper = hi - softplus(hi - raw);
  // The outer softplus can overshoot hi by about exp(lo − hi).
  return std::min(lo + softplus(upper - lo), hi);
}

double soft_clamp_derivative(double raw, double lo, double hi) {
  const double upper = hi - softplus(hi - raw);
  return sigmoid(hi - raw) * sigmoid(upper - lo);
}

double SquaredErrorLoss::evaluate(const Matrix& outputs, Matrix* grad) const {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols())
    throw ValidationError("SquaredErrorLoss: shape mismatch");
  const double n = static_cast<double>(outputs.rows());
  const Matrix diff = outputs - targets;
  if (grad) *grad = (2.0 / n) * diff;
  return diff.squaredNorm() / n;
}

double GaussianNllLoss::evaluate(const Matrix& outputs, Matrix* grad) const {
  const Eigen::Index k = targets.cols();
  if (outputs.cols() != 2 * k || outputs.rows() != targets.rows())
    throw ValidationError("GaussianNllLoss: outputs must be [mean | log-std] of target width");
  const double n = static_cast<double>(outputs.rows());
  if (grad) grad->resize(outputs.rows(), outputs.cols());
  double total = 0.0;
  for (Eigen::Index b = 0; b < outputs.rows(); ++b) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const double mu = outputs(b, j);
      const double raw = outputs(b, k + j);
      const double log_std = soft_clamp(raw, log_std_min, log_std_max);
      const double inv_var = std::exp(-2.0 * log_std);
      const double diff = targets(b, j) - mu;
      total += 0.5 * (diff * diff * inv_var + 2.0 * log_std);
      if (grad) {
        (*grad)(b, j) = -diff * inv_var / n;
        const double dlog = -diff * diff * inv_var + 1.0;
        (*grad)(b, k + j) = dlog * soft_clamp_derivative(raw, log_std_min, log_std_max) / n;
      }
    }
  }
  return total / n;
}

double grad_check(const std::vector<double*>& params, const Vector& analytic,
                  const std::function<double()>& loss, Rng& rng, const GradCheckOptions& options) {
  if (static_cast<std::size_t>(analytic.size()) != params.size())
    throw ValidationError("grad_check: gradient size does not match parameter count");
  const double eps = options.epsilon;
  if (eps < 1e-6 || eps > 1e-4) throw ValidationError("grad_check: epsilon outside [1e-6, 1e-4]");

  std::vector<std::size_t> order(params.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  auto central = [&](double* p, double h) {
    const double saved = *p;
    *p = saved + h;
    const double up = loss();
    *p = saved - h;
    const double down = loss();
    *p = saved;
    return (up - down) / (2.0 * h);
  };

  const std::size_t want = std::min(options.min_coordinates, params.size());
  std::size_t checked = 0;
  double worst = 0.0;
  for (std::size_t idx : order) {
    if (checked >= want) break;
    double* p = params[idx];
    const double d1 = central(p, eps);
    const double d2 = central(p, 0.5 * eps);
    const double scale = std::max({std::abs(d1), std::abs(d2), options.denominator_floor});
    // Smooth stencils agree to truncation and round-off (about 1e-8 here);
    // anything larger means one of them crossed a kink.
    if (std::abs(d1 - d2) > 1e-6 * scale + 1e-9) continue;
    const double a = analytic[static_cast<Eigen::Index>(idx)];
    const double denom = std::max({std::abs(a), std::abs(d1), options.denominator_floor});
    worst = std::max(worst, std::abs(a - d1) / denom);
    ++checked;
  }
  if (2 * checked < want) throw NumericalError("grad_check: too many coordinates sit on kinks");
  return worst;
}

}  // namespace orpo
