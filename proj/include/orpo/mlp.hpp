#pragma once

#include "orpo/numkit.hpp"

#include <functional>
#include <string>
#include <vector>

namespace orpo {

enum class Activation { relu, tanh };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

// Same shape as the network's parameters.
using MlpGradient = std::vector<DenseLayer>;

// Intermediate values of one batched forward pass, kept for backprop.
struct MlpCache {
  std::vector<Matrix> inputs;  // inputs[l] is the B x in_l input of layer l
  std::vector<Matrix> pre;     // pre-activations of hidden layers
};

// Feed-forward network with a linear output layer. Batches are B x features,
// one sample per row.
class MlpNetwork {
 public:
  MlpNetwork() = default;
  // Uniform ±1/√fan_in init; the last layer is additionally scaled by
  // final_scale.
  MlpNetwork(const std::vector<int>& sizes, Rng& rng, Activation hidden = Activation::relu,
             double final_scale = 1.0);

  int input_size() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_size() const { return static_cast<int>(layers_.back().weight.rows()); }
  std::vector<int> sizes() const;
  Activation activation() const { return activation_; }
  std::size_t parameter_count() const;
  bool empty() const { return layers_.empty(); }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Matrix forward(const Matrix& inputs, MlpCache* cache = nullptr) const;

  // Propagates dL/dOutput back through a cached pass. Parameter gradients are
  // accumulated into *grads when non-null. Returns dL/dInput.
  Matrix backward(const MlpCache& cache, const Matrix& output_grad, MlpGradient* grads) const;

  MlpGradient zero_gradient() const;
  // Flat views over all parameters in layer order (weights row-major, then bias).
  std::vector<double*> parameter_pointers();
  Vector flat_parameters() const;

 private:
  std::vector<DenseLayer> layers_;
  Activation activation_ = Activation::relu;
};

Matrix mlp_apply(const MlpNetwork& net, const Matrix& inputs);

// target ← τ·online + (1 − τ)·target
void soft_update(MlpNetwork& target, const MlpNetwork& online, double tau);

Vector flatten(const MlpGradient& grads);
bool all_finite(const MlpGradient& grads);
void check_finite(const MlpGradient& grads, const std::string& context);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L2 penalty ½·wd·‖W‖² on weight matrices (not biases), added to the loss
  // gradient before the moment updates.
  double weight_decay = 0.0;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(const MlpNetwork& net, AdamConfig config);

  void step(MlpNetwork& net, const MlpGradient& grads);

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  const MlpGradient& first_moment() const { return m_; }
  const MlpGradient& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  MlpGradient m_, v_;
};

// Adam on a single scalar (used for the entropy temperature).
class ScalarAdam {
 public:
  explicit ScalarAdam(AdamConfig config = {}) : config_(config) {}
  void step(double& value, double grad);

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  double m_ = 0.0, v_ = 0.0;
};

// Smooth bound of raw into (lo, hi): hi − softplus(hi − x), then lo + softplus(· − lo).
double soft_clamp(double raw, double lo, double hi);
double soft_clamp_derivative(double raw, double lo, double hi);
double softplus(double x);
double sigmoid(double x);

inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;

// Loss on a network's output. evaluate() returns the scalar loss and, when
// grad is non-null, writes dL/dOutput.
struct SquaredErrorLoss {
  Matrix targets;
  // mean over rows of ‖out − target‖²
  double evaluate(const Matrix& outputs, Matrix* grad) const;
};

// Outputs are [mean | raw log-std] of a diagonal Gaussian over the targets.
// Loss is the batch mean of ½[(t − μ)ᵀΣ⁻¹(t − μ) + log det Σ].
struct GaussianNllLoss {
  Matrix targets;
  double log_std_min = kLogStdMin;
  double log_std_max = kLogStdMax;
  double evaluate(const Matrix& outputs, Matrix* grad) const;
};

template <typename Loss>
double mlp_train_step(MlpNetwork& net, AdamState& adam, const Loss& loss, const Matrix& inputs) {
  if (inputs.rows() == 0) throw ValidationError("mlp_train_step: empty batch");
  MlpCache cache;
  const Matrix out = net.forward(inputs, &cache);
  Matrix out_grad;
  const double value = loss.evaluate(out, &out_grad);
  MlpGradient grads = net.zero_gradient();
  net.backward(cache, out_grad, &grads);
  check_finite(grads, "mlp_train_step");
  adam.step(net, grads);
  return value;
}

struct GradCheckOptions {
  double epsilon = 1e-5;
  std::size_t min_coordinates = 200;
  // Denominator floor for the relative error, so coordinates whose true
  // gradient is at round-off level do not dominate.
  double denominator_floor = 1e-6;
};

// Central finite differences against an analytic gradient over a random
// subsample of coordinates. Coordinates whose stencil straddles a kink (the
// estimates at ε and ε/2 disagree) are skipped and replaced. Returns the max
// relative error; 0 when every compared gradient is exactly zero.
double grad_check(const std::vector<double*>& params, const Vector& analytic,
                  const std::function<double()>& loss, Rng& rng,
                  const GradCheckOptions& options = {});

template <typename Loss>
double grad_check(MlpNetwork& net, const Loss& loss, const Matrix& inputs, Rng& rng,
                  const GradCheckOptions& options = {}) {
  MlpCache cache;
  const Matrix out = net.forward(inputs, &cache);
  Matrix out_grad;
  loss.evaluate(out, &out_grad);
  MlpGradient grads = net.zero_gradient();
  net.backward(cache, out_grad, &grads);
  return grad_check(net.parameter_pointers(), flatten(grads),
                    [&] { return loss.evaluate(net.forward(inputs), nullptr); }, rng, options);
}

}  // namespace orpo
