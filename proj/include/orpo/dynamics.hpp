#pragma once

#include "orpo/envs.hpp"
#include "orpo/mlp.hpp"
#include "orpo/reward_shaper.hpp"

#include <filesystem>
#include <functional>
#include <vector>

namespace orpo {

// Batched model transition with the uncertainty of each (s, a) input.
struct ModelStep {
  Matrix next_states;  // B x ds
  Vector rewards;      // B
  Vector uncertainty;  // B
};

// Anything rollouts can step through: the learned ensemble, or stubs in tests.
class DynamicsModel {
 public:
  virtual ~DynamicsModel() = default;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual ModelStep step(const Matrix& states, const Matrix& actions, UncertaintyHeuristic heuristic,
                         Rng& rng) const = 0;
  virtual Vector uncertainty(const Matrix& states, const Matrix& actions,
                             UncertaintyHeuristic heuristic) const = 0;
  // States in the model's normalized coordinates (used by the rollout box).
  virtual Matrix normalize_states(const Matrix& states) const { return states; }
};

struct Normalizer {
  Vector mean;
  Vector std;

  // Per-column statistics; std is floored at min_std.
  static Normalizer fit(const Matrix& data, double min_std = 1e-6);
  Matrix apply(const Matrix& x) const;
  Matrix invert(const Matrix& z) const;
};

struct DynamicsConfig {
  int ensemble_size = 7;
  std::vector<int> hidden = {128, 128};
  int max_epochs = 100;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double holdout_fraction = 0.1;
  int patience = 5;
  // Step with the deterministic ensemble-mean model instead of sampling a
  // uniformly chosen member's Gaussian.
  bool sample_mean_model = false;
  // Replace the model's reward head with the environment's known reward.
  bool known_reward = false;
  int threads = 1;
};

// Per-member Gaussians in normalized target space; each matrix is B x k with
// k = state_dim + 1 (Δs then r).
struct GaussianPrediction {
  std::vector<Matrix> means;
  std::vector<Matrix> stds;
  Matrix ensemble_mean;
};

Vector uncertainty_from_prediction(const GaussianPrediction& pred, UncertaintyHeuristic heuristic);

struct DynamicsTrainReport {
  std::vector<double> holdout_nll;  // best holdout NLL per member
  std::vector<double> holdout_mse;  // mean-prediction MSE on holdout, raw space
  std::vector<int> epochs;          // epochs run per member
};

class EnsembleDynamics : public DynamicsModel {
 public:
  using RewardFn = std::function<double(const Vector& state, const Vector& action)>;

  EnsembleDynamics() = default;
  EnsembleDynamics(std::vector<MlpNetwork> members, Normalizer input, Normalizer target,
                   int state_dim, int action_dim);

  // Trains N independently initialized members on (s, a) → (s' − s, r).
  static EnsembleDynamics train(const std::vector<Transition>& data, const DynamicsConfig& config,
                                Rng& rng, DynamicsTrainReport* report = nullptr);

  bool trained() const { return !members_.empty(); }
  int ensemble_size() const { return static_cast<int>(members_.size()); }
  int state_dim() const override { return state_dim_; }
  int action_dim() const override { return action_dim_; }
  const std::vector<MlpNetwork>& members() const { return members_; }
  std::vector<MlpNetwork>& members() { return members_; }
  const Normalizer& input_normalizer() const { return input_norm_; }
  const Normalizer& target_normalizer() const { return target_norm_; }

  GaussianPrediction predict(const Matrix& states, const Matrix& actions) const;
  // Ensemble mean of (Δs, r) in raw units.
  Matrix mean_prediction(const Matrix& states, const Matrix& actions) const;

  ModelStep step(const Matrix& states, const Matrix& actions, UncertaintyHeuristic heuristic,
                 Rng& rng) const override;
  Vector uncertainty(const Matrix& states, const Matrix& actions,
                     UncertaintyHeuristic heuristic) const override;
  Matrix normalize_states(const Matrix& states) const override;

  void set_reward_function(RewardFn fn) { reward_fn_ = std::move(fn); }
  bool has_reward_function() const { return static_cast<bool>(reward_fn_); }
  void set_sample_mean_model(bool on) { sample_mean_ = on; }
  bool sample_mean_model() const { return sample_mean_; }

  void save(const std::filesystem::path& path) const;
  static EnsembleDynamics load(const std::filesystem::path& path);

 private:
  Matrix inputs_of(const Matrix& states, const Matrix& actions) const;

  std::vector<MlpNetwork> members_;
  Normalizer input_norm_;
  Normalizer target_norm_;
  int state_dim_ = 0;
  int action_dim_ = 0;
  bool sample_mean_ = false;
  RewardFn reward_fn_;
};

inline constexpr std::uint32_t kDynamicsFormatVersion = 1;

}  // namespace orpo
