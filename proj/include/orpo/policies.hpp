#pragma once

#include "orpo/datasets.hpp"
#include "orpo/dynamics.hpp"
#include "orpo/mlp.hpp"

#include <filesystem>
#include <memory>
#include <optional>

namespace orpo {

enum class ActionMode { stochastic, deterministic };

// Actions live in the box [-max_action, max_action]^da.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual double max_action() const = 0;
  // rng may be null in deterministic mode.
  virtual Matrix act_batch(const Matrix& states, ActionMode mode, Rng* rng) const = 0;
  Vector act(const Vector& state, ActionMode mode, Rng* rng) const;
};

class RandomPolicy : public Policy {
 public:
  RandomPolicy(int state_dim, int action_dim, double max_action = 1.0);
  int state_dim() const override { return state_dim_; }
  int action_dim() const override { return action_dim_; }
  double max_action() const override { return max_action_; }
  // Deterministic mode returns the box center.
  Matrix act_batch(const Matrix& states, ActionMode mode, Rng* rng) const override;

 private:
  int state_dim_, action_dim_;
  double max_action_;
};

// ---- SAC --------------------------------------------------------------------

struct SacConfig {
  std::vector<int> hidden = {256, 256};
  double gamma = 0.99;
  double tau = 5e-3;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double initial_alpha = 1.0;
  bool auto_alpha = true;
  std::optional<double> target_entropy;  // default −dim(A)
  double max_action = 1.0;
};

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;  // −mean log π over the batch
};

// Tanh-squashed Gaussian actor with twin critics and Polyak targets.
class SacPolicy : public Policy {
 public:
  SacPolicy() = default;
  SacPolicy(int state_dim, int action_dim, const SacConfig& config, Rng& rng);

  int state_dim() const override { return state_dim_; }
  int action_dim() const override { return action_dim_; }
  double max_action() const override { return config_.max_action; }
  Matrix act_batch(const Matrix& states, ActionMode mode, Rng* rng) const override;

  const SacConfig& config() const { return config_; }
  double alpha() const { return std::exp(log_alpha_); }
  double log_alpha() const { return log_alpha_; }
  double& log_alpha_ref() { return log_alpha_; }
  double target_entropy() const;
  std::int64_t updates() const { return updates_; }

  MlpNetwork& actor() { return actor_; }
  const MlpNetwork& actor() const { return actor_; }
  MlpNetwork& critic(int i) { return critics_[i]; }
  const MlpNetwork& critic(int i) const { return critics_[i]; }
  const MlpNetwork& target_critic(int i) const { return targets_[i]; }
  MlpNetwork& target_critic(int i) { return targets_[i]; }

  // One critic step, one actor step, one α step and a Polyak update.
  SacLosses update(const Batch& batch, Rng& rng);

  // Loss pieces with explicit standard-normal noise (B x da), exposed for
  // gradient checks. Gradients are written when the pointers are non-null.
  double critic_loss(const Batch& batch, const Matrix& next_noise, MlpGradient* g1,
                     MlpGradient* g2) const;
  double actor_loss(const Batch& batch, const Matrix& noise, MlpGradient* grad,
                    double* mean_log_prob = nullptr) const;
  // Loss −log α · mean(log π + target entropy); grad w.r.t. log α.
  double alpha_loss(double mean_log_prob, double* grad) const;

  void save(const std::filesystem::path& path) const;
  static SacPolicy load(const std::filesystem::path& path);

 private:
  struct Sample {
    Matrix actions;   // B x da, squashed and scaled
    Vector log_prob;  // B
    Matrix pre_tanh;  // B x da
    Matrix log_std;   // B x da
    Matrix raw;       // actor output B x 2da
  };
  Sample sample(const Matrix& states, const Matrix& noise, MlpCache* cache) const;
  Matrix critic_input(const Matrix& s, const Matrix& a) const;

  int state_dim_ = 0, action_dim_ = 0;
  SacConfig config_;
  MlpNetwork actor_;
  MlpNetwork critics_[2];
  MlpNetwork targets_[2];
  AdamState actor_opt_, critic_opt_[2];
  ScalarAdam alpha_opt_;
  double log_alpha_ = 0.0;
  std::int64_t updates_ = 0;
};

inline constexpr double kSacLogStdMin = -5.0;
inline constexpr double kSacLogStdMax = 2.0;

// ---- TD3+BC -----------------------------------------------------------------

struct Td3BcConfig {
  std::vector<int> hidden = {256, 256};
  double gamma = 0.99;
  double tau = 5e-3;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  int policy_delay = 2;
  double alpha_bc = 2.5;
  double max_action = 1.0;
};

struct Td3BcLosses {
  double critic = 0.0;
  bool actor_updated = false;
  double actor = 0.0;
  double q_term = 0.0;   // −λ_bc · mean Q1(s, π(s))
  double bc_term = 0.0;  // mean ‖π(s) − a‖²
  double lambda_bc = 0.0;
};

// Deterministic actor trained on −λ_bc·Q + ‖π(s) − a‖², λ_bc = α_bc / mean|Q|.
class Td3BcPolicy : public Policy {
 public:
  Td3BcPolicy() = default;
  Td3BcPolicy(int state_dim, int action_dim, const Td3BcConfig& config, Rng& rng);

  int state_dim() const override { return state_dim_; }
  int action_dim() const override { return action_dim_; }
  double max_action() const override { return config_.max_action; }
  // Exploration noise is never added; both modes return π(s).
  Matrix act_batch(const Matrix& states, ActionMode mode, Rng* rng) const override;

  const Td3BcConfig& config() const { return config_; }
  Td3BcConfig& config() { return config_; }
  void set_state_normalizer(Normalizer n) { state_norm_ = std::move(n); }
  const Normalizer& state_normalizer() const { return state_norm_; }
  std::int64_t updates() const { return updates_; }

  MlpNetwork& actor() { return actor_; }
  const MlpNetwork& actor() const { return actor_; }
  MlpNetwork& critic(int i) { return critics_[i]; }
  const MlpNetwork& critic(int i) const { return critics_[i]; }
  const MlpNetwork& target_critic(int i) const { return target_critics_[i]; }
  const MlpNetwork& target_actor() const { return target_actor_; }

  // Critic step every call; actor step and Polyak update on every
  // policy_delay-th call (counting from 1).
  Td3BcLosses update(const Batch& batch, Rng& rng);

  double critic_loss(const Batch& batch, const Matrix& noise, MlpGradient* g1,
                     MlpGradient* g2) const;
  // lambda_bc < 0 means "compute from the batch". Gradients treat λ_bc as a
  // constant.
  Td3BcLosses actor_loss(const Batch& batch, MlpGradient* grad, double lambda_bc = -1.0) const;

  void save(const std::filesystem::path& path) const;
  static Td3BcPolicy load(const std::filesystem::path& path);

 private:
  Matrix norm(const Matrix& s) const;
  Matrix critic_input(const Matrix& ns, const Matrix& a) const;
  Matrix actor_actions(const MlpNetwork& net, const Matrix& ns, MlpCache* cache) const;

  int state_dim_ = 0, action_dim_ = 0;
  Td3BcConfig config_;
  Normalizer state_norm_;
  MlpNetwork actor_, target_actor_;
  MlpNetwork critics_[2];
  MlpNetwork target_critics_[2];
  AdamState actor_opt_, critic_opt_[2];
  std::int64_t updates_ = 0;
};

inline constexpr std::uint32_t kPolicyFormatVersion = 1;

}  // namespace orpo
