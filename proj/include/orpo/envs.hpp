#pragma once

#include "orpo/numkit.hpp"

#include <optional>
#include <vector>

namespace orpo {

// One (s, a, r, s', terminal) record. raw_reward/uncertainty are only set on
// records produced by model rollouts.
struct Transition {
  Vector state;
  Vector action;
  double reward = 0.0;
  Vector next_state;
  bool terminal = false;
  std::optional<double> raw_reward;
  std::optional<double> uncertainty;

  bool from_model() const { return raw_reward.has_value() && uncertainty.has_value(); }
};

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool terminal = false;
};

// Episodic environment with continuous state and action vectors.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual Vector reset(Rng& rng) = 0;
  virtual StepResult step(const Vector& action) = 0;
};

// ---- RiskWorld --------------------------------------------------------------
//
// 2-D point in [-3, 3]², unit-box actions, 10-step episodes. Reward is the
// signed distance of the next state to the line y = -x.

namespace riskworld {
inline constexpr double kBound = 3.0;
inline constexpr int kHorizon = 10;
inline constexpr double kBandHalfWidth = 0.25;
}  // namespace riskworld

struct RiskWorldState {
  double x = 0.0;
  double y = 0.0;
  int step = 0;
};

struct RiskWorldStep {
  RiskWorldState next;
  double reward = 0.0;
  bool terminal = false;
};

double riskworld_reward(double x_next, double y_next);
RiskWorldStep riskworld_step(const RiskWorldState& state, const Eigen::Vector2d& action);
// Reward of taking action in state, as a closed-form function of (s, a).
double riskworld_reward_of(const Vector& state, const Vector& action);
// Uniform over the band |x + y| ≤ 0.25 inside the square.
RiskWorldState riskworld_band_start(Rng& rng);

class RiskWorld : public Environment {
 public:
  int state_dim() const override { return 2; }
  int action_dim() const override { return 2; }
  Vector reset(Rng& rng) override;
  StepResult step(const Vector& action) override;
  const RiskWorldState& state() const { return state_; }
  void set_state(const RiskWorldState& s) { state_ = s; }

 private:
  RiskWorldState state_;
};

// One-step-then-reset collection: band start, uniform action, one step.
std::vector<Transition> collect_riskworld_dataset(std::size_t n, Rng& rng);

// ---- Linear / tabular MDPs --------------------------------------------------

enum class LinearMdpKind { tabular_random, needle };

// Finite-horizon linear MDP with P(·|s,a) = φ(s,a)ᵀW and r(s,a) = φ(s,a)ᵀμ.
// The tabular instantiation uses one-hot features, d = S·A.
struct LinearMdpSpec {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  int initial_state = 0;
  Matrix features;            // (S·A) x d, row s·A + a is φ(s, a)
  Matrix transition_weights;  // d x S
  Vector reward_weights;      // d

  int dim() const { return static_cast<int>(features.cols()); }
  int pair_index(int s, int a) const { return s * num_actions + a; }
  Vector feature(int s, int a) const { return features.row(pair_index(s, a)).transpose(); }
  Vector transition_row(int s, int a) const;
  double reward(int s, int a) const;
  // Throws ValidationError when an invariant fails.
  void validate() const;
};

// P is (S·A) x S with row s·A + a = P(·|s,a); R is S x A.
LinearMdpSpec make_tabular_mdp(const Matrix& transitions, const Matrix& rewards, int horizon,
                               int initial_state = 0);
// tabular_random: Dirichlet(1) rows, uniform [0,1] rewards.
// needle: a chain where one action drifts right toward an absorbing
// high-reward state and the other pays a small immediate reward.
LinearMdpSpec make_linear_mdp(LinearMdpKind kind, int num_states, int num_actions, int horizon,
                              Rng& rng);

int sample_next_state(const LinearMdpSpec& mdp, int s, int a, Rng& rng);

// Greedy/tabular policy: action[h][s].
using TabularPolicy = std::vector<std::vector<int>>;

// Monte Carlo return of policy in the MDP with optional per-pair reward
// offset (r + offset(s,a)); returns per-episode returns.
std::vector<double> simulate_tabular_returns(const LinearMdpSpec& mdp, const TabularPolicy& policy,
                                             int episodes, Rng& rng,
                                             const Matrix* reward_offset = nullptr);

}  // namespace orpo
