#include "orpo/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace orpo {

double riskworld_reward(double x_next, double y_next) {
  return (x_next + y_next) / std::numbers::sqrt2;
}

RiskWorldStep riskworld_step(const RiskWorldState& state, const Eigen::Vector2d& action) {
  using namespace riskworld;
  const double ax = std::clamp(action.x(), -1.0, 1.0);
  const double ay = std::clamp(action.y(), -1.0, 1.0);
  RiskWorldStep out;
  out.next.x = std::clamp(state.x + ax, -kBound, kBound);
  out.next.y = std::clamp(state.y + ay, -kBound, kBound);
  out.next.step = state.step + 1;
  out.reward = riskworld_reward(out.next.x, out.next.y);
  out.terminal = out.next.step >= kHorizon;
  return out;
}

double riskworld_reward_of(const Vector& state, const Vector& action) {
  const auto r = riskworld_step({state[0], state[1], 0}, Eigen::Vector2d(action[0], action[1]));
  return r.reward;
}

RiskWorldState riskworld_band_start(Rng& rng) {
  using namespace riskworld;
  while (true) {
    const double x = rng.uniform(-kBound, kBound);
    const double y = rng.uniform(-kBound, kBound);
    if (std::abs(x + y) <= kBandHalfWidth) return {x, y, 0};
  }
}

Vector RiskWorld::reset(Rng& rng) {
  state_ = riskworld_band_start(rng);
  return Eigen::Vector2d(state_.x, state_.y);
}

StepResult RiskWorld::step(const Vector& action) {
  if (action.size() != 2) throw ValidationError("RiskWorld::step: action must be 2-D");
  const auto r = riskworld_step(state_, Eigen::Vector2d(action[0], action[1]));
  state_ = r.next;
  return {Eigen::Vector2d(state_.x, state_.y), r.reward, r.terminal};
}

std::vector<Transition> collect_riskworld_dataset(std::size_t n, Rng& rng) {
  if (n == 0) throw ValidationError("collect_riskworld_dataset: n must be positive");
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const RiskWorldState s = riskworld_band_start(rng);
    const Eigen::Vector2d a(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    const auto r = riskworld_step(s, a);
    Transition t;
    t.state = Eigen::Vector2d(s.x, s.y);
    t.action = a;
    t.reward = r.reward;
    t.next_state = Eigen::Vector2d(r.next.x, r.next.y);
    t.terminal = false;  // reset after one step is a truncation, not a terminal
    out.push_back(std::move(t));
  }
  return out;
}

Vector LinearMdpSpec::transition_row(int s, int a) const {
  return (feature(s, a).transpose() * transition_weights).transpose();
}

double LinearMdpSpec::reward(int s, int a) const { return feature(s, a).dot(reward_weights); }

void LinearMdpSpec::validate() const {
  if (num_states <= 0 || num_actions <= 0 || horizon <= 0)
    throw ValidationError("LinearMdpSpec: sizes must be positive");
  if (initial_state < 0 || initial_state >= num_states)
    throw ValidationError("LinearMdpSpec: initial state out of range");
  if (features.rows() != num_states * num_actions || transition_weights.rows() != features.cols() ||
      transition_weights.cols() != num_states || reward_weights.size() != features.cols())
    throw ValidationError("LinearMdpSpec: inconsistent dimensions");
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      if (feature(s, a).norm() > 1.0 + 1e-12) throw ValidationError("LinearMdpSpec: ‖φ‖ > 1");
      const Vector p = transition_row(s, a);
      if ((p.array() < -1e-12).any() || std::abs(p.sum() - 1.0) > 1e-12)
        throw ValidationError("LinearMdpSpec: transition row is not a distribution");
      const double r = reward(s, a);
      if (r < -1e-12 || r > 1.0 + 1e-12) throw ValidationError("LinearMdpSpec: reward outside [0,1]");
    }
  }
}

LinearMdpSpec make_tabular_mdp(const Matrix& transitions, const Matrix& rewards, int horizon,
                               int initial_state) {
  const int S = static_cast<int>(rewards.rows());
  const int A = static_cast<int>(rewards.cols());
  if (transitions.rows() != S * A || transitions.cols() != S)
    throw ValidationError("make_tabular_mdp: transitions must be (S·A) x S");
  LinearMdpSpec mdp;
  mdp.num_states = S;
  mdp.num_actions = A;
  mdp.horizon = horizon;
  mdp.initial_state = initial_state;
  mdp.features = Matrix::Identity(S * A, S * A);
  mdp.transition_weights = transitions;
  mdp.reward_weights.resize(S * A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) mdp.reward_weights[s * A + a] = rewards(s, a);
  mdp.validate();
  return mdp;
}

namespace {

// Gamma(1) draws normalized: Dirichlet with unit concentration.
Vector dirichlet_ones(int n, Rng& rng) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = -std::log(1.0 - rng.uniform());
  return v / v.sum();
}

}  // namespace

LinearMdpSpec make_linear_mdp(LinearMdpKind kind, int num_states, int num_actions, int horizon,
                              Rng& rng) {
  const int S = num_states, A = num_actions;
  if (S <= 0 || A <= 0 || horizon <= 0) throw ValidationError("make_linear_mdp: invalid sizes");
  Matrix P = Matrix::Zero(S * A, S);
  Matrix R = Matrix::Zero(S, A);

  if (kind == LinearMdpKind::tabular_random) {
    for (int i = 0; i < S * A; ++i) P.row(i) = dirichlet_ones(S, rng).transpose();
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) R(s, a) = rng.uniform();
    return make_tabular_mdp(P, R, horizon, 0);
  }

  // Needle chain. Action 1 moves one state right (w.p. 1 − slip), action 0
  // returns to the start and pays a small reward. The needle sits
  // horizon − 2 steps from the start and is absorbing with reward 1, so it is
  // only profitable when found by committing to action 1 from the first step.
  if (A < 2) throw ValidationError("make_linear_mdp: needle needs at least two actions");
  const int needle = horizon - 2;
  if (needle < 1 || needle >= S) throw ValidationError("make_linear_mdp: needle needs S ≥ H − 1 and H ≥ 3");
  constexpr double kSlip = 0.1;
  constexpr double kMyopicReward = 0.1;
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      Vector target = Vector::Zero(S);
      if (s == needle) {
        target[needle] = 1.0;
        R(s, a) = 1.0;
      } else if (a == 1) {
        target[std::min(s + 1, S - 1)] = 1.0;
      } else {
        target[0] = 1.0;
        R(s, a) = kMyopicReward;
      }
      Vector row = target;
      if (s != needle) row = (1.0 - kSlip) * target + kSlip * dirichlet_ones(S, rng);
      row /= row.sum();
      P.row(s * A + a) = row.transpose();
    }
  }
  return make_tabular_mdp(P, R, horizon, 0);
}

int sample_next_state(const LinearMdpSpec& mdp, int s, int a, Rng& rng) {
  const Vector p = mdp.transition_row(s, a);
  double u = rng.uniform();
  for (int i = 0; i < p.size(); ++i) {
    u -= p[i];
    if (u < 0.0) return i;
  }
  // Round-off: fall back to the last state with positive mass.
  for (int i = static_cast<int>(p.size()) - 1; i >= 0; --i)
    if (p[i] > 0.0) return i;
  return 0;
}

std::vector<double> simulate_tabular_returns(const LinearMdpSpec& mdp, const TabularPolicy& policy,
                                             int episodes, Rng& rng, const Matrix* reward_offset) {
  std::vector<double> out(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    int s = mdp.initial_state;
    double total = 0.0;
    for (int h = 0; h < mdp.horizon; ++h) {
      const int a = policy[h][s];
      total += mdp.reward(s, a);
      if (reward_offset) total += (*reward_offset)(s, a);
      s = sample_next_state(mdp, s, a, rng);
    }
    out[e] = total;
  }
  return out;
}

}  // namespace orpo
