#include "orpo/shaping.hpp"

#include <cmath>

namespace orpo {

void RolloutConfig::validate() const {
  if (horizon_optimistic < 1 || horizon_pessimistic < 1)
    throw ValidationError("rollout horizons must be >= 1");
  if (batch_size < 1) throw ValidationError("rollout batch size must be >= 1");
  if (!(truncation_box > 0.0)) throw ValidationError("rollout truncation box must be positive");
}

RolloutCounts generate_rollouts(const Policy& policy, const DynamicsModel& model,
                                const RewardShaper& shaper, ShapingMode mode,
                                const RolloutConfig& config, const ReplayBuffer& env,
                                RolloutBuffers buffers, Rng& rng) {
  config.validate();
  if (env.empty()) throw ValidationError("generate_rollouts: D_env is empty");
  const bool optimistic = mode == ShapingMode::optimistic;
  if (optimistic && (!buffers.opt_raw || !buffers.opt_relabel))
    throw ValidationError("generate_rollouts: optimistic mode needs both optimistic buffers");
  if (!optimistic && !buffers.pess)
    throw ValidationError("generate_rollouts: pessimistic mode needs the pessimistic buffer");
  const int ds = model.state_dim();
  if (policy.state_dim() != ds || policy.action_dim() != model.action_dim())
    throw ValidationError("generate_rollouts: policy and model dimensions differ");

  const int horizon = optimistic ? config.horizon_optimistic : config.horizon_pessimistic;
  const auto b = static_cast<Eigen::Index>(config.batch_size);
  Matrix states(b, ds);
  for (Eigen::Index r = 0; r < b; ++r) states.row(r) = env.at(rng.index(env.size())).state.transpose();

  RolloutCounts counts;
  std::vector<Eigen::Index> alive(static_cast<std::size_t>(b));
  for (Eigen::Index r = 0; r < b; ++r) alive[static_cast<std::size_t>(r)] = r;

  for (int h = 0; h < horizon && !alive.empty(); ++h) {
    Matrix s(static_cast<Eigen::Index>(alive.size()), ds);
    for (std::size_t i = 0; i < alive.size(); ++i) s.row(static_cast<Eigen::Index>(i)) = states.row(alive[i]);
    const Matrix a = policy.act_batch(s, ActionMode::stochastic, &rng);
    const ModelStep step = model.step(s, a, shaper.heuristic, rng);
    const Matrix z = model.normalize_states(step.next_states);

    std::vector<Eigen::Index> next_alive;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      if (z.row(row).cwiseAbs().maxCoeff() > config.truncation_box) {
        ++counts.truncated;
        continue;
      }
      const double r = step.rewards(row);
      const double u = step.uncertainty(row);
      Transition t;
      t.state = s.row(row).transpose();
      t.action = a.row(row).transpose();
      t.next_state = step.next_states.row(row).transpose();
      t.terminal = false;
      t.raw_reward = r;
      t.uncertainty = u;
      if (optimistic) {
        t.reward = shape_reward(r, u, ShapingMode::optimistic, shaper);
        buffers.opt_raw->add(t);
        t.reward = shape_reward(r, u, ShapingMode::pessimistic, shaper);
        buffers.opt_relabel->add(std::move(t));
      } else {
        t.reward = shape_reward(r, u, ShapingMode::pessimistic, shaper);
        buffers.pess->add(std::move(t));
      }
      ++counts.appended;
      states.row(alive[i]) = step.next_states.row(row);
      next_alive.push_back(alive[i]);
    }
    alive = std::move(next_alive);
  }
  return counts;
}

}  // namespace orpo
