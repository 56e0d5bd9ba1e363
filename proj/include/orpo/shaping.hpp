#pragma once

#include "orpo/datasets.hpp"
#include "orpo/dynamics.hpp"
#include "orpo/policies.hpp"
#include "orpo/reward_shaper.hpp"

namespace orpo {

struct RolloutConfig {
  int horizon_optimistic = 5;   // hᵒ
  int horizon_pessimistic = 5;  // hᵖ
  int batch_size = 1000;        // b parallel rollouts
  // Rollouts stop once a model state leaves [-box, box] in the model's
  // normalized state coordinates.
  double truncation_box = 10.0;

  void validate() const;
};

// Destinations of one rollout call. Optimistic mode writes every record to
// both opt_raw (rᵒ) and opt_relabel (rᵖ); pessimistic mode writes rᵖ to pess.
struct RolloutBuffers {
  ReplayBuffer* opt_raw = nullptr;
  ReplayBuffer* opt_relabel = nullptr;
  ReplayBuffer* pess = nullptr;
};

struct RolloutCounts {
  std::size_t appended = 0;   // records per destination buffer
  std::size_t truncated = 0;  // rollouts cut short by the box
};

// b branched rollouts from D_env start states under policy, stepping the
// model and shaping its reward with the uncertainty of each step.
RolloutCounts generate_rollouts(const Policy& policy, const DynamicsModel& model,
                                const RewardShaper& shaper, ShapingMode mode,
                                const RolloutConfig& config, const ReplayBuffer& env,
                                RolloutBuffers buffers, Rng& rng);

}  // namespace orpo
