#include "orpo/numkit.hpp"
#include "orpo/reward_shaper.hpp"

namespace orpo {

UncertaintyHeuristic parse_heuristic(const std::string& name) {
  if (name == "max_aleatoric") return UncertaintyHeuristic::max_aleatoric;
  if (name == "ensemble_var") return UncertaintyHeuristic::ensemble_var;
  if (name == "ensemble_std") return UncertaintyHeuristic::ensemble_std;
  throw ValidationError("unknown uncertainty heuristic '" + name + "'");
}

std::string to_string(UncertaintyHeuristic h) {
  switch (h) {
    case UncertaintyHeuristic::max_aleatoric: return "max_aleatoric";
    case UncertaintyHeuristic::ensemble_var: return "ensemble_var";
    case UncertaintyHeuristic::ensemble_std: return "ensemble_std";
  }
  return "unknown";
}

double shape_reward(double r, double u, ShapingMode mode, const RewardShaper& shaper) {
  if (!(u >= 0.0)) throw ValidationError("shape_reward: uncertainty must be non-negative");
  return mode == ShapingMode::pessimistic ? shaper.pessimistic(r, u) : shaper.optimistic(r, u);
}

}  // namespace orpo
