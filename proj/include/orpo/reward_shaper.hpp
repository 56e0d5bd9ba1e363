#pragma once

#include <string>

namespace orpo {

enum class UncertaintyHeuristic { max_aleatoric, ensemble_var, ensemble_std };

UncertaintyHeuristic parse_heuristic(const std::string& name);
std::string to_string(UncertaintyHeuristic h);

enum class ShapingMode { pessimistic, optimistic };

// P-MDP reward r − λᵖu and O-MDP reward r + λᵒu over the same model.
struct RewardShaper {
  double lambda_p = 0.0;
  double lambda_o = 0.0;
  UncertaintyHeuristic heuristic = UncertaintyHeuristic::ensemble_std;

  double pessimistic(double r, double u) const { return r - lambda_p * u; }
  double optimistic(double r, double u) const { return r + lambda_o * u; }
};

// Throws ValidationError for u < 0.
double shape_reward(double r, double u, ShapingMode mode, const RewardShaper& shaper);

}  // namespace orpo
