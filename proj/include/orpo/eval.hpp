#pragma once

#include "orpo/dynamics.hpp"
#include "orpo/envs.hpp"
#include "orpo/policies.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace orpo {

enum class Discounting { undiscounted_sum, gamma };

struct EvalReport {
  double mean_return = 0.0;
  double std_return = 0.0;  // population std over episodes
  int episodes = 0;
  Discounting discounting = Discounting::undiscounted_sum;
  double gamma = 1.0;
  std::vector<double> returns;
  std::optional<double> normalized_score;
  std::optional<double> eps_u;
  std::optional<double> action_distance;

  std::string to_json() const;
};

// Deterministic-mode actions; an episode ends on a terminal step or after
// max_steps.
EvalReport evaluate_policy(const Policy& policy, Environment& env, int episodes, Rng& rng,
                           Discounting discounting = Discounting::undiscounted_sum,
                           double gamma = 0.99, int max_steps = 1000);

struct ScoreReference {
  double random;
  double expert;
};
ScoreReference score_reference(const std::string& env_name);
// 100·(C − C_r)/(C_e − C_r). Throws ValidationError on unknown names.
double normalized_score(double raw_return, const std::string& env_name);

// Mean over pairs of ‖π(s) − a‖₂ with π in deterministic mode.
double action_distance(const Policy& policy, const std::vector<Transition>& data,
                       std::vector<double>* per_pair = nullptr);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
};
// Values outside [lo, hi] land in the end bins.
Histogram make_histogram(const std::vector<double>& values, int bins, double lo, double hi);
void write_histogram_csv(const Histogram& h, const std::filesystem::path& path);

// γ-weighted mean of u over truncated model rollouts from D_env start states.
// Step t carries weight γ^t, normalized over all steps taken.
double avg_model_uncertainty(const Policy& policy, const DynamicsModel& model,
                             UncertaintyHeuristic heuristic, const std::vector<Transition>& starts,
                             int rollouts, int horizon, double gamma, Rng& rng,
                             double truncation_box = 10.0);

struct ModelErrorEstimate {
  double gap = 0.0;       // E_{T̂}[V(s')] − E_T[V(s')]
  double std_error = 0.0;
};

using NextStateSampler = std::function<Vector(const Vector& state, const Vector& action, Rng& rng)>;
using ValueFunction = std::function<double(const Vector& state)>;

// Independent Monte Carlo estimates under each sampler.
std::vector<ModelErrorEstimate> model_error_estimate(const NextStateSampler& model,
                                                     const NextStateSampler& env,
                                                     const ValueFunction& value,
                                                     const std::vector<std::pair<Vector, Vector>>& pairs,
                                                     int samples, Rng& rng);

// Monte Carlo check that the P-MDP return under a learned tabular model with
// penalty λᵖu lower-bounds the real return of the same policy.
struct LowerBoundCheck {
  double model_return = 0.0;  // η in the penalized model
  double model_se = 0.0;
  double real_return = 0.0;
  double real_se = 0.0;
  bool holds() const;  // model ≤ real + 2·√(se_m² + se_r²)
};
LowerBoundCheck tabular_lower_bound(const LinearMdpSpec& real, const LinearMdpSpec& model,
                                    const Matrix& uncertainty, double lambda_p,
                                    const TabularPolicy& policy, int episodes, Rng& rng);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct GridPoint {
  double x, y, u;
};
// n x n grid over [-bound, bound]²; u averaged over the action lattice
// {-1, 0, 1}².
std::vector<GridPoint> uncertainty_grid(const DynamicsModel& model, UncertaintyHeuristic heuristic,
                                        int n = 61, double bound = 3.0);
void write_grid_csv(const std::vector<GridPoint>& grid, const std::filesystem::path& path);
// Spearman between |x + y|/√2 and u.
double grid_distance_correlation(const std::vector<GridPoint>& grid);

}  // namespace orpo
