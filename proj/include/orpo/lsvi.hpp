#pragma once

#include "orpo/envs.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace orpo {

// Finite-horizon tables, h = 0 … H−1. values has H + 1 entries with
// values[H] = 0.
struct ValueTables {
  std::vector<Matrix> q;       // S x A per step
  std::vector<Vector> values;  // S per step
  TabularPolicy policy;
};

// Backward induction on the true model. Ties go to the lowest action.
ValueTables optimal_values(const LinearMdpSpec& mdp, const Matrix* reward_offset = nullptr);

// Exact V^π_h(s) tables of a fixed policy; the result's policy is a copy.
ValueTables evaluate_policy_exact(const LinearMdpSpec& mdp, const TabularPolicy& policy,
                                  const Matrix* reward_offset = nullptr);

struct RegretSeries {
  std::vector<double> instant;
  std::vector<double> cumulative;

  double total() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
  // cumulative regret after k episodes divided by k
  double average_at(std::size_t k) const;
};

// instant[k] = v_star − policy_values[k].
RegretSeries regret_series(const std::vector<double>& policy_values, double v_star);

struct LsviOptions {
  int episodes = 1000;
  double beta = 1.0;
  double lambda_bonus = 0.0;  // λᵒ + λᵖ; 0 gives the greedy baseline
  int refactor_every = 64;
  bool keep_snapshots = false;
  // Per-pair additive reward term (S x A), e.g. −λᵖu for a P-MDP reward.
  std::optional<Matrix> reward_offset;
};

// Per-step ridge statistics. gram[h] = βI + Σ φφᵀ over step-h samples of all
// completed episodes.
struct LsviState {
  std::vector<Matrix> gram;
  std::vector<Matrix> gram_inverse;
  std::vector<Vector> weights;
  std::vector<Matrix> q;  // last episode's bonus-augmented Q, S x A per step
  double beta = 1.0;
  double lambda_bonus = 0.0;
  int horizon = 0;
  int episodes = 0;
};

struct LsviResult {
  std::vector<TabularPolicy> snapshots;  // only with keep_snapshots
  std::vector<double> policy_values;     // exact V^{π_k}_1(s₁)
  RegretSeries regret;
  LsviState state;
};

LsviResult run_lsvi_orpo(const LinearMdpSpec& mdp, const LsviOptions& options, Rng& rng);

// Bonus scale c·d·H·√ι with ι = log(2dT/p) and T = K·H.
double lsvi_bonus_scale(double c, int dim, int horizon, int episodes, double p);

// The frozen constant used for the default bonus, tuned once on the two-arm
// bandit (see lsvi_tune_constant).
inline constexpr double kLsviBonusConstant = 0.05;
inline constexpr double kLsviConfidence = 0.05;

// Two-arm, one-step bandit with deterministic arm rewards.
LinearMdpSpec make_bandit(double reward_0, double reward_1);

struct TuneResult {
  std::vector<double> grid;
  std::vector<double> regret;  // cumulative regret per grid point
  double best = 0.0;
};

// Cumulative regret of LSVI-ORPO on the {0.2, 0.8} bandit over K episodes for
// each c; best is the smallest c achieving the minimum.
TuneResult lsvi_tune_constant(const std::vector<double>& grid, int episodes);

// One resampled tabular dataset per trial: every (s, a, h) gets a random
// number of next-state samples, the ridge estimate of (P V*_{h+1})(s, a) is
// compared to the truth, and the trial fails if any error exceeds
// λ/√(n + β).
struct AdmissibilityReport {
  int trials = 0;
  int failures = 0;
  double lambda = 0.0;
  double failure_rate() const { return trials ? static_cast<double>(failures) / trials : 0.0; }
};

AdmissibilityReport check_admissibility(const LinearMdpSpec& mdp, int trials, int max_samples,
                                        double beta, double lambda, Rng& rng);

// episode,instant_regret,cumulative_regret
void write_regret_csv(const RegretSeries& series, const std::filesystem::path& path);

}  // namespace orpo
