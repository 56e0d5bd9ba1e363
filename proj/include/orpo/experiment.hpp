#pragma once

#include "orpo/config.hpp"
#include "orpo/datasets.hpp"
#include "orpo/dynamics.hpp"
#include "orpo/policies.hpp"
#include "orpo/reward_shaper.hpp"
#include "orpo/shaping.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace orpo {

// Everything a run depends on. The four presets only set fields declared
// here, so every ablation goes through the same code path.
struct ExperimentConfig {
  std::string preset = "orpo";
  std::string env = "riskworld";
  std::vector<std::uint64_t> seeds = {0};
  std::size_t dataset_size = 10000;
  std::string dataset_path;  // load D_env from an .rbuf instead of collecting
  // Load the ensemble instead of training it; "{seed}" expands to the seed.
  std::string dynamics_path;

  int epochs = 10;
  int steps_per_epoch = 10000;
  // Rollout generation is interleaved with updates this many times per epoch.
  int rollout_rounds_per_epoch = 10;
  int eval_episodes = 500;
  int eps_u_rollouts = 200;
  double eps_u_gamma = 0.99;

  DynamicsConfig dynamics;
  RewardShaper shaper{100.0, 1.0, UncertaintyHeuristic::ensemble_std};
  // λᵖ used when relabeling optimistic rollouts; unset means shaper.lambda_p.
  std::optional<double> relabel_lambda_p;

  bool train_rollout_policy = true;
  bool pessimistic_rollouts = true;
  ShapingMode output_reward = ShapingMode::pessimistic;

  RolloutConfig rollout;
  std::vector<double> rollout_mix = {0.05, 0.95};       // D_env, Dᵒ_{πᵒ}
  std::vector<double> output_mix = {0.05, 0.45, 0.5};   // D_env, Dᵖ_{πᵒ}, Dᵖ_{πᵖ}
  int batch_size = 256;

  SacConfig sac;
  Td3BcConfig td3bc;
  bool save_buffers = false;

  void validate() const;
  double effective_relabel_lambda() const { return relabel_lambda_p.value_or(shaper.lambda_p); }
  // Canonical text with every field and an inline note on each default.
  std::string to_toml() const;
  std::uint64_t hash() const { return fnv1a64(to_toml()); }
  void apply(const ConfigEntry& entry);
};

ExperimentConfig riskworld_defaults();
void apply_preset(ExperimentConfig& config, const std::string& preset);
const std::vector<std::string>& preset_names();

// File entries are applied on top of the preset named in the file (or
// preset_override when given), then command-line overrides on top of that.
ExperimentConfig build_config(const std::vector<ConfigEntry>& file_entries,
                              const std::optional<std::string>& preset_override,
                              const std::vector<ConfigEntry>& overrides);

struct EpochMetrics {
  std::uint64_t seed = 0;
  int epoch = 0;
  std::int64_t grad_steps = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double eps_u = 0.0;
  double action_distance = 0.0;          // output policy vs D_env actions
  double rollout_action_distance = 0.0;  // rollout policy; NaN when absent
  double sac_critic = 0.0, sac_actor = 0.0, sac_alpha = 0.0;
  double td3bc_critic = 0.0, td3bc_actor = 0.0, td3bc_lambda_bc = 0.0;
  std::size_t opt_buffer = 0, pess_buffer = 0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> epochs;
  const EpochMetrics& final() const { return epochs.back(); }
};

struct ExperimentResult {
  std::vector<SeedResult> seeds;
  std::uint64_t config_hash = 0;
};

// Runs every seed in order and writes config.toml, metrics.csv and per-seed
// checkpoints under out_dir.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                std::ostream* log = nullptr);

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed,
                    const std::filesystem::path& seed_dir, std::ostream* log = nullptr);

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m, std::uint64_t config_hash);

}  // namespace orpo
