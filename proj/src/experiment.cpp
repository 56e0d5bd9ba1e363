#include "orpo/experiment.hpp"

#include "orpo/envs.hpp"
#include "orpo/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

namespace orpo {

namespace {

std::string quote(const std::string& s) { return "\"" + s + "\""; }
std::string flag(bool b) { return b ? "true" : "false"; }
std::string mode_name(ShapingMode m) { return m == ShapingMode::optimistic ? "optimistic" : "pessimistic"; }

ShapingMode parse_mode(const ConfigEntry& e) {
  const std::string s = config_string(e);
  if (s == "pessimistic") return ShapingMode::pessimistic;
  if (s == "optimistic") return ShapingMode::optimistic;
  throw ValidationError("config key '" + e.key + "': expected pessimistic or optimistic");
}

int to_int(const ConfigEntry& e) {
  const auto v = config_int(e);
  if (v < INT32_MIN || v > INT32_MAX) throw ValidationError("config key '" + e.key + "': out of range");
  return static_cast<int>(v);
}

std::size_t to_size(const ConfigEntry& e) {
  const auto v = config_int(e);
  if (v < 0) throw ValidationError("config key '" + e.key + "': must be non-negative");
  return static_cast<std::size_t>(v);
}

void check_fractions(const std::vector<double>& f, std::size_t n, const char* what) {
  if (f.size() != n) throw ValidationError(std::string(what) + ": expected " + std::to_string(n) + " fractions");
  MixSpec{f, 256}.validate();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (env != "riskworld") throw ValidationError("env: only 'riskworld' is supported by run");
  if (seeds.empty()) throw ValidationError("seeds: at least one seed required");
  if (dataset_path.empty() && dataset_size == 0) throw ValidationError("dataset_size: must be positive");
  if (dataset_path.empty() && dataset_size < 100)
    throw ValidationError("dataset_size: dynamics training needs at least 100 transitions");
  if (epochs < 1 || steps_per_epoch < 1) throw ValidationError("epochs and steps_per_epoch must be positive");
  if (rollout_rounds_per_epoch < 1 || rollout_rounds_per_epoch > steps_per_epoch)
    throw ValidationError("rollout_rounds_per_epoch must be in [1, steps_per_epoch]");
  if (eval_episodes < 1 || eps_u_rollouts < 1) throw ValidationError("eval_episodes and eps_u_rollouts must be positive");
  if (eps_u_gamma < 0.0 || eps_u_gamma > 1.0) throw ValidationError("eps_u_gamma must be in [0, 1]");
  if (dynamics.ensemble_size < 2) throw ValidationError("dynamics.ensemble_size must be >= 2");
  if (dynamics.hidden.empty()) throw ValidationError("dynamics.hidden must list at least one layer");
  if (dynamics.max_epochs < 1 || dynamics.batch_size < 1 || dynamics.patience < 1 || !(dynamics.learning_rate > 0.0))
    throw ValidationError("dynamics: epochs, batch size, patience and learning rate must be positive");
  if (!(dynamics.holdout_fraction > 0.0 && dynamics.holdout_fraction < 1.0))
    throw ValidationError("dynamics.holdout_fraction must be in (0, 1)");
  if (!(dynamics.weight_decay >= 0.0)) throw ValidationError("dynamics.weight_decay must be >= 0");
  if (shaper.lambda_p < 0.0) throw ValidationError("shaper.lambda_p must be >= 0");
  if (relabel_lambda_p && *relabel_lambda_p < 0.0) throw ValidationError("shaper.relabel_lambda_p must be >= 0");
  rollout.validate();
  check_fractions(rollout_mix, 2, "mix.rollout_policy");
  check_fractions(output_mix, 3, "mix.output_policy");
  if (batch_size < 1) throw ValidationError("mix.batch_size must be positive");
  if (!train_rollout_policy && output_mix[1] > 0.0)
    throw ValidationError("mix.output_policy: optimistic-rollout fraction must be 0 without a rollout policy");
  if (!pessimistic_rollouts && output_mix[2] > 0.0)
    throw ValidationError("mix.output_policy: pessimistic-rollout fraction must be 0 without pessimistic rollouts");
  for (const auto* h : {&sac.hidden, &td3bc.hidden})
    for (int w : *h)
      if (w < 1) throw ValidationError("policy hidden widths must be positive");
  if (td3bc.policy_delay < 1) throw ValidationError("td3bc.policy_delay must be >= 1");
  if (td3bc.alpha_bc < 0.0) throw ValidationError("td3bc.alpha_bc must be >= 0");
}

std::string ExperimentConfig::to_toml() const {
  std::string s;
  auto line = [&](const std::string& k, const std::string& v, const std::string& note) {
    s += k + " = " + v;
    if (!note.empty()) s += "  # " + note;
    s += "\n";
  };
  s += "[experiment]\n";
  line("preset", quote(preset), "orpo | mopo | oroo | orpo-nopess");
  line("env", quote(env), "riskworld");
  line("seeds", format_list(seeds), "one independent run per seed");
  line("dataset_size", std::to_string(dataset_size), "default 10000 one-step transitions");
  line("dataset_path", quote(dataset_path), "empty: collect a fresh dataset");
  line("dynamics_path", quote(dynamics_path), "empty: train; {seed} expands to the seed");
  line("epochs", std::to_string(epochs), "default 10");
  line("steps_per_epoch", std::to_string(steps_per_epoch), "gradient steps per policy per epoch");
  line("rollout_rounds_per_epoch", std::to_string(rollout_rounds_per_epoch), "rollout batches interleaved per epoch");
  line("eval_episodes", std::to_string(eval_episodes), "default 500 (5000 steps)");
  line("eps_u_rollouts", std::to_string(eps_u_rollouts), "model rollouts for the average uncertainty");
  line("eps_u_gamma", format_double(eps_u_gamma), "default 0.99");
  line("save_buffers", flag(save_buffers), "write .rbuf files next to checkpoints");
  s += "\n[dynamics]\n";
  line("ensemble_size", std::to_string(dynamics.ensemble_size), "default 7");
  line("hidden", format_list(dynamics.hidden), "default [128, 128]");
  line("max_epochs", std::to_string(dynamics.max_epochs), "");
  line("batch_size", std::to_string(dynamics.batch_size), "default 256");
  line("learning_rate", format_double(dynamics.learning_rate), "default 0.001");
  line("weight_decay", format_double(dynamics.weight_decay), "default 0.0");
  line("holdout_fraction", format_double(dynamics.holdout_fraction), "default 0.1");
  line("patience", std::to_string(dynamics.patience), "default 5");
  line("sample_mean_model", flag(dynamics.sample_mean_model), "default false (uniform member sampling)");
  line("known_reward", flag(dynamics.known_reward), "use the environment reward instead of the model's");
  line("threads", std::to_string(dynamics.threads), "member-training threads");
  s += "\n[shaper]\n";
  line("lambda_p", format_double(shaper.lambda_p), "pessimism weight");
  line("lambda_o", format_double(shaper.lambda_o), "optimism weight");
  line("heuristic", quote(to_string(shaper.heuristic)), "max_aleatoric | ensemble_var | ensemble_std");
  line("relabel_lambda_p", relabel_lambda_p ? format_double(*relabel_lambda_p) : quote("lambda_p"),
       "weight used to relabel optimistic rollouts");
  line("output_reward", quote(mode_name(output_reward)), "reward of the output policy's own rollouts");
  line("train_rollout_policy", flag(train_rollout_policy), "false disables the optimistic branch");
  line("pessimistic_rollouts", flag(pessimistic_rollouts), "rollouts of the output policy");
  s += "\n[rollout]\n";
  line("horizon_optimistic", std::to_string(rollout.horizon_optimistic), "");
  line("horizon_pessimistic", std::to_string(rollout.horizon_pessimistic), "");
  line("batch_size", std::to_string(rollout.batch_size), "parallel rollouts per round");
  line("truncation_box", format_double(rollout.truncation_box), "default 10 (normalized units)");
  s += "\n[mix]\n";
  line("rollout_policy", format_list(rollout_mix), "D_env, optimistic buffer; default [0.05, 0.95]");
  line("output_policy", format_list(output_mix), "D_env, relabeled, pessimistic; default [0.05, 0.45, 0.5]");
  line("batch_size", std::to_string(batch_size), "default 256");
  s += "\n[sac]\n";
  line("hidden", format_list(sac.hidden), "");
  line("gamma", format_double(sac.gamma), "default 0.99");
  line("tau", format_double(sac.tau), "default 0.005");
  line("actor_lr", format_double(sac.actor_lr), "default 0.0003");
  line("critic_lr", format_double(sac.critic_lr), "default 0.0003");
  line("alpha_lr", format_double(sac.alpha_lr), "default 0.0003");
  line("initial_alpha", format_double(sac.initial_alpha), "default 1");
  line("auto_alpha", flag(sac.auto_alpha), "target entropy -dim(A)");
  s += "\n[td3bc]\n";
  line("hidden", format_list(td3bc.hidden), "");
  line("gamma", format_double(td3bc.gamma), "default 0.99");
  line("tau", format_double(td3bc.tau), "default 0.005");
  line("actor_lr", format_double(td3bc.actor_lr), "default 0.0003");
  line("critic_lr", format_double(td3bc.critic_lr), "default 0.0003");
  line("policy_noise", format_double(td3bc.policy_noise), "default 0.2");
  line("noise_clip", format_double(td3bc.noise_clip), "default 0.5");
  line("policy_delay", std::to_string(td3bc.policy_delay), "default 2");
  line("alpha_bc", format_double(td3bc.alpha_bc), "default 2.5");
  return s;
}

void ExperimentConfig::apply(const ConfigEntry& e) {
  const std::string& k = e.key;
  if (k == "experiment.preset") preset = config_string(e);
  else if (k == "experiment.env") env = config_string(e);
  else if (k == "experiment.seeds") seeds = config_u64_list(e);
  else if (k == "experiment.dataset_size") dataset_size = to_size(e);
  else if (k == "experiment.dataset_path") dataset_path = config_string(e);
  else if (k == "experiment.dynamics_path") dynamics_path = config_string(e);
  else if (k == "experiment.epochs") epochs = to_int(e);
  else if (k == "experiment.steps_per_epoch") steps_per_epoch = to_int(e);
  else if (k == "experiment.rollout_rounds_per_epoch") rollout_rounds_per_epoch = to_int(e);
  else if (k == "experiment.eval_episodes") eval_episodes = to_int(e);
  else if (k == "experiment.eps_u_rollouts") eps_u_rollouts = to_int(e);
  else if (k == "experiment.eps_u_gamma") eps_u_gamma = config_double(e);
  else if (k == "experiment.save_buffers") save_buffers = config_bool(e);
  else if (k == "dynamics.ensemble_size") dynamics.ensemble_size = to_int(e);
  else if (k == "dynamics.hidden") dynamics.hidden = config_int_list(e);
  else if (k == "dynamics.max_epochs") dynamics.max_epochs = to_int(e);
  else if (k == "dynamics.batch_size") dynamics.batch_size = to_int(e);
  else if (k == "dynamics.learning_rate") dynamics.learning_rate = config_double(e);
  else if (k == "dynamics.weight_decay") dynamics.weight_decay = config_double(e);
  else if (k == "dynamics.holdout_fraction") dynamics.holdout_fraction = config_double(e);
  else if (k == "dynamics.patience") dynamics.patience = to_int(e);
  else if (k == "dynamics.sample_mean_model") dynamics.sample_mean_model = config_bool(e);
  else if (k == "dynamics.known_reward") dynamics.known_reward = config_bool(e);
  else if (k == "dynamics.threads") dynamics.threads = to_int(e);
  else if (k == "shaper.lambda_p") shaper.lambda_p = config_double(e);
  else if (k == "shaper.lambda_o") shaper.lambda_o = config_double(e);
  else if (k == "shaper.heuristic") {
    try {
      shaper.heuristic = parse_heuristic(config_string(e));
    } catch (const std::invalid_argument& ex) {
      throw ValidationError("config key 'shaper.heuristic': " + std::string(ex.what()));
    }
  } else if (k == "shaper.relabel_lambda_p") {
    if (e.raw == "\"lambda_p\"" || e.raw == "lambda_p") relabel_lambda_p.reset();
    else relabel_lambda_p = config_double(e);
  } else if (k == "shaper.output_reward") output_reward = parse_mode(e);
  else if (k == "shaper.train_rollout_policy") train_rollout_policy = config_bool(e);
  else if (k == "shaper.pessimistic_rollouts") pessimistic_rollouts = config_bool(e);
  else if (k == "rollout.horizon_optimistic") rollout.horizon_optimistic = to_int(e);
  else if (k == "rollout.horizon_pessimistic") rollout.horizon_pessimistic = to_int(e);
  else if (k == "rollout.batch_size") rollout.batch_size = to_int(e);
  else if (k == "rollout.truncation_box") rollout.truncation_box = config_double(e);
  else if (k == "mix.rollout_policy") rollout_mix = config_double_list(e);
  else if (k == "mix.output_policy") output_mix = config_double_list(e);
  else if (k == "mix.batch_size") batch_size = to_int(e);
  else if (k == "sac.hidden") sac.hidden = config_int_list(e);
  else if (k == "sac.gamma") sac.gamma = config_double(e);
  else if (k == "sac.tau") sac.tau = config_double(e);
  else if (k == "sac.actor_lr") sac.actor_lr = config_double(e);
  else if (k == "sac.critic_lr") sac.critic_lr = config_double(e);
  else if (k == "sac.alpha_lr") sac.alpha_lr = config_double(e);
  else if (k == "sac.initial_alpha") sac.initial_alpha = config_double(e);
  else if (k == "sac.auto_alpha") sac.auto_alpha = config_bool(e);
  else if (k == "td3bc.hidden") td3bc.hidden = config_int_list(e);
  else if (k == "td3bc.gamma") td3bc.gamma = config_double(e);
  else if (k == "td3bc.tau") td3bc.tau = config_double(e);
  else if (k == "td3bc.actor_lr") td3bc.actor_lr = config_double(e);
  else if (k == "td3bc.critic_lr") td3bc.critic_lr = config_double(e);
  else if (k == "td3bc.policy_noise") td3bc.policy_noise = config_double(e);
  else if (k == "td3bc.noise_clip") td3bc.noise_clip = config_double(e);
  else if (k == "td3bc.policy_delay") td3bc.policy_delay = to_int(e);
  else if (k == "td3bc.alpha_bc") td3bc.alpha_bc = config_double(e);
  else throw ValidationError("unknown config key '" + k + "'");
}

ExperimentConfig riskworld_defaults() {
  ExperimentConfig c;
  c.dynamics.hidden = {128, 128};
  c.dynamics.max_epochs = 100;
  return c;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"orpo", "mopo", "oroo", "orpo-nopess"};
  return names;
}

void apply_preset(ExperimentConfig& c, const std::string& preset) {
  if (preset == "orpo" || preset == "orpo-nopess") {
    c.train_rollout_policy = true;
    c.pessimistic_rollouts = true;
    c.output_reward = ShapingMode::pessimistic;
    c.output_mix = {0.05, 0.45, 0.5};
    if (preset == "orpo-nopess") c.relabel_lambda_p = 0.0;
    else c.relabel_lambda_p.reset();
  } else if (preset == "mopo" || preset == "oroo") {
    c.train_rollout_policy = false;
    c.pessimistic_rollouts = true;
    c.output_reward = preset == "oroo" ? ShapingMode::optimistic : ShapingMode::pessimistic;
    c.output_mix = {0.05, 0.0, 0.95};
    c.relabel_lambda_p.reset();
  } else {
    throw ValidationError("unknown preset '" + preset + "'");
  }
  c.preset = preset;
}

ExperimentConfig build_config(const std::vector<ConfigEntry>& file_entries,
                              const std::optional<std::string>& preset_override,
                              const std::vector<ConfigEntry>& overrides) {
  ExperimentConfig c = riskworld_defaults();
  std::string preset = c.preset;
  for (const auto& e : file_entries)
    if (e.key == "experiment.preset") preset = config_string(e);
  for (const auto& e : overrides)
    if (e.key == "experiment.preset") preset = config_string(e);
  if (preset_override) preset = *preset_override;
  apply_preset(c, preset);
  for (const auto& e : file_entries)
    if (e.key != "experiment.preset") c.apply(e);
  for (const auto& e : overrides)
    if (e.key != "experiment.preset") c.apply(e);
  c.validate();
  return c;
}

std::string metrics_csv_header() {
  return "seed,config_hash,epoch,grad_steps,mean_return,std_return,eps_u,action_distance,"
         "rollout_action_distance,sac_critic,sac_actor,sac_alpha,td3bc_critic,td3bc_actor,"
         "td3bc_lambda_bc,opt_buffer,pess_buffer";
}

std::string metrics_csv_row(const EpochMetrics& m, std::uint64_t config_hash) {
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "%llu,%016llx,%d,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%zu",
                static_cast<unsigned long long>(m.seed), static_cast<unsigned long long>(config_hash),
                m.epoch, static_cast<long long>(m.grad_steps), m.mean_return, m.std_return, m.eps_u,
                m.action_distance, m.rollout_action_distance, m.sac_critic, m.sac_actor, m.sac_alpha,
                m.td3bc_critic, m.td3bc_actor, m.td3bc_lambda_bc, m.opt_buffer, m.pess_buffer);
  return buf;
}

namespace {

std::string expand_seed(std::string pattern, std::uint64_t seed) {
  const std::string key = "{seed}";
  for (auto pos = pattern.find(key); pos != std::string::npos; pos = pattern.find(key))
    pattern.replace(pos, key.size(), std::to_string(seed));
  return pattern;
}

// Fractions of empty buffers move to D_env (index 0) so early batches can
// still be drawn.
MixSpec live_mix(const std::vector<double>& fractions, const std::vector<const ReplayBuffer*>& buffers,
                 int batch_size) {
  MixSpec mix{fractions, static_cast<std::size_t>(batch_size)};
  for (std::size_t i = 1; i < buffers.size(); ++i) {
    if (mix.fractions[i] > 0.0 && buffers[i]->empty()) {
      mix.fractions[0] += mix.fractions[i];
      mix.fractions[i] = 0.0;
    }
  }
  return mix;
}

struct Stage {
  std::ostream* log;
  std::string name;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  void done() const {
    if (!log) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    *log << "  " << name << " (" << std::fixed;
    log->precision(1);
    *log << s << " s)\n";
    log->unsetf(std::ios::fixed);
  }
};

template <typename F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError(stage + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(stage + ": " + e.what());
  }
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& seed_dir,
                    std::ostream* log) {
  config.validate();
  std::filesystem::create_directories(seed_dir);
  const Rng root(seed);
  Rng data_rng = root.derive(1), dyn_rng = root.derive(2), init_rng = root.derive(3);
  Rng rollout_rng = root.derive(4), sample_rng = root.derive(5), update_rng = root.derive(6);
  Rng eval_rng = root.derive(7);

  ReplayBuffer env_buf(BufferTag::env, kUnbounded);
  if (config.dataset_path.empty()) {
    env_buf.add_all(collect_riskworld_dataset(config.dataset_size, data_rng));
  } else {
    env_buf = load(config.dataset_path);
    if (env_buf.tag() != BufferTag::env) throw ValidationError("dataset_path: buffer is not tagged env");
  }
  const std::vector<Transition> data = env_buf.records();
  if (data.size() < 100) throw ValidationError("dataset: need at least 100 transitions");

  Stage s_dyn{log, "dynamics"};
  EnsembleDynamics model;
  if (config.dynamics_path.empty()) {
    model = staged("dynamics", [&] { return EnsembleDynamics::train(data, config.dynamics, dyn_rng); });
  } else {
    model = EnsembleDynamics::load(expand_seed(config.dynamics_path, seed));
    if (model.state_dim() != 2 || model.action_dim() != 2)
      throw ValidationError("dynamics_path: checkpoint dimensions do not match the environment");
  }
  model.set_sample_mean_model(config.dynamics.sample_mean_model);
  if (config.dynamics.known_reward) model.set_reward_function(riskworld_reward_of);
  s_dyn.done();
  model.save(seed_dir / "dynamics.bin");

  const int ds = model.state_dim(), da = model.action_dim();
  std::optional<SacPolicy> rollout_policy;
  if (config.train_rollout_policy) rollout_policy.emplace(ds, da, config.sac, init_rng);
  Td3BcPolicy output_policy(ds, da, config.td3bc, init_rng);
  {
    Matrix states(static_cast<Eigen::Index>(data.size()), ds);
    for (std::size_t i = 0; i < data.size(); ++i) states.row(static_cast<Eigen::Index>(i)) = data[i].state.transpose();
    output_policy.set_state_normalizer(Normalizer::fit(states, 1e-3));
  }

  RewardShaper relabel_shaper = config.shaper;
  relabel_shaper.lambda_p = config.effective_relabel_lambda();
  // The output policy's own rollouts use the P-MDP, or the O-MDP for oroo.
  const RewardShaper& own_shaper = config.shaper;

  ReplayBuffer opt_raw(BufferTag::opt_raw, kModelBufferCapacity);
  ReplayBuffer opt_relabel(BufferTag::opt_relabel, kModelBufferCapacity);
  ReplayBuffer pess(BufferTag::pess, kModelBufferCapacity);
  const std::vector<const ReplayBuffer*> rollout_sources{&env_buf, &opt_raw};
  const std::vector<const ReplayBuffer*> output_sources{&env_buf, &opt_relabel, &pess};

  RiskWorld env;
  SeedResult result;
  result.seed = seed;
  std::int64_t steps = 0;
  const int rounds = config.rollout_rounds_per_epoch;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Stage s_epoch{log, "epoch " + std::to_string(epoch)};
    double sac_c = 0, sac_a = 0, sac_al = 0, td_c = 0, td_a = 0, td_l = 0;
    int sac_n = 0, td_c_n = 0, td_a_n = 0;
    for (int round = 0; round < rounds; ++round) {
      staged("rollouts", [&] {
        if (rollout_policy)
          generate_rollouts(*rollout_policy, model, relabel_shaper, ShapingMode::optimistic, config.rollout,
                            env_buf, {&opt_raw, &opt_relabel, nullptr}, rollout_rng);
        if (config.pessimistic_rollouts) {
          // Pessimistic rollouts go to pess; under oroo they carry O-MDP rewards.
          if (config.output_reward == ShapingMode::pessimistic) {
            generate_rollouts(output_policy, model, own_shaper, ShapingMode::pessimistic, config.rollout,
                              env_buf, {nullptr, nullptr, &pess}, rollout_rng);
          } else {
            ReplayBuffer scratch(BufferTag::opt_raw, kUnbounded), unused(BufferTag::opt_relabel, kUnbounded);
            RolloutConfig rc = config.rollout;
            rc.horizon_optimistic = rc.horizon_pessimistic;
            generate_rollouts(output_policy, model, own_shaper, ShapingMode::optimistic, rc, env_buf,
                              {&scratch, &unused, nullptr}, rollout_rng);
            for (std::size_t i = 0; i < scratch.size(); ++i) pess.add(scratch.at(i));
          }
        }
        return 0;
      });
      const int n_steps = config.steps_per_epoch / rounds + (round < config.steps_per_epoch % rounds ? 1 : 0);
      staged("updates", [&] {
        for (int k = 0; k < n_steps; ++k) {
          if (rollout_policy) {
            const Batch b = sample_mixed_batch(rollout_sources, live_mix(config.rollout_mix, rollout_sources, config.batch_size),
                                               sample_rng);
            const SacLosses l = rollout_policy->update(b, update_rng);
            sac_c += l.critic;
            sac_a += l.actor;
            sac_al += l.alpha;
            ++sac_n;
          }
          const Batch b = sample_mixed_batch(output_sources, live_mix(config.output_mix, output_sources, config.batch_size),
                                             sample_rng);
          const Td3BcLosses l = output_policy.update(b, update_rng);
          td_c += l.critic;
          ++td_c_n;
          if (l.actor_updated) {
            td_a += l.actor;
            td_l += l.lambda_bc;
            ++td_a_n;
          }
          ++steps;
        }
        return 0;
      });
    }

    EpochMetrics m;
    m.seed = seed;
    m.epoch = epoch;
    m.grad_steps = steps;
    staged("evaluation", [&] {
      Rng er = eval_rng.derive(static_cast<std::uint64_t>(epoch));
      const EvalReport rep = evaluate_policy(output_policy, env, config.eval_episodes, er);
      m.mean_return = rep.mean_return;
      m.std_return = rep.std_return;
      Rng ur = er.derive(1);
      m.eps_u = avg_model_uncertainty(output_policy, model, config.shaper.heuristic, data, config.eps_u_rollouts,
                                      config.rollout.horizon_pessimistic, config.eps_u_gamma, ur,
                                      config.rollout.truncation_box);
      m.action_distance = action_distance(output_policy, data);
      m.rollout_action_distance =
          rollout_policy ? action_distance(*rollout_policy, data) : std::numeric_limits<double>::quiet_NaN();
      return 0;
    });
    const double nan = std::numeric_limits<double>::quiet_NaN();
    m.sac_critic = sac_n ? sac_c / sac_n : nan;
    m.sac_actor = sac_n ? sac_a / sac_n : nan;
    m.sac_alpha = sac_n ? sac_al / sac_n : nan;
    m.td3bc_critic = td_c_n ? td_c / td_c_n : nan;
    m.td3bc_actor = td_a_n ? td_a / td_a_n : nan;
    m.td3bc_lambda_bc = td_a_n ? td_l / td_a_n : nan;
    m.opt_buffer = opt_raw.size();
    m.pess_buffer = pess.size();
    result.epochs.push_back(m);
    s_epoch.done();
    if (log) *log << "    return " << m.mean_return << "  action_distance " << m.action_distance << "  eps_u " << m.eps_u << "\n";
  }

  output_policy.save(seed_dir / "output_policy.bin");
  if (rollout_policy) rollout_policy->save(seed_dir / "rollout_policy.bin");
  if (config.save_buffers) {
    save(env_buf, seed_dir / "env.rbuf");
    if (rollout_policy) {
      save(opt_raw, seed_dir / "opt_raw.rbuf");
      save(opt_relabel, seed_dir / "opt_relabel.rbuf");
    }
    if (config.pessimistic_rollouts) save(pess, seed_dir / "pess.rbuf");
  }
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                std::ostream* log) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cfg(out_dir / "config.toml");
    if (!cfg) throw std::ios_base::failure("cannot write " + (out_dir / "config.toml").string());
    cfg << config.to_toml();
  }
  ExperimentResult result;
  result.config_hash = config.hash();
  std::ofstream metrics(out_dir / "metrics.csv");
  if (!metrics) throw std::ios_base::failure("cannot write " + (out_dir / "metrics.csv").string());
  metrics << metrics_csv_header() << "\n";
  for (std::uint64_t seed : config.seeds) {
    if (log) *log << "seed " << seed << " (" << config.preset << ")\n";
    SeedResult r = run_seed(config, seed, out_dir / ("seed_" + std::to_string(seed)), log);
    for (const auto& m : r.epochs) metrics << metrics_csv_row(m, result.config_hash) << "\n";
    metrics.flush();
    result.seeds.push_back(std::move(r));
  }
  return result;
}

}  // namespace orpo
