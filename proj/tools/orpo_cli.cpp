// Command-line front end: data collection, dynamics training, full runs,
// LSVI sweeps, evaluation and uncertainty-grid export.

#include "orpo/binary_io.hpp"
#include "orpo/config.hpp"
#include "orpo/datasets.hpp"
#include "orpo/dynamics.hpp"
#include "orpo/envs.hpp"
#include "orpo/eval.hpp"
#include "orpo/experiment.hpp"
#include "orpo/lsvi.hpp"
#include "orpo/policies.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace orpo;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

struct Common {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string out = "out";
  std::string preset;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "TOML config file");
  cmd->add_option("--seed", c.seeds, "seed (repeatable)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--preset", c.preset, "orpo | mopo | oroo | orpo-nopess");
  cmd->add_option("--override", c.overrides, "key=value applied after the config file (repeatable)");
  cmd->add_flag("--quiet", c.quiet, "suppress progress output");
}

ExperimentConfig load_config(const Common& c) {
  std::vector<ConfigEntry> file;
  if (!c.config_path.empty()) file = read_config_file(c.config_path);
  std::vector<ConfigEntry> overrides;
  for (const auto& o : c.overrides) overrides.push_back(parse_override(o));
  std::optional<std::string> preset;
  if (!c.preset.empty()) preset = c.preset;
  ExperimentConfig cfg = build_config(file, preset, overrides);
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out << text;
}

int cmd_collect(const Common& c, std::size_t n, bool jsonl) {
  const ExperimentConfig cfg = load_config(c);
  fs::create_directories(c.out);
  for (std::uint64_t seed : cfg.seeds) {
    Rng rng = Rng(seed).derive(1);
    ReplayBuffer buf(BufferTag::env, kUnbounded);
    buf.add_all(collect_riskworld_dataset(n ? n : cfg.dataset_size, rng));
    const fs::path base = fs::path(c.out) / ("env_seed_" + std::to_string(seed));
    save(buf, base.string() + ".rbuf");
    if (jsonl) export_jsonl(buf, base.string() + ".jsonl");
    if (!c.quiet) std::cout << base.string() << ".rbuf: " << buf.size() << " transitions\n";
  }
  return kOk;
}

int cmd_train_dynamics(const Common& c, const std::string& data_path) {
  const ExperimentConfig cfg = load_config(c);
  fs::create_directories(c.out);
  nlohmann::json summary = nlohmann::json::array();
  for (std::uint64_t seed : cfg.seeds) {
    const Rng root(seed);
    ReplayBuffer buf(BufferTag::env, kUnbounded);
    if (!data_path.empty()) {
      buf = load(data_path);
    } else {
      Rng data_rng = root.derive(1);
      buf.add_all(collect_riskworld_dataset(cfg.dataset_size, data_rng));
    }
    Rng dyn_rng = root.derive(2);
    DynamicsTrainReport rep;
    const EnsembleDynamics model = EnsembleDynamics::train(buf.records(), cfg.dynamics, dyn_rng, &rep);
    const fs::path path = fs::path(c.out) / ("dynamics_seed_" + std::to_string(seed) + ".bin");
    model.save(path);
    const double rho = grid_distance_correlation(uncertainty_grid(model, cfg.shaper.heuristic));
    summary.push_back({{"seed", seed},
                       {"checkpoint", path.string()},
                       {"holdout_nll", rep.holdout_nll},
                       {"holdout_mse", rep.holdout_mse},
                       {"epochs", rep.epochs},
                       {"grid_spearman", rho}});
    if (!c.quiet) std::cout << path.string() << ": grid spearman " << rho << "\n";
  }
  write_text(fs::path(c.out) / "dynamics_report.json", summary.dump(2) + "\n");
  return kOk;
}

int cmd_run(const Common& c) {
  const ExperimentConfig cfg = load_config(c);
  const ExperimentResult r = run_experiment(cfg, c.out, c.quiet ? nullptr : &std::cerr);
  for (const auto& s : r.seeds)
    std::cout << "seed " << s.seed << ": final mean return " << s.final().mean_return << "\n";
  return kOk;
}

struct LsviArgs {
  std::string instance = "needle";
  int states = 6, actions = 2, horizon = 5, episodes = 2000, runs = 50;
  double c = kLsviBonusConstant;
  double lambda = -1.0;
  bool tune = false;
  bool admissibility = false;
};

int cmd_lsvi(const Common& c, const LsviArgs& a) {
  fs::create_directories(c.out);
  if (a.tune) {
    std::vector<double> grid;
    for (int i = 1; i <= 40; ++i) grid.push_back(0.0025 * i);
    for (double c : {0.2, 0.5, 1.0}) grid.push_back(c);
    const TuneResult t = lsvi_tune_constant(grid, a.episodes);
    nlohmann::json j{{"grid", t.grid}, {"regret", t.regret}, {"best", t.best}};
    write_text(fs::path(c.out) / "lsvi_tune.json", j.dump(2) + "\n");
    std::cout << "best c = " << t.best << "\n";
    return kOk;
  }
  const std::vector<std::uint64_t> seeds = [&] {
    if (!c.seeds.empty()) return c.seeds;
    std::vector<std::uint64_t> s;
    for (int i = 0; i < a.runs; ++i) s.push_back(static_cast<std::uint64_t>(i));
    return s;
  }();
  std::ofstream summary(fs::path(c.out) / "lsvi_summary.csv");
  if (!summary) throw std::ios_base::failure("cannot write lsvi_summary.csv");
  summary << "seed,lambda_bonus,cumulative_regret,average_regret\n";
  for (std::uint64_t seed : seeds) {
    Rng rng(seed);
    Rng mdp_rng = rng.derive(1), run_rng = rng.derive(2);
    const LinearMdpKind kind = a.instance == "needle" ? LinearMdpKind::needle : LinearMdpKind::tabular_random;
    if (a.instance != "needle" && a.instance != "random") throw ValidationError("--instance must be needle or random");
    const LinearMdpSpec mdp = make_linear_mdp(kind, a.states, a.actions, a.horizon, mdp_rng);
    const double lambda =
        a.lambda >= 0.0 ? a.lambda : lsvi_bonus_scale(a.c, mdp.dim(), mdp.horizon, a.episodes, kLsviConfidence);
    if (a.admissibility) {
      const AdmissibilityReport rep = check_admissibility(mdp, 1000, 50, 1.0, lambda, run_rng);
      std::cout << "seed " << seed << ": admissibility failure rate " << rep.failure_rate() << "\n";
      continue;
    }
    LsviOptions opt;
    opt.episodes = a.episodes;
    opt.lambda_bonus = lambda;
    const LsviResult r = run_lsvi_orpo(mdp, opt, run_rng);
    write_regret_csv(r.regret, fs::path(c.out) / ("regret_seed_" + std::to_string(seed) + ".csv"));
    char line[160];
    std::snprintf(line, sizeof line, "%llu,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(seed), lambda,
                  r.regret.total(), r.regret.total() / a.episodes);
    summary << line;
  }
  if (!c.quiet) std::cout << "wrote " << (fs::path(c.out) / "lsvi_summary.csv").string() << "\n";
  return kOk;
}

int cmd_eval(const Common& c, const std::string& policy_path, int episodes, const std::string& score_env,
             double raw_return, bool has_raw) {
  if (has_raw) {
    std::printf("%.17g\n", normalized_score(raw_return, score_env));
    return kOk;
  }
  if (policy_path.empty()) throw ValidationError("eval needs --policy or --raw-return");
  const std::string bytes = read_file(policy_path);
  std::unique_ptr<Policy> policy;
  if (bytes.compare(0, 8, "ORPOTD3B") == 0) policy = std::make_unique<Td3BcPolicy>(Td3BcPolicy::load(policy_path));
  else if (bytes.compare(0, 8, "ORPOSAC1") == 0) policy = std::make_unique<SacPolicy>(SacPolicy::load(policy_path));
  else throw FormatError("unrecognized policy checkpoint");
  const std::uint64_t seed = c.seeds.empty() ? 0 : c.seeds.front();
  Rng rng = Rng(seed).derive(7);
  RiskWorld env;
  EvalReport rep = evaluate_policy(*policy, env, episodes, rng);
  Rng data_rng = Rng(seed).derive(1);
  rep.action_distance = action_distance(*policy, collect_riskworld_dataset(10000, data_rng));
  if (!score_env.empty()) rep.normalized_score = normalized_score(rep.mean_return, score_env);
  std::cout << rep.to_json() << "\n";
  if (c.out != "out" || !c.quiet) write_text(fs::path(c.out) / "eval.json", rep.to_json() + "\n");
  return kOk;
}

int cmd_export_grid(const Common& c, const std::string& dynamics_path, const std::string& heuristic, int n) {
  const EnsembleDynamics model = EnsembleDynamics::load(dynamics_path);
  const auto grid = uncertainty_grid(model, parse_heuristic(heuristic), n);
  fs::create_directories(c.out);
  write_grid_csv(grid, fs::path(c.out) / "uncertainty_grid.csv");
  std::cout << "spearman(|x+y|/sqrt2, u) = " << grid_distance_correlation(grid) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimistic-rollout / pessimistic-optimization offline RL toolkit"};
  app.require_subcommand(1);

  Common common;
  std::size_t collect_n = 0;
  bool jsonl = false;
  auto* collect = app.add_subcommand("collect-data", "collect a RiskWorld offline dataset (.rbuf)");
  add_common(collect, common);
  collect->add_option("--n", collect_n, "transitions (default: experiment.dataset_size)");
  collect->add_flag("--jsonl", jsonl, "also write a JSON-lines export");

  std::string data_path;
  auto* train = app.add_subcommand("train-dynamics", "train the dynamics ensemble");
  add_common(train, common);
  train->add_option("--data", data_path, "D_env .rbuf (default: collect a fresh dataset)");

  auto* run = app.add_subcommand("run", "full training run over all seeds");
  add_common(run, common);

  LsviArgs lsvi_args;
  auto* lsvi = app.add_subcommand("lsvi", "LSVI-ORPO sweeps on synthetic linear MDPs");
  add_common(lsvi, common);
  lsvi->add_option("--instance", lsvi_args.instance, "needle | random");
  lsvi->add_option("--states", lsvi_args.states);
  lsvi->add_option("--actions", lsvi_args.actions);
  lsvi->add_option("--horizon", lsvi_args.horizon);
  lsvi->add_option("--episodes", lsvi_args.episodes);
  lsvi->add_option("--runs", lsvi_args.runs, "seeds 0..runs-1 when --seed is absent");
  lsvi->add_option("--c", lsvi_args.c, "bonus constant");
  lsvi->add_option("--lambda", lsvi_args.lambda, "explicit bonus coefficient (0 = greedy)");
  lsvi->add_flag("--tune", lsvi_args.tune, "tune the bonus constant on the two-arm bandit");
  lsvi->add_flag("--admissibility", lsvi_args.admissibility, "run the bonus admissibility check");

  std::string policy_path, score_env;
  int eval_episodes = 500;
  double raw_return = 0.0;
  auto* eval = app.add_subcommand("eval", "evaluate a policy checkpoint or normalize a score");
  add_common(eval, common);
  eval->add_option("--policy", policy_path, "policy checkpoint");
  eval->add_option("--episodes", eval_episodes);
  eval->add_option("--score-env", score_env, "halfcheetah | hopper | walker2d");
  auto* raw_opt = eval->add_option("--raw-return", raw_return, "normalize this return and exit");

  std::string dyn_path, heuristic = "ensemble_std";
  int grid_n = 61;
  auto* grid = app.add_subcommand("export-grid", "uncertainty field CSV of a dynamics checkpoint");
  add_common(grid, common);
  grid->add_option("--dynamics", dyn_path, "dynamics checkpoint")->required();
  grid->add_option("--heuristic", heuristic);
  grid->add_option("--n", grid_n, "grid points per axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*collect) return cmd_collect(common, collect_n, jsonl);
    if (*train) return cmd_train_dynamics(common, data_path);
    if (*run) return cmd_run(common);
    if (*lsvi) return cmd_lsvi(common, lsvi_args);
    if (*eval) return cmd_eval(common, policy_path, eval_episodes, score_env, raw_return, raw_opt->count() > 0);
    if (*grid) return cmd_export_grid(common, dyn_path, heuristic, grid_n);
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const FormatError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}
