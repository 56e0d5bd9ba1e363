#include "orpo/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace orpo {

namespace {

struct Moments {
  double mean = 0.0;
  double std = 0.0;  // population
  double se = 0.0;   // sample std / √n
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  const double n = static_cast<double>(v.size());
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / n);
  m.se = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return m;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  return out;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["mean_return"] = mean_return;
  j["std_return"] = std_return;
  j["episodes"] = episodes;
  j["discounting"] = discounting == Discounting::gamma ? "gamma" : "undiscounted_sum";
  j["gamma"] = gamma;
  j["returns"] = returns;
  if (normalized_score) j["normalized_score"] = *normalized_score;
  if (eps_u) j["eps_u"] = *eps_u;
  if (action_distance) j["action_distance"] = *action_distance;
  return j.dump(2);
}

EvalReport evaluate_policy(const Policy& policy, Environment& env, int episodes, Rng& rng,
                           Discounting discounting, double gamma, int max_steps) {
  if (episodes < 1) throw ValidationError("evaluate_policy: episodes must be >= 1");
  if (max_steps < 1) throw ValidationError("evaluate_policy: max_steps must be >= 1");
  if (policy.state_dim() != env.state_dim() || policy.action_dim() != env.action_dim())
    throw ValidationError("evaluate_policy: policy and environment dimensions differ");
  EvalReport rep;
  rep.episodes = episodes;
  rep.discounting = discounting;
  rep.gamma = discounting == Discounting::gamma ? gamma : 1.0;
  for (int e = 0; e < episodes; ++e) {
    Vector s = env.reset(rng);
    double total = 0.0, weight = 1.0;
    for (int t = 0; t < max_steps; ++t) {
      const Vector a = policy.act(s, ActionMode::deterministic, nullptr);
      const StepResult r = env.step(a);
      total += weight * r.reward;
      weight *= rep.gamma;
      s = r.next_state;
      if (r.terminal) break;
    }
    rep.returns.push_back(total);
  }
  const Moments m = moments(rep.returns);
  rep.mean_return = m.mean;
  rep.std_return = m.std;
  return rep;
}

ScoreReference score_reference(const std::string& env_name) {
  if (env_name == "halfcheetah") return {-280.18, 12135.0};
  if (env_name == "hopper") return {-20.27, 3234.3};
  if (env_name == "walker2d") return {1.63, 4592.3};
  throw ValidationError("normalized_score: unknown environment '" + env_name + "'");
}

double normalized_score(double raw_return, const std::string& env_name) {
  const ScoreReference ref = score_reference(env_name);
  return 100.0 * (raw_return - ref.random) / (ref.expert - ref.random);
}

double action_distance(const Policy& policy, const std::vector<Transition>& data,
                       std::vector<double>* per_pair) {
  if (data.empty()) throw ValidationError("action_distance: empty dataset");
  const auto n = static_cast<Eigen::Index>(data.size());
  Matrix s(n, policy.state_dim()), a(n, policy.action_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    s.row(i) = data[static_cast<std::size_t>(i)].state.transpose();
    a.row(i) = data[static_cast<std::size_t>(i)].action.transpose();
  }
  const Vector dist = (policy.act_batch(s, ActionMode::deterministic, nullptr) - a).rowwise().norm();
  if (per_pair) per_pair->assign(dist.data(), dist.data() + dist.size());
  return dist.mean();
}

Histogram make_histogram(const std::vector<double>& values, int bins, double lo, double hi) {
  if (bins < 1 || !(hi > lo)) throw ValidationError("make_histogram: bad range");
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * i / bins);
  for (double v : values) {
    int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    ++h.counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))];
  }
  return h;
}

void write_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "bin_lo,bin_hi,count\n";
  char line[96];
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%zu\n", h.edges[i], h.edges[i + 1], h.counts[i]);
    out << line;
  }
}

double avg_model_uncertainty(const Policy& policy, const DynamicsModel& model,
                             UncertaintyHeuristic heuristic, const std::vector<Transition>& starts,
                             int rollouts, int horizon, double gamma, Rng& rng,
                             double truncation_box) {
  if (starts.empty()) throw ValidationError("avg_model_uncertainty: no start states");
  if (rollouts < 1 || horizon < 1 || gamma < 0.0 || gamma > 1.0)
    throw ValidationError("avg_model_uncertainty: bad rollout settings");
  Matrix s(rollouts, model.state_dim());
  for (int r = 0; r < rollouts; ++r) s.row(r) = starts[rng.index(starts.size())].state.transpose();
  double weighted = 0.0, weights = 0.0, w = 1.0;
  for (int t = 0; t < horizon && s.rows() > 0; ++t) {
    const Matrix a = policy.act_batch(s, ActionMode::stochastic, &rng);
    const ModelStep step = model.step(s, a, heuristic, rng);
    weighted += w * step.uncertainty.sum();
    weights += w * static_cast<double>(s.rows());
    w *= gamma;
    const Matrix z = model.normalize_states(step.next_states);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      if (z.row(i).cwiseAbs().maxCoeff() <= truncation_box) keep.push_back(i);
    Matrix next(static_cast<Eigen::Index>(keep.size()), s.cols());
    for (std::size_t i = 0; i < keep.size(); ++i)
      next.row(static_cast<Eigen::Index>(i)) = step.next_states.row(keep[i]);
    s = std::move(next);
  }
  return weights > 0.0 ? weighted / weights : 0.0;
}

std::vector<ModelErrorEstimate> model_error_estimate(const NextStateSampler& model,
                                                     const NextStateSampler& env,
                                                     const ValueFunction& value,
                                                     const std::vector<std::pair<Vector, Vector>>& pairs,
                                                     int samples, Rng& rng) {
  if (samples < 2) throw ValidationError("model_error_estimate: need at least 2 samples");
  std::vector<ModelErrorEstimate> out;
  std::vector<double> vm(static_cast<std::size_t>(samples)), ve(static_cast<std::size_t>(samples));
  for (const auto& [s, a] : pairs) {
    for (int i = 0; i < samples; ++i) vm[static_cast<std::size_t>(i)] = value(model(s, a, rng));
    for (int i = 0; i < samples; ++i) ve[static_cast<std::size_t>(i)] = value(env(s, a, rng));
    const Moments mm = moments(vm), me = moments(ve);
    out.push_back({mm.mean - me.mean, std::sqrt(mm.se * mm.se + me.se * me.se)});
  }
  return out;
}

bool LowerBoundCheck::holds() const {
  return model_return <= real_return + 2.0 * std::sqrt(model_se * model_se + real_se * real_se);
}

LowerBoundCheck tabular_lower_bound(const LinearMdpSpec& real, const LinearMdpSpec& model,
                                    const Matrix& uncertainty, double lambda_p,
                                    const TabularPolicy& policy, int episodes, Rng& rng) {
  if (uncertainty.rows() != real.num_states || uncertainty.cols() != real.num_actions)
    throw ValidationError("tabular_lower_bound: uncertainty must be S x A");
  if ((uncertainty.array() < 0.0).any()) throw ValidationError("tabular_lower_bound: negative u");
  const Matrix penalty = -lambda_p * uncertainty;
  Rng model_rng = rng.derive(1), real_rng = rng.derive(2);
  const Moments m = moments(simulate_tabular_returns(model, policy, episodes, model_rng, &penalty));
  const Moments r = moments(simulate_tabular_returns(real, policy, episodes, real_rng));
  return {m.mean, m.se, r.mean, r.se};
}

namespace {
std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}
}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("spearman: need two equal-length samples");
  const auto rx = ranks(x), ry = ranks(y);
  const Eigen::Map<const Vector> a(rx.data(), static_cast<Eigen::Index>(rx.size()));
  const Eigen::Map<const Vector> b(ry.data(), static_cast<Eigen::Index>(ry.size()));
  const Vector ca = a.array() - a.mean(), cb = b.array() - b.mean();
  const double denom = ca.norm() * cb.norm();
  if (denom == 0.0) return 0.0;
  return ca.dot(cb) / denom;
}

std::vector<GridPoint> uncertainty_grid(const DynamicsModel& model, UncertaintyHeuristic heuristic,
                                        int n, double bound) {
  if (n < 2 || !(bound > 0.0)) throw ValidationError("uncertainty_grid: bad grid");
  if (model.state_dim() != 2 || model.action_dim() != 2)
    throw ValidationError("uncertainty_grid: needs a 2-D state and action model");
  const Eigen::Index cells = static_cast<Eigen::Index>(n) * n;
  Matrix s(cells, 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      s.row(static_cast<Eigen::Index>(i) * n + j) << -bound + 2.0 * bound * i / (n - 1),
          -bound + 2.0 * bound * j / (n - 1);
  Vector u = Vector::Zero(cells);
  int lattice = 0;
  for (int ax = -1; ax <= 1; ++ax)
    for (int ay = -1; ay <= 1; ++ay) {
      Matrix a(cells, 2);
      a.col(0).setConstant(ax);
      a.col(1).setConstant(ay);
      u += model.uncertainty(s, a, heuristic);
      ++lattice;
    }
  u /= lattice;
  std::vector<GridPoint> out;
  for (Eigen::Index c = 0; c < cells; ++c) out.push_back({s(c, 0), s(c, 1), u(c)});
  return out;
}

void write_grid_csv(const std::vector<GridPoint>& grid, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "x,y,u\n";
  char line[96];
  for (const auto& p : grid) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", p.x, p.y, p.u);
    out << line;
  }
}

double grid_distance_correlation(const std::vector<GridPoint>& grid) {
  std::vector<double> dist, u;
  for (const auto& p : grid) {
    dist.push_back(std::abs(p.x + p.y) / std::sqrt(2.0));
    u.push_back(p.u);
  }
  return spearman(dist, u);
}

}  // namespace orpo
