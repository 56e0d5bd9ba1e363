#include "orpo/lsvi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace orpo {

namespace {

double pair_reward(const LinearMdpSpec& mdp, int s, int a, const Matrix* offset) {
  return mdp.reward(s, a) + (offset ? (*offset)(s, a) : 0.0);
}

void check_offset(const LinearMdpSpec& mdp, const Matrix* offset) {
  if (offset && (offset->rows() != mdp.num_states || offset->cols() != mdp.num_actions))
    throw ValidationError("reward offset must be S x A");
}

int greedy_action(const Matrix& q, int s) {
  int best = 0;
  for (int a = 1; a < q.cols(); ++a)
    if (q(s, a) > q(s, best)) best = a;
  return best;
}

// Precomputed P (S·A x S) so the DP loops avoid rebuilding rows.
Matrix transition_matrix(const LinearMdpSpec& mdp) {
  return mdp.features * mdp.transition_weights;
}

}  // namespace

ValueTables optimal_values(const LinearMdpSpec& mdp, const Matrix* reward_offset) {
  mdp.validate();
  check_offset(mdp, reward_offset);
  const int S = mdp.num_states, A = mdp.num_actions, H = mdp.horizon;
  const Matrix P = transition_matrix(mdp);
  ValueTables t;
  t.q.assign(H, Matrix::Zero(S, A));
  t.values.assign(H + 1, Vector::Zero(S));
  t.policy.assign(H, std::vector<int>(S, 0));
  for (int h = H - 1; h >= 0; --h) {
    const Vector pv = P * t.values[h + 1];
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a)
        t.q[h](s, a) = pair_reward(mdp, s, a, reward_offset) + pv(mdp.pair_index(s, a));
      t.policy[h][s] = greedy_action(t.q[h], s);
      t.values[h](s) = t.q[h](s, t.policy[h][s]);
    }
  }
  return t;
}

ValueTables evaluate_policy_exact(const LinearMdpSpec& mdp, const TabularPolicy& policy,
                                  const Matrix* reward_offset) {
  check_offset(mdp, reward_offset);
  const int S = mdp.num_states, A = mdp.num_actions, H = mdp.horizon;
  if (static_cast<int>(policy.size()) != H) throw ValidationError("policy must have H steps");
  const Matrix P = transition_matrix(mdp);
  ValueTables t;
  t.q.assign(H, Matrix::Zero(S, A));
  t.values.assign(H + 1, Vector::Zero(S));
  t.policy = policy;
  for (int h = H - 1; h >= 0; --h) {
    if (static_cast<int>(policy[h].size()) != S) throw ValidationError("policy step has wrong size");
    const Vector pv = P * t.values[h + 1];
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a)
        t.q[h](s, a) = pair_reward(mdp, s, a, reward_offset) + pv(mdp.pair_index(s, a));
      const int a = policy[h][s];
      if (a < 0 || a >= A) throw ValidationError("policy action out of range");
      t.values[h](s) = t.q[h](s, a);
    }
  }
  return t;
}

double RegretSeries::average_at(std::size_t k) const {
  if (k == 0 || k > cumulative.size()) throw ValidationError("average_at: k out of range");
  return cumulative[k - 1] / static_cast<double>(k);
}

RegretSeries regret_series(const std::vector<double>& policy_values, double v_star) {
  RegretSeries r;
  double sum = 0.0;
  for (double v : policy_values) {
    r.instant.push_back(v_star - v);
    sum += v_star - v;
    r.cumulative.push_back(sum);
  }
  return r;
}

LsviResult run_lsvi_orpo(const LinearMdpSpec& mdp, const LsviOptions& options, Rng& rng) {
  mdp.validate();
  if (options.episodes < 1) throw ValidationError("run_lsvi_orpo: episodes must be >= 1");
  if (!(options.beta > 0.0)) throw ValidationError("run_lsvi_orpo: beta must be positive");
  if (options.lambda_bonus < 0.0) throw ValidationError("run_lsvi_orpo: lambda_bonus must be >= 0");
  if (options.refactor_every < 1) throw ValidationError("run_lsvi_orpo: refactor_every must be >= 1");
  const Matrix* offset = options.reward_offset ? &*options.reward_offset : nullptr;
  check_offset(mdp, offset);

  const int S = mdp.num_states, A = mdp.num_actions, H = mdp.horizon, d = mdp.dim();
  const int SA = S * A;
  const Matrix& phi = mdp.features;  // SA x d

  // Per-step sufficient statistics. Features depend only on (s, a), so the
  // regression right-hand side Σφ(r + V(s')) collapses onto visit counts.
  std::vector<Vector> visits(H, Vector::Zero(SA));
  std::vector<Matrix> next_counts(H, Matrix::Zero(SA, S));
  Vector rp(SA);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) rp(mdp.pair_index(s, a)) = pair_reward(mdp, s, a, offset);

  LsviResult out;
  LsviState& st = out.state;
  st.beta = options.beta;
  st.lambda_bonus = options.lambda_bonus;
  st.horizon = H;
  st.gram.assign(H, Matrix::Identity(d, d) * options.beta);
  st.gram_inverse.assign(H, Matrix::Identity(d, d) / options.beta);
  st.weights.assign(H, Vector::Zero(d));
  st.q.assign(H, Matrix::Zero(S, A));

  const ValueTables star = optimal_values(mdp);
  const double v_star = star.values[0](mdp.initial_state);
  const double cap = static_cast<double>(H);

  for (int k = 0; k < options.episodes; ++k) {
    if (k > 0 && k % options.refactor_every == 0) {
      for (int h = 0; h < H; ++h) {
        Matrix g = Matrix::Identity(d, d) * options.beta;
        g.noalias() += phi.transpose() * visits[h].asDiagonal() * phi;
        st.gram[h] = g;
        Eigen::LLT<Matrix> llt(g);
        if (llt.info() != Eigen::Success) throw NumericalError("run_lsvi_orpo: Gram not SPD");
        st.gram_inverse[h] = llt.solve(Matrix::Identity(d, d));
      }
    }

    Vector v_next = Vector::Zero(S);
    for (int h = H - 1; h >= 0; --h) {
      const Vector target_sum = visits[h].cwiseProduct(rp) + next_counts[h] * v_next;
      st.weights[h] = st.gram_inverse[h] * (phi.transpose() * target_sum);
      const Vector mean = phi * st.weights[h];
      const Vector var = (phi * st.gram_inverse[h]).cwiseProduct(phi).rowwise().sum();
      Vector v(S);
      for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
          const int i = mdp.pair_index(s, a);
          const double bonus = options.lambda_bonus * std::sqrt(std::max(var(i), 0.0));
          st.q[h](s, a) = std::clamp(mean(i) + bonus, 0.0, cap);
        }
        v(s) = st.q[h].row(s).maxCoeff();
      }
      v_next = v;
    }

    TabularPolicy pi(H, std::vector<int>(S, 0));
    for (int h = 0; h < H; ++h)
      for (int s = 0; s < S; ++s) pi[h][s] = greedy_action(st.q[h], s);

    int s = mdp.initial_state;
    for (int h = 0; h < H; ++h) {
      const int a = pi[h][s];
      const int s_next = sample_next_state(mdp, s, a, rng);
      const int i = mdp.pair_index(s, a);
      visits[h](i) += 1.0;
      next_counts[h](i, s_next) += 1.0;
      const Vector f = phi.row(i).transpose();
      st.gram[h].noalias() += f * f.transpose();
      const Vector g = st.gram_inverse[h] * f;
      st.gram_inverse[h].noalias() -= (g * g.transpose()) / (1.0 + f.dot(g));
      s = s_next;
    }

    out.policy_values.push_back(evaluate_policy_exact(mdp, pi).values[0](mdp.initial_state));
    if (options.keep_snapshots) out.snapshots.push_back(std::move(pi));
    st.episodes = k + 1;
  }
  out.regret = regret_series(out.policy_values, v_star);
  return out;
}

double lsvi_bonus_scale(double c, int dim, int horizon, int episodes, double p) {
  if (c < 0.0 || dim < 1 || horizon < 1 || episodes < 1 || !(p > 0.0 && p < 1.0))
    throw ValidationError("lsvi_bonus_scale: bad arguments");
  const double T = static_cast<double>(episodes) * horizon;
  const double iota = std::log(2.0 * dim * T / p);
  return c * dim * horizon * std::sqrt(iota);
}

LinearMdpSpec make_bandit(double reward_0, double reward_1) {
  Matrix P = Matrix::Ones(2, 1);
  Matrix R(1, 2);
  R << reward_0, reward_1;
  return make_tabular_mdp(P, R, 1, 0);
}

TuneResult lsvi_tune_constant(const std::vector<double>& grid, int episodes) {
  if (grid.empty()) throw ValidationError("lsvi_tune_constant: empty grid");
  const LinearMdpSpec bandit = make_bandit(0.2, 0.8);
  TuneResult out;
  out.grid = grid;
  double best_regret = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    LsviOptions opt;
    opt.episodes = episodes;
    opt.lambda_bonus = lsvi_bonus_scale(grid[i], bandit.dim(), bandit.horizon, episodes, kLsviConfidence);
    Rng rng(0);
    const double r = run_lsvi_orpo(bandit, opt, rng).regret.total();
    out.regret.push_back(r);
    if (i == 0 || r < best_regret || (r == best_regret && grid[i] < out.best)) {
      best_regret = r;
      out.best = grid[i];
    }
  }
  return out;
}

AdmissibilityReport check_admissibility(const LinearMdpSpec& mdp, int trials, int max_samples,
                                        double beta, double lambda, Rng& rng) {
  if (trials < 1 || max_samples < 1 || !(beta > 0.0) || lambda < 0.0)
    throw ValidationError("check_admissibility: bad arguments");
  const ValueTables star = optimal_values(mdp);
  const Matrix P = transition_matrix(mdp);
  AdmissibilityReport rep;
  rep.trials = trials;
  rep.lambda = lambda;
  for (int t = 0; t < trials; ++t) {
    bool failed = false;
    for (int h = 0; h < mdp.horizon; ++h) {
      const Vector& v = star.values[h + 1];
      for (int s = 0; s < mdp.num_states; ++s) {
        for (int a = 0; a < mdp.num_actions; ++a) {
          const int n = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(max_samples)));
          const double r = mdp.reward(s, a);
          double sum = 0.0;
          for (int i = 0; i < n; ++i) sum += r + v(sample_next_state(mdp, s, a, rng));
          const double estimate = sum / (n + beta);
          const double truth = r + P.row(mdp.pair_index(s, a)).dot(v);
          if (std::abs(estimate - truth) > lambda / std::sqrt(n + beta)) failed = true;
        }
      }
    }
    if (failed) ++rep.failures;
  }
  return rep;
}

void write_regret_csv(const RegretSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out << "episode,instant_regret,cumulative_regret\n";
  char line[96];
  for (std::size_t k = 0; k < series.instant.size(); ++k) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", k + 1, series.instant[k], series.cumulative[k]);
    out << line;
  }
}

}  // namespace orpo
