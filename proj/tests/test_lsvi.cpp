#include "orpo/lsvi.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

using namespace orpo;

TEST_CASE("bandit optimal value picks the better arm") {
  const LinearMdpSpec b = make_bandit(0.2, 0.8);
  const ValueTables v = optimal_values(b);
  CHECK(v.values[0][0] == doctest::Approx(0.8));
  CHECK(v.policy[0][0] == 1);
  CHECK(v.values[1][0] == 0.0);
}

TEST_CASE("exact policy evaluation agrees with Monte Carlo") {
  Rng rng(21);
  const LinearMdpSpec mdp = make_linear_mdp(LinearMdpKind::tabular_random, 5, 3, 5, rng);
  const ValueTables opt = optimal_values(mdp);
  const ValueTables ev = evaluate_policy_exact(mdp, opt.policy);
  for (int h = 0; h <= mdp.horizon; ++h) CHECK((ev.values[h] - opt.values[h]).norm() < 1e-12);

  const auto returns = simulate_tabular_returns(mdp, opt.policy, 100000, rng);
  const double n = static_cast<double>(returns.size());
  const double mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  const double se = std::sqrt(var / (n - 1) / n);
  CHECK(std::abs(mean - opt.values[0][mdp.initial_state]) <= 3 * se);
}

TEST_CASE("optimal values dominate any fixed policy") {
  Rng rng(22);
  const LinearMdpSpec mdp = make_linear_mdp(LinearMdpKind::tabular_random, 4, 2, 4, rng);
  const ValueTables opt = optimal_values(mdp);
  for (int trial = 0; trial < 20; ++trial) {
    TabularPolicy pi(mdp.horizon, std::vector<int>(mdp.num_states));
    for (auto& row : pi)
      for (auto& a : row) a = static_cast<int>(rng.index(mdp.num_actions));
    const ValueTables ev = evaluate_policy_exact(mdp, pi);
    for (int h = 0; h < mdp.horizon; ++h)
      CHECK((opt.values[h] - ev.values[h]).minCoeff() >= -1e-12);
  }
}

TEST_CASE("needle has a clear gap between optimal and myopic play") {
  Rng rng(23);
  const LinearMdpSpec mdp = make_linear_mdp(LinearMdpKind::needle, 6, 2, 5, rng);
  const ValueTables opt = optimal_values(mdp);
  TabularPolicy myopic(mdp.horizon, std::vector<int>(mdp.num_states, 0));
  const ValueTables ev = evaluate_policy_exact(mdp, myopic);
  CHECK(opt.values[0][mdp.initial_state] - ev.values[0][mdp.initial_state] >= 0.3);
}

TEST_CASE("regret arithmetic") {
  const RegretSeries r = regret_series({0.5, 0.8, 1.0, 0.9}, 1.0);
  CHECK(r.instant[0] == doctest::Approx(0.5));
  CHECK(r.cumulative[3] == doctest::Approx(0.5 + 0.2 + 0.0 + 0.1));
  CHECK(r.total() == doctest::Approx(0.8));
  CHECK(r.average_at(2) == doctest::Approx(0.35));
}

TEST_CASE("bonus scale formula") {
  const double v = lsvi_bonus_scale(0.5, 4, 3, 100, 0.05);
  CHECK(v == doctest::Approx(0.5 * 4 * 3 * std::sqrt(std::log(2.0 * 4 * 300 / 0.05))).epsilon(1e-14));
  CHECK_THROWS_AS(lsvi_bonus_scale(0.5, 0, 3, 100, 0.05), ValidationError);
}

TEST_CASE("a single LSVI episode acts greedily on the prior") {
  Rng rng(24);
  LsviOptions opt;
  opt.episodes = 1;
  const LinearMdpSpec b = make_bandit(0.2, 0.8);
  const LsviResult res = run_lsvi_orpo(b, opt, rng);
  REQUIRE(res.policy_values.size() == 1);
  CHECK(res.state.episodes == 1);
  // With no data every Q is 0, ties go to action 0.
  CHECK(res.policy_values[0] == doctest::Approx(0.2));
}

TEST_CASE("LSVI statistics match a direct ridge fit") {
  Rng rng(25);
  const LinearMdpSpec mdp = make_linear_mdp(LinearMdpKind::tabular_random, 3, 2, 3, rng);
  LsviOptions opt;
  opt.episodes = 200;
  opt.lambda_bonus = lsvi_bonus_scale(kLsviBonusConstant, mdp.dim(), mdp.horizon, opt.episodes,
                                      kLsviConfidence);
  opt.refactor_every = 1000;  // only rank-one updates
  const LsviResult res = run_lsvi_orpo(mdp, opt, rng);
  for (int h = 0; h < mdp.horizon; ++h) {
    const Matrix& g = res.state.gram[h];
    CHECK((g * res.state.gram_inverse[h] - Matrix::Identity(g.rows(), g.cols())).norm() < 1e-9);
    // Each episode adds exactly one sample at each step.
    CHECK(g.trace() == doctest::Approx(opt.beta * mdp.dim() + opt.episodes));
  }
  CHECK(res.regret.instant.size() == 200);
  for (double r : res.regret.instant) CHECK(r >= -1e-12);
}

TEST_CASE("LSVI is deterministic under a fixed seed") {
  const LinearMdpSpec b = make_bandit(0.2, 0.8);
  LsviOptions opt;
  opt.episodes = 50;
  opt.lambda_bonus = 1.0;
  Rng r1(5), r2(5);
  CHECK(run_lsvi_orpo(b, opt, r1).policy_values == run_lsvi_orpo(b, opt, r2).policy_values);
}

TEST_CASE("admissibility holds on a small tabular MDP with a generous bonus") {
  Rng rng(26);
  const LinearMdpSpec mdp = make_linear_mdp(LinearMdpKind::tabular_random, 3, 2, 3, rng);
  const AdmissibilityReport rep = check_admissibility(mdp, 200, 50, 1.0, 10.0, rng);
  CHECK(rep.trials == 200);
  CHECK(rep.failure_rate() <= 0.05);
  const AdmissibilityReport tight = check_admissibility(mdp, 200, 50, 1.0, 1e-3, rng);
  CHECK(tight.failure_rate() > 0.5);
}

TEST_CASE("bandit with a unit bonus explores both arms then commits") {
  const LinearMdpSpec b = make_bandit(0.2, 0.8);
  LsviOptions opt;
  opt.episodes = 50;
  opt.lambda_bonus = 1.0;
  opt.keep_snapshots = true;
  Rng rng(30);
  const LsviResult res = run_lsvi_orpo(b, opt, rng);
  std::set<int> early;
  for (int k = 0; k < 3; ++k) early.insert(res.snapshots[k][0][0]);
  CHECK(early.size() == 2);
  CHECK(res.snapshots.back()[0][0] == 1);
  CHECK(res.regret.total() <= 1.2 + 1e-12);
}

TEST_CASE("with no data Q is the clipped prior bonus") {
  Rng rng(31);
  const LinearMdpSpec mdp = make_linear_mdp(LinearMdpKind::tabular_random, 3, 2, 3, rng);
  LsviOptions opt;
  opt.episodes = 1;
  opt.beta = 2.0;
  opt.lambda_bonus = 0.9;
  const LsviResult res = run_lsvi_orpo(mdp, opt, rng);
  // Q is recorded before the episode's data is added, so it reflects Λ = βI.
  for (int h = 0; h < mdp.horizon; ++h)
    CHECK((res.state.q[h].array() - std::min(0.9 / std::sqrt(2.0), 3.0)).abs().maxCoeff() < 1e-12);
}

TEST_CASE("tabular bonus after m visits is lambda over sqrt(m + beta)") {
  Matrix g = Matrix::Identity(6, 6) * 1.5;
  Vector e = Vector::Zero(6);
  e[2] = 1.0;
  for (int m = 1; m <= 20; ++m) {
    g += e * e.transpose();
    CHECK(std::abs(0.7 * std::sqrt(posterior_variance(g, e)) - 0.7 / std::sqrt(m + 1.5)) < 1e-12);
  }
}
