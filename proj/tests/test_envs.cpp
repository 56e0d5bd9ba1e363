#include "orpo/envs.hpp"

#include <doctest.h>

#include <cmath>

using namespace orpo;

TEST_CASE("riskworld step examples") {
  const auto a = riskworld_step({0.0, 0.0, 0}, Eigen::Vector2d(1.0, 1.0));
  CHECK(a.next.x == 1.0);
  CHECK(a.next.y == 1.0);
  CHECK(a.reward == doctest::Approx(2.0 / std::sqrt(2.0)).epsilon(1e-12));

  const auto b = riskworld_step({3.0, 3.0, 0}, Eigen::Vector2d(1.0, 1.0));
  CHECK(b.next.x == 3.0);
  CHECK(b.next.y == 3.0);
  CHECK(b.reward == doctest::Approx(6.0 / std::sqrt(2.0)).epsilon(1e-12));

  const auto c = riskworld_step({0.0, 0.0, 0}, Eigen::Vector2d(0.0, 0.0));
  CHECK(c.reward == 0.0);

  // Actions are clipped to the unit box before use.
  const auto d = riskworld_step({0.0, 0.0, 0}, Eigen::Vector2d(5.0, -7.0));
  CHECK(d.next.x == 1.0);
  CHECK(d.next.y == -1.0);

  CHECK(riskworld_reward_of(Vector::Zero(2), Vector::Ones(2)) == doctest::Approx(std::sqrt(2.0)));
  CHECK(riskworld_reward(-1.0, -2.0) < 0.0);
}

TEST_CASE("riskworld episodes stay in the square and last ten steps") {
  Rng rng(3);
  RiskWorld env;
  for (int e = 0; e < 50; ++e) {
    Vector s = env.reset(rng);
    CHECK(std::abs(s[0] + s[1]) <= riskworld::kBandHalfWidth + 1e-12);
    int steps = 0;
    bool done = false;
    while (!done) {
      Vector a(2);
      a << rng.uniform(-2, 2), rng.uniform(-2, 2);
      const StepResult r = env.step(a);
      ++steps;
      CHECK(r.next_state.cwiseAbs().maxCoeff() <= riskworld::kBound);
      done = r.terminal;
      REQUIRE(steps <= riskworld::kHorizon);
    }
    CHECK(steps == riskworld::kHorizon);
  }
}

TEST_CASE("riskworld dataset follows the one-step protocol") {
  Rng rng(4);
  CHECK_THROWS_AS(collect_riskworld_dataset(0, rng), ValidationError);
  const auto data = collect_riskworld_dataset(10000, rng);
  REQUIRE(data.size() == 10000);
  Vector mean = Vector::Zero(2);
  for (const auto& t : data) {
    CHECK(std::abs(t.state[0] + t.state[1]) <= 0.25 + 1e-12);
    CHECK(t.action.cwiseAbs().maxCoeff() <= 1.0);
    const double line_dist = std::abs(t.next_state[0] + t.next_state[1]) / std::sqrt(2.0);
    CHECK(line_dist <= std::sqrt(2.0) + 0.25 * std::sqrt(2.0) + 1e-12);
    CHECK_FALSE(t.terminal);
    CHECK_FALSE(t.from_model());
    mean += t.state;
  }
  mean /= 10000.0;
  CHECK(std::abs(mean[0]) < 0.1);
  CHECK(std::abs(mean[1]) < 0.1);
}

TEST_CASE("random tabular MDPs are valid linear MDPs") {
  Rng rng(8);
  const LinearMdpSpec mdp = make_linear_mdp(LinearMdpKind::tabular_random, 5, 3, 5, rng);
  CHECK(mdp.dim() == 15);
  for (int s = 0; s < 5; ++s)
    for (int a = 0; a < 3; ++a) {
      CHECK(std::abs(mdp.transition_row(s, a).sum() - 1.0) <= 1e-12);
      CHECK((mdp.transition_row(s, a).array() >= 0.0).all());
      CHECK(mdp.reward(s, a) >= 0.0);
      CHECK(mdp.reward(s, a) <= 1.0);
      CHECK(mdp.feature(s, a).norm() <= 1.0 + 1e-15);
    }
  CHECK_NOTHROW(mdp.validate());
  CHECK_THROWS_AS(make_linear_mdp(LinearMdpKind::tabular_random, 0, 3, 5, rng), ValidationError);
  CHECK_THROWS_AS(make_linear_mdp(LinearMdpKind::needle, 6, 1, 5, rng), ValidationError);
}

TEST_CASE("tabular construction checks its inputs") {
  Matrix P(2, 2);
  P << 0.5, 0.5, 0.2, 0.7;  // second row sums to 0.9
  CHECK_THROWS_AS(make_tabular_mdp(P, Matrix::Zero(2, 1), 2), ValidationError);
  Matrix R_bad(2, 1);
  R_bad << 0.5, 1.5;
  Matrix P_ok(2, 2);
  P_ok << 0.5, 0.5, 0.5, 0.5;
  CHECK_THROWS_AS(make_tabular_mdp(P_ok, R_bad, 2), ValidationError);
  CHECK_NOTHROW(make_tabular_mdp(P_ok, Matrix::Constant(2, 1, 0.3), 2));
}
