#include "orpo/policies.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace orpo;

namespace {

Batch random_batch(int n, Rng& rng, double reward = std::nan("")) {
  Batch b;
  b.states = test::random_matrix(n, 2, rng);
  b.actions = test::random_matrix(n, 2, rng, 0.5).cwiseMax(-1.0).cwiseMin(1.0);
  b.rewards = std::isnan(reward) ? Vector(test::random_matrix(n, 1, rng).col(0))
                                 : Vector::Constant(n, reward);
  b.next_states = test::random_matrix(n, 2, rng);
  b.terminals = Vector::Zero(n);
  b.tags.assign(n, BufferTag::env);
  return b;
}

double check_net(MlpNetwork& net, const MlpGradient& g, const std::function<double()>& loss, Rng& rng) {
  return grad_check(net.parameter_pointers(), flatten(g), loss, rng);
}

}  // namespace

TEST_CASE("random policy stays inside the action box") {
  RandomPolicy p(2, 2, 0.5);
  Rng rng(1);
  const Matrix a = p.act_batch(Matrix::Zero(100, 2), ActionMode::stochastic, &rng);
  CHECK(a.cwiseAbs().maxCoeff() <= 0.5);
  CHECK(p.act_batch(Matrix::Zero(3, 2), ActionMode::deterministic, nullptr).norm() == 0.0);
}

TEST_CASE("SAC losses pass the finite-difference check") {
  Rng rng(2);
  SacConfig cfg;
  cfg.hidden = {16, 16};
  SacPolicy p(2, 2, cfg, rng);
  const Batch b = random_batch(32, rng);
  const Matrix noise = test::random_matrix(32, 2, rng);

  MlpGradient g1, g2;
  p.critic_loss(b, noise, &g1, &g2);
  CHECK(check_net(p.critic(0), g1, [&] { return p.critic_loss(b, noise, nullptr, nullptr); }, rng) <= 1e-4);
  CHECK(check_net(p.critic(1), g2, [&] { return p.critic_loss(b, noise, nullptr, nullptr); }, rng) <= 1e-4);

  MlpGradient ga;
  double mlp = 0.0;
  p.actor_loss(b, noise, &ga, &mlp);
  CHECK(check_net(p.actor(), ga, [&] { return p.actor_loss(b, noise, nullptr); }, rng) <= 1e-4);

  double grad = 0.0;
  p.alpha_loss(mlp, &grad);
  const double h = 1e-6;
  double& la = p.log_alpha_ref();
  const double saved = la;
  la = saved + h;
  const double up = p.alpha_loss(mlp, nullptr);
  la = saved - h;
  const double down = p.alpha_loss(mlp, nullptr);
  la = saved;
  CHECK(std::abs((up - down) / (2 * h) - grad) <= 1e-6 * std::max(1.0, std::abs(grad)));
}

TEST_CASE("SAC actions are bounded and deterministic mode is repeatable") {
  Rng rng(3);
  SacConfig cfg;
  cfg.hidden = {8};
  cfg.max_action = 2.0;
  SacPolicy p(2, 2, cfg, rng);
  const Matrix s = test::random_matrix(50, 2, rng, 10.0);
  CHECK(p.act_batch(s, ActionMode::stochastic, &rng).cwiseAbs().maxCoeff() <= 2.0);
  CHECK(p.act_batch(s, ActionMode::deterministic, nullptr) == p.act_batch(s, ActionMode::deterministic, nullptr));
  CHECK(p.target_entropy() == -2.0);
}

TEST_CASE("TD3+BC losses pass the finite-difference check") {
  Rng rng(4);
  Td3BcConfig cfg;
  cfg.hidden = {16, 16};
  Td3BcPolicy p(2, 2, cfg, rng);
  const Batch b = random_batch(32, rng);
  const Matrix noise = test::random_matrix(32, 2, rng);
  MlpGradient g1, g2;
  p.critic_loss(b, noise, &g1, &g2);
  CHECK(check_net(p.critic(0), g1, [&] { return p.critic_loss(b, noise, nullptr, nullptr); }, rng) <= 1e-4);
  CHECK(check_net(p.critic(1), g2, [&] { return p.critic_loss(b, noise, nullptr, nullptr); }, rng) <= 1e-4);

  MlpGradient ga;
  const double lambda = p.actor_loss(b, nullptr).lambda_bc;
  p.actor_loss(b, &ga, lambda);
  CHECK(check_net(p.actor(), ga, [&] { return p.actor_loss(b, nullptr, lambda).actor; }, rng) <= 1e-4);
}

TEST_CASE("TD3+BC with alpha_bc = 0 reduces to behaviour cloning") {
  Rng rng(5);
  Td3BcConfig cfg;
  cfg.hidden = {32, 32};
  cfg.alpha_bc = 0.0;
  cfg.actor_lr = 3e-3;
  cfg.policy_delay = 1;
  Td3BcPolicy p(2, 2, cfg, rng);
  Batch b = random_batch(64, rng);
  b.actions.col(0) = 0.5 * b.states.col(0).array().tanh();
  b.actions.col(1) = -0.5 * b.states.col(1).array().tanh();
  const auto first = p.actor_loss(b, nullptr);
  CHECK(first.lambda_bc == 0.0);
  CHECK(first.actor == doctest::Approx(first.bc_term));
  for (int i = 0; i < 1500; ++i) p.update(b, rng);
  CHECK(p.actor_loss(b, nullptr).bc_term < 0.01);
}

TEST_CASE("TD3+BC delays actor updates and tau = 1 copies the networks") {
  Rng rng(6);
  Td3BcConfig cfg;
  cfg.hidden = {8};
  cfg.tau = 1.0;
  cfg.policy_delay = 2;
  Td3BcPolicy p(2, 2, cfg, rng);
  const Batch b = random_batch(16, rng);
  const Vector before = p.actor().flat_parameters();
  CHECK_FALSE(p.update(b, rng).actor_updated);
  CHECK(p.actor().flat_parameters() == before);
  CHECK(p.update(b, rng).actor_updated);
  CHECK(p.actor().flat_parameters() != before);
  CHECK(p.target_actor().flat_parameters() == p.actor().flat_parameters());
  CHECK(p.target_critic(0).flat_parameters() == p.critic(0).flat_parameters());
}

TEST_CASE("critics converge to the reward when gamma = 0") {
  Rng rng(7);
  Td3BcConfig cfg;
  cfg.hidden = {32, 32};
  cfg.gamma = 0.0;
  cfg.critic_lr = 3e-3;
  Td3BcPolicy p(2, 2, cfg, rng);
  const Batch b = random_batch(64, rng, 0.7);
  for (int i = 0; i < 800; ++i) p.update(b, rng);
  const Matrix noise = Matrix::Zero(64, 2);
  CHECK(p.critic_loss(b, noise, nullptr, nullptr) < 1e-3);

  SacConfig sc;
  sc.hidden = {32, 32};
  sc.gamma = 0.0;
  sc.critic_lr = 3e-3;
  SacPolicy s(2, 2, sc, rng);
  for (int i = 0; i < 800; ++i) s.update(b, rng);
  CHECK(s.critic_loss(b, noise, nullptr, nullptr) < 1e-3);
}

TEST_CASE("policy checkpoints round trip") {
  Rng rng(8);
  const auto dir = test::temp_dir("policies");
  SacConfig sc;
  sc.hidden = {8};
  SacPolicy s(2, 2, sc, rng);
  s.save(dir / "s.bin");
  const SacPolicy s2 = SacPolicy::load(dir / "s.bin");
  const Matrix x = test::random_matrix(5, 2, rng);
  CHECK(s2.act_batch(x, ActionMode::deterministic, nullptr) == s.act_batch(x, ActionMode::deterministic, nullptr));
  CHECK(s2.alpha() == s.alpha());

  Td3BcConfig tc;
  tc.hidden = {8};
  Td3BcPolicy t(2, 2, tc, rng);
  t.set_state_normalizer(Normalizer{Vector::Constant(2, 0.5), Vector::Constant(2, 2.0)});
  t.save(dir / "t.bin");
  const Td3BcPolicy t2 = Td3BcPolicy::load(dir / "t.bin");
  CHECK(t2.act_batch(x, ActionMode::deterministic, nullptr) == t.act_batch(x, ActionMode::deterministic, nullptr));
  CHECK_THROWS_AS(Td3BcPolicy::load(dir / "s.bin"), FormatError);
}
