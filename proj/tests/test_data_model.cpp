#include "orpo/datasets.hpp"
#include "orpo/dynamics.hpp"
#include "orpo/shaping.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace orpo;

namespace {

Transition make_record(double v, bool model = false) {
  Transition t;
  t.state = Vector::Constant(2, v);
  t.action = Vector::Constant(2, -v);
  t.reward = v;
  t.next_state = Vector::Constant(2, v + 1);
  if (model) {
    t.raw_reward = v + 0.5;
    t.uncertainty = 0.25;
  }
  return t;
}

// s' = s + a, r = 1, u = 0.5 everywhere.
class ShiftModel : public DynamicsModel {
 public:
  int state_dim() const override { return 2; }
  int action_dim() const override { return 2; }
  ModelStep step(const Matrix& s, const Matrix& a, UncertaintyHeuristic, Rng&) const override {
    return {s + a, Vector::Ones(s.rows()), Vector::Constant(s.rows(), 0.5)};
  }
  Vector uncertainty(const Matrix& s, const Matrix&, UncertaintyHeuristic) const override {
    return Vector::Constant(s.rows(), 0.5);
  }
};

class ConstPolicy : public Policy {
 public:
  explicit ConstPolicy(double v) : v_(v) {}
  int state_dim() const override { return 2; }
  int action_dim() const override { return 2; }
  double max_action() const override { return 1.0; }
  Matrix act_batch(const Matrix& s, ActionMode, Rng*) const override {
    return Matrix::Constant(s.rows(), 2, v_);
  }

 private:
  double v_;
};

}  // namespace

TEST_CASE("replay buffer keeps the newest records in FIFO order") {
  ReplayBuffer b(BufferTag::pess, 3);
  for (int i = 0; i < 5; ++i) b.add(make_record(i));
  CHECK(b.size() == 3);
  CHECK(b.inserted() == 5);
  CHECK(b.at(0).reward == 2.0);
  CHECK(b.at(2).reward == 4.0);
  CHECK_THROWS_AS(b.at(3), std::out_of_range);
  CHECK_THROWS_AS(ReplayBuffer(BufferTag::env, 0), ValidationError);
}

TEST_CASE("mix counts sum to the batch size") {
  MixSpec m{{0.05, 0.45, 0.5}, 256};
  const auto c = m.counts();
  CHECK(c[0] + c[1] + c[2] == 256);
  CHECK(c[0] == 13);
  MixSpec bad{{0.5, 0.6}, 10};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  MixSpec tie{{0.5, 0.5}, 3};
  CHECK(tie.counts() == std::vector<std::size_t>{2, 1});
}

TEST_CASE("mixed batches draw from each buffer in proportion") {
  ReplayBuffer a(BufferTag::env, 100), b(BufferTag::pess, 100);
  for (int i = 0; i < 10; ++i) {
    a.add(make_record(1.0));
    b.add(make_record(-1.0, true));
  }
  Rng rng(1);
  const ReplayBuffer* bufs[] = {&a, &b};
  const Batch batch = sample_mixed_batch(bufs, MixSpec{{0.25, 0.75}, 8}, rng);
  CHECK(batch.size() == 8);
  int env = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.tags[i] == BufferTag::env) {
      ++env;
      CHECK(batch.rewards[i] == 1.0);
    } else {
      CHECK(batch.rewards[i] == -1.0);
    }
  }
  CHECK(env == 2);
}

TEST_CASE("relabeling subtracts the pessimistic penalty from the raw reward") {
  const RewardShaper shaper{2.0, 1.0, UncertaintyHeuristic::ensemble_std};
  const Transition r = relabel_record(make_record(1.0, true), shaper);
  CHECK(r.reward == doctest::Approx(1.5 - 2.0 * 0.25));
  CHECK_THROWS_AS(relabel_record(make_record(1.0), shaper), ValidationError);
  CHECK(shape_reward(1.0, 0.5, ShapingMode::optimistic, shaper) == doctest::Approx(1.5));
  CHECK(shape_reward(1.0, 0.5, ShapingMode::pessimistic, shaper) == doctest::Approx(0.0));
  CHECK_THROWS_AS(shape_reward(1.0, -0.1, ShapingMode::pessimistic, shaper), ValidationError);
}

TEST_CASE("rbuf and jsonl round trips are exact") {
  const auto dir = test::temp_dir("buffers");
  ReplayBuffer b(BufferTag::opt_raw, 50);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Transition t = make_record(rng.normal(), i % 2 == 0);
    t.terminal = i % 3 == 0;
    b.add(t);
  }
  save(b, dir / "b.rbuf");
  const ReplayBuffer l = load(dir / "b.rbuf");
  export_jsonl(b, dir / "b.jsonl");
  const ReplayBuffer j = import_jsonl(dir / "b.jsonl");
  for (const ReplayBuffer* c : {&l, &j}) {
    CHECK(c->tag() == BufferTag::opt_raw);
    CHECK(c->capacity() == 50);
    REQUIRE(c->size() == 20);
    for (std::size_t i = 0; i < 20; ++i) {
      CHECK(c->at(i).state == b.at(i).state);
      CHECK(c->at(i).reward == b.at(i).reward);
      CHECK(c->at(i).terminal == b.at(i).terminal);
      CHECK(c->at(i).raw_reward == b.at(i).raw_reward);
      CHECK(c->at(i).uncertainty == b.at(i).uncertainty);
    }
  }
  std::ofstream(dir / "bad.rbuf", std::ios::binary) << "NOTABUFF";
  CHECK_THROWS_AS(load(dir / "bad.rbuf"), FormatError);
}

TEST_CASE("normalizer round trip and floor") {
  Rng rng(4);
  Matrix x = test::random_matrix(100, 3, rng, 5.0);
  x.col(2).setConstant(7.0);
  const Normalizer n = Normalizer::fit(x);
  CHECK(n.std[2] == 1e-6);
  CHECK((n.invert(n.apply(x)) - x).norm() < 1e-9);
  CHECK(n.apply(x).col(0).mean() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("uncertainty heuristics on a hand-built prediction") {
  GaussianPrediction p;
  Matrix m0(1, 2), m1(1, 2), s0(1, 2), s1(1, 2);
  m0 << 0.0, 0.0;
  m1 << 2.0, 0.0;
  s0 << 1.0, 3.0;
  s1 << 2.0, 1.0;
  p.means = {m0, m1};
  p.stds = {s0, s1};
  p.ensemble_mean = (m0 + m1) / 2;
  CHECK(uncertainty_from_prediction(p, UncertaintyHeuristic::max_aleatoric)[0] ==
        doctest::Approx(std::sqrt(10.0)));
  // Mixture variance summed over dims: spread of means (1) plus mean σ² (7.5).
  CHECK(uncertainty_from_prediction(p, UncertaintyHeuristic::ensemble_var)[0] == doctest::Approx(8.5));
  CHECK(uncertainty_from_prediction(p, UncertaintyHeuristic::ensemble_std)[0] ==
        doctest::Approx(std::sqrt(8.5)));
  CHECK_THROWS_AS(parse_heuristic("nope"), ValidationError);
  CHECK(parse_heuristic(to_string(UncertaintyHeuristic::ensemble_var)) == UncertaintyHeuristic::ensemble_var);
}

TEST_CASE("ensemble learns riskworld and round-trips through its checkpoint") {
  Rng rng(5);
  const auto data = collect_riskworld_dataset(2000, rng);
  DynamicsConfig cfg;
  cfg.ensemble_size = 2;
  cfg.hidden = {32, 32};
  cfg.max_epochs = 30;
  DynamicsTrainReport rep;
  const EnsembleDynamics model = EnsembleDynamics::train(data, cfg, rng, &rep);
  CHECK(rep.holdout_mse.size() == 2);
  for (double mse : rep.holdout_mse) CHECK(mse < 0.05);

  const auto dir = test::temp_dir("dyn");
  model.save(dir / "m.bin");
  const EnsembleDynamics back = EnsembleDynamics::load(dir / "m.bin");
  Matrix s(3, 2), a(3, 2);
  s << 0.1, -0.1, 0.5, -0.4, 2.0, 2.0;
  a << 1, 1, -1, 0, 0.5, 0.5;
  CHECK(back.mean_prediction(s, a) == model.mean_prediction(s, a));
  const Vector u = model.uncertainty(s, a, UncertaintyHeuristic::ensemble_std);
  CHECK((u.array() >= 0.0).all());
  CHECK(u[2] > u[0]);

  cfg.ensemble_size = 1;
  CHECK_THROWS_AS(EnsembleDynamics::train(data, cfg, rng), ValidationError);
}

TEST_CASE("rollouts shape rewards and dual-append optimistic records") {
  ReplayBuffer env(BufferTag::env, 100);
  env.add(make_record(0.0));
  ReplayBuffer raw(BufferTag::opt_raw, 1000), rel(BufferTag::opt_relabel, 1000),
      pess(BufferTag::pess, 1000);
  const RewardShaper shaper{2.0, 4.0, UncertaintyHeuristic::ensemble_std};
  RolloutConfig cfg;
  cfg.batch_size = 10;
  cfg.horizon_optimistic = 3;
  cfg.horizon_pessimistic = 2;
  Rng rng(6);
  ShiftModel model;
  ConstPolicy pol(0.5);

  const auto c = generate_rollouts(pol, model, shaper, ShapingMode::optimistic, cfg, env,
                                   {&raw, &rel, nullptr}, rng);
  CHECK(c.appended == 30);
  CHECK(raw.size() == 30);
  CHECK(rel.size() == 30);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    CHECK(raw.at(i).reward == doctest::Approx(1.0 + 4.0 * 0.5));
    CHECK(rel.at(i).reward == doctest::Approx(1.0 - 2.0 * 0.5));
    CHECK(raw.at(i).next_state == rel.at(i).next_state);
    CHECK_FALSE(raw.at(i).terminal);
  }

  generate_rollouts(pol, model, shaper, ShapingMode::pessimistic, cfg, env, {nullptr, nullptr, &pess}, rng);
  CHECK(pess.size() == 20);

  // Each step moves 0.5 per axis, so the third step leaves a box of 1.2.
  ReplayBuffer cut(BufferTag::pess, 1000);
  cfg.truncation_box = 1.2;
  cfg.horizon_pessimistic = 5;
  const auto t = generate_rollouts(pol, model, shaper, ShapingMode::pessimistic, cfg, env,
                                   {nullptr, nullptr, &cut}, rng);
  CHECK(t.truncated == 10);
  CHECK(cut.size() == 20);
}
