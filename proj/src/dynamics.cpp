#include "orpo/dynamics.hpp"

#include "orpo/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace orpo {

Normalizer Normalizer::fit(const Matrix& data, double min_std) {
  if (data.rows() == 0) throw ValidationError("Normalizer::fit: empty data");
  Normalizer n;
  n.mean = data.colwise().mean().transpose();
  n.std.resize(data.cols());
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const double var = (data.col(j).array() - n.mean(j)).square().mean();
    n.std(j) = std::max(std::sqrt(var), min_std);
  }
  return n;
}

Matrix Normalizer::apply(const Matrix& x) const {
  return ((x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array()).matrix();
}

Matrix Normalizer::invert(const Matrix& z) const {
  return ((z.array().rowwise() * std.transpose().array()).rowwise() + mean.transpose().array())
      .matrix();
}

Vector uncertainty_from_prediction(const GaussianPrediction& pred, UncertaintyHeuristic heuristic) {
  const std::size_t n = pred.means.size();
  if (n == 0 || pred.stds.size() != n)
    throw ValidationError("uncertainty_from_prediction: empty or mismatched prediction");
  const Eigen::Index rows = pred.means.front().rows();
  Vector u = Vector::Zero(rows);
  switch (heuristic) {
    case UncertaintyHeuristic::max_aleatoric:
      // Σ_i = diag(σ_i), so ‖Σ_i‖_F = ‖σ_i‖₂.
      for (std::size_t i = 0; i < n; ++i)
        u = u.cwiseMax(pred.stds[i].rowwise().norm());
      break;
    case UncertaintyHeuristic::ensemble_var:
    case UncertaintyHeuristic::ensemble_std: {
      // mean_i(μ_iᵀμ_i + σ_iᵀσ_i) − μ̄ᵀμ̄, rearranged around μ̄ so it stays
      // non-negative in floating point.
      Matrix mean = Matrix::Zero(rows, pred.means.front().cols());
      for (const auto& m : pred.means) mean += m;
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        u += (pred.means[i] - mean).rowwise().squaredNorm();
        u += pred.stds[i].rowwise().squaredNorm();
      }
      u /= static_cast<double>(n);
      if (heuristic == UncertaintyHeuristic::ensemble_std) u = u.cwiseSqrt();
      break;
    }
  }
  return u;
}

EnsembleDynamics::EnsembleDynamics(std::vector<MlpNetwork> members, Normalizer input,
                                   Normalizer target, int state_dim, int action_dim)
    : members_(std::move(members)),
      input_norm_(std::move(input)),
      target_norm_(std::move(target)),
      state_dim_(state_dim),
      action_dim_(action_dim) {
  if (members_.size() < 2) throw ValidationError("EnsembleDynamics: need at least 2 members");
  const int k = state_dim_ + 1;
  for (const auto& m : members_) {
    if (m.input_size() != state_dim_ + action_dim_ || m.output_size() != 2 * k)
      throw ValidationError("EnsembleDynamics: member shape does not match dimensions");
  }
}

namespace {

struct MemberResult {
  MlpNetwork net;
  double best_nll = 0.0;
  int epochs = 0;
};

double holdout_nll(const MlpNetwork& net, const Matrix& x, const Matrix& t) {
  GaussianNllLoss loss{t};
  return loss.evaluate(net.forward(x), nullptr);
}

MemberResult train_member(const Matrix& x_train, const Matrix& t_train, const Matrix& x_hold,
                          const Matrix& t_hold, const DynamicsConfig& config, Rng rng) {
  std::vector<int> sizes{static_cast<int>(x_train.cols())};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(2 * static_cast<int>(t_train.cols()));
  MemberResult result{MlpNetwork(sizes, rng), 0.0, 0};
  AdamConfig adam_config;
  adam_config.learning_rate = config.learning_rate;
  adam_config.weight_decay = config.weight_decay;
  AdamState adam(result.net, adam_config);

  MlpNetwork best = result.net;
  double best_nll = holdout_nll(result.net, x_hold, t_hold);
  int stale = 0;
  const Eigen::Index n = x_train.rows();
  const Eigen::Index bs = std::min<Eigen::Index>(config.batch_size, n);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Matrix xb(bs, x_train.cols()), tb(bs, t_train.cols());

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (Eigen::Index start = 0; start + bs <= n; start += bs) {
      for (Eigen::Index r = 0; r < bs; ++r) {
        xb.row(r) = x_train.row(order[static_cast<std::size_t>(start + r)]);
        tb.row(r) = t_train.row(order[static_cast<std::size_t>(start + r)]);
      }
      mlp_train_step(result.net, adam, GaussianNllLoss{tb}, xb);
    }
    result.epochs = epoch + 1;
    const double nll = holdout_nll(result.net, x_hold, t_hold);
    if (!std::isfinite(nll)) throw NumericalError("dynamics training: non-finite holdout NLL");
    if (nll < best_nll) {
      best_nll = nll;
      best = result.net;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  result.net = std::move(best);
  result.best_nll = best_nll;
  return result;
}

}  // namespace

EnsembleDynamics EnsembleDynamics::train(const std::vector<Transition>& data,
                                         const DynamicsConfig& config, Rng& rng,
                                         DynamicsTrainReport* report) {
  if (data.size() < 100) throw ValidationError("train_ensemble: need at least 100 transitions");
  if (config.ensemble_size < 2) throw ValidationError("train_ensemble: ensemble_size must be >= 2");
  if (config.batch_size < 1 || config.max_epochs < 1 || config.patience < 1)
    throw ValidationError("train_ensemble: batch_size, max_epochs and patience must be positive");
  if (!(config.weight_decay >= 0.0)) throw ValidationError("train_ensemble: weight_decay must be >= 0");
  if (!(config.holdout_fraction > 0.0 && config.holdout_fraction < 1.0))
    throw ValidationError("train_ensemble: holdout_fraction must be in (0, 1)");

  const int ds = static_cast<int>(data.front().state.size());
  const int da = static_cast<int>(data.front().action.size());
  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  Matrix inputs(n, ds + da), targets(n, ds + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& t = data[static_cast<std::size_t>(i)];
    if (t.state.size() != ds || t.action.size() != da || t.next_state.size() != ds)
      throw ValidationError("train_ensemble: inconsistent transition dimensions");
    inputs.row(i) << t.state.transpose(), t.action.transpose();
    targets.row(i).head(ds) = (t.next_state - t.state).transpose();
    targets(i, ds) = t.reward;
  }
  if (!inputs.allFinite() || !targets.allFinite())
    throw ValidationError("train_ensemble: non-finite transition");

  Normalizer in_norm = Normalizer::fit(inputs);
  Normalizer out_norm = Normalizer::fit(targets);
  const Matrix x = in_norm.apply(inputs);
  const Matrix t = out_norm.apply(targets);

  // One shared holdout split; members differ in init and batch order.
  Rng split_rng = rng.derive(0x5eed);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[split_rng.index(i)]);
  const Eigen::Index n_hold =
      std::max<Eigen::Index>(1, static_cast<Eigen::Index>(config.holdout_fraction * n));
  Matrix x_hold(n_hold, x.cols()), t_hold(n_hold, t.cols());
  Matrix x_train(n - n_hold, x.cols()), t_train(n - n_hold, t.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = perm[static_cast<std::size_t>(i)];
    if (i < n_hold) {
      x_hold.row(i) = x.row(src);
      t_hold.row(i) = t.row(src);
    } else {
      x_train.row(i - n_hold) = x.row(src);
      t_train.row(i - n_hold) = t.row(src);
    }
  }

  const std::size_t members = static_cast<std::size_t>(config.ensemble_size);
  std::vector<MemberResult> results(members);
  std::vector<std::exception_ptr> errors(members);
  auto run = [&](std::size_t i) {
    try {
      results[i] = train_member(x_train, t_train, x_hold, t_hold, config, rng.derive(i + 1));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, config.threads)), 1, members);
  if (threads == 1) {
    for (std::size_t i = 0; i < members; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < members; i += threads) run(i);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<MlpNetwork> nets;
  for (auto& r : results) nets.push_back(std::move(r.net));
  EnsembleDynamics model(std::move(nets), std::move(in_norm), std::move(out_norm), ds, da);
  model.sample_mean_ = config.sample_mean_model;

  if (report) {
    report->holdout_nll.clear();
    report->holdout_mse.clear();
    report->epochs.clear();
    const Matrix hold_raw = model.target_norm_.invert(t_hold);
    for (std::size_t i = 0; i < members; ++i) {
      report->holdout_nll.push_back(results[i].best_nll);
      report->epochs.push_back(results[i].epochs);
      const Matrix mu = model.members_[i].forward(x_hold).leftCols(ds + 1);
      report->holdout_mse.push_back(
          (model.target_norm_.invert(mu) - hold_raw).rowwise().squaredNorm().mean());
    }
  }
  return model;
}

Matrix EnsembleDynamics::inputs_of(const Matrix& states, const Matrix& actions) const {
  if (!trained()) throw ValidationError("EnsembleDynamics: model is untrained");
  if (states.cols() != state_dim_ || actions.cols() != action_dim_ || states.rows() != actions.rows())
    throw ValidationError("EnsembleDynamics: input dimension mismatch");
  if (!states.allFinite() || !actions.allFinite())
    throw ValidationError("EnsembleDynamics: non-finite input");
  Matrix in(states.rows(), state_dim_ + action_dim_);
  in << states, actions;
  return input_norm_.apply(in);
}

GaussianPrediction EnsembleDynamics::predict(const Matrix& states, const Matrix& actions) const {
  const Matrix x = inputs_of(states, actions);
  const int k = state_dim_ + 1;
  GaussianPrediction pred;
  pred.ensemble_mean = Matrix::Zero(x.rows(), k);
  for (const auto& net : members_) {
    const Matrix out = net.forward(x);
    Matrix sd(out.rows(), k);
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      for (int j = 0; j < k; ++j)
        sd(r, j) = std::exp(soft_clamp(out(r, k + j), kLogStdMin, kLogStdMax));
    pred.means.push_back(out.leftCols(k));
    pred.stds.push_back(std::move(sd));
    pred.ensemble_mean += pred.means.back();
  }
  pred.ensemble_mean /= static_cast<double>(members_.size());
  return pred;
}

Matrix EnsembleDynamics::mean_prediction(const Matrix& states, const Matrix& actions) const {
  return target_norm_.invert(predict(states, actions).ensemble_mean);
}

ModelStep EnsembleDynamics::step(const Matrix& states, const Matrix& actions,
                                 UncertaintyHeuristic heuristic, Rng& rng) const {
  const GaussianPrediction pred = predict(states, actions);
  const Eigen::Index b = states.rows();
  const int k = state_dim_ + 1;
  Matrix sample(b, k);
  if (sample_mean_) {
    sample = pred.ensemble_mean;
  } else {
    for (Eigen::Index r = 0; r < b; ++r) {
      const std::size_t m = rng.index(members_.size());
      for (int j = 0; j < k; ++j)
        sample(r, j) = pred.means[m](r, j) + pred.stds[m](r, j) * rng.normal();
    }
  }
  const Matrix raw = target_norm_.invert(sample);
  ModelStep out;
  out.next_states = states + raw.leftCols(state_dim_);
  out.rewards = raw.col(state_dim_);
  if (reward_fn_) {
    for (Eigen::Index r = 0; r < b; ++r)
      out.rewards(r) = reward_fn_(states.row(r).transpose(), actions.row(r).transpose());
  }
  out.uncertainty = uncertainty_from_prediction(pred, heuristic);
  if (!out.next_states.allFinite() || !out.rewards.allFinite() || !out.uncertainty.allFinite())
    throw NumericalError("EnsembleDynamics::step: non-finite model output");
  return out;
}

Vector EnsembleDynamics::uncertainty(const Matrix& states, const Matrix& actions,
                                     UncertaintyHeuristic heuristic) const {
  return uncertainty_from_prediction(predict(states, actions), heuristic);
}

Matrix EnsembleDynamics::normalize_states(const Matrix& states) const {
  return ((states.rowwise() - input_norm_.mean.head(state_dim_).transpose()).array().rowwise() /
          input_norm_.std.head(state_dim_).transpose().array())
      .matrix();
}

namespace {
constexpr char kDynamicsMagic[9] = "ORPODYN1";
}

void EnsembleDynamics::save(const std::filesystem::path& path) const {
  if (!trained()) throw ValidationError("EnsembleDynamics::save: model is untrained");
  ByteWriter out;
  write_header(out, kDynamicsMagic, kDynamicsFormatVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(state_dim_));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(action_dim_));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(members_.size()));
  out.put<std::uint8_t>(sample_mean_ ? 1 : 0);
  out.vector(input_norm_.mean);
  out.vector(input_norm_.std);
  out.vector(target_norm_.mean);
  out.vector(target_norm_.std);
  for (const auto& m : members_) out.network(m);
  write_file(path, out.data());
}

EnsembleDynamics EnsembleDynamics::load(const std::filesystem::path& path) {
  ByteReader in(read_file(path));
  read_header(in, kDynamicsMagic, kDynamicsFormatVersion, "dynamics checkpoint");
  const int ds = static_cast<int>(in.get<std::uint32_t>());
  const int da = static_cast<int>(in.get<std::uint32_t>());
  const std::uint32_t n = in.get<std::uint32_t>();
  const bool mean_model = in.get<std::uint8_t>() != 0;
  Normalizer input{in.vector(), in.vector()};
  Normalizer target{in.vector(), in.vector()};
  if (input.mean.size() != ds + da || input.std.size() != ds + da || target.mean.size() != ds + 1 ||
      target.std.size() != ds + 1)
    throw FormatError("dynamics checkpoint: normalizer size mismatch");
  if (n < 2 || n > 1024) throw FormatError("dynamics checkpoint: bad member count");
  std::vector<MlpNetwork> members;
  for (std::uint32_t i = 0; i < n; ++i) members.push_back(in.network());
  if (!in.done()) throw FormatError("dynamics checkpoint: trailing bytes");
  EnsembleDynamics model;
  try {
    model = EnsembleDynamics(std::move(members), std::move(input), std::move(target), ds, da);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("dynamics checkpoint: ") + e.what());
  }
  model.sample_mean_ = mean_model;
  return model;
}

}  // namespace orpo
