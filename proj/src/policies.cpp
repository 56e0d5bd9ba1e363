#include "orpo/policies.hpp"

#include "orpo/binary_io.hpp"

#include <cmath>
#include <numbers>

namespace orpo {

namespace {

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

void check_batch(const Batch& b, int ds, int da, const char* who) {
  if (b.size() == 0) throw ValidationError(std::string(who) + ": empty batch");
  if (b.states.cols() != ds || b.next_states.cols() != ds || b.actions.cols() != da)
    throw ValidationError(std::string(who) + ": batch dimension mismatch");
}

void check_loss(double v, const char* who) {
  if (!std::isfinite(v)) throw NumericalError(std::string(who) + ": non-finite loss");
}

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

// log(1 − tanh²u), written so it stays finite for large |u|.
double log_one_minus_tanh2(double u) {
  return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
}

}  // namespace

Vector Policy::act(const Vector& state, ActionMode mode, Rng* rng) const {
  return act_batch(state.transpose(), mode, rng).row(0).transpose();
}

RandomPolicy::RandomPolicy(int state_dim, int action_dim, double max_action)
    : state_dim_(state_dim), action_dim_(action_dim), max_action_(max_action) {
  if (state_dim < 1 || action_dim < 1 || !(max_action > 0.0))
    throw ValidationError("RandomPolicy: bad dimensions or bound");
}

Matrix RandomPolicy::act_batch(const Matrix& states, ActionMode mode, Rng* rng) const {
  Matrix a = Matrix::Zero(states.rows(), action_dim_);
  if (mode == ActionMode::deterministic) return a;
  if (!rng) throw ValidationError("RandomPolicy: stochastic mode needs an rng");
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (int j = 0; j < action_dim_; ++j) a(r, j) = rng->uniform(-max_action_, max_action_);
  return a;
}

// ---- SAC --------------------------------------------------------------------

SacPolicy::SacPolicy(int state_dim, int action_dim, const SacConfig& config, Rng& rng)
    : state_dim_(state_dim), action_dim_(action_dim), config_(config) {
  if (state_dim < 1 || action_dim < 1) throw ValidationError("SacPolicy: bad dimensions");
  if (!(config.max_action > 0.0) || !(config.initial_alpha > 0.0))
    throw ValidationError("SacPolicy: max_action and initial_alpha must be positive");
  if (config.tau < 0.0 || config.tau > 1.0 || config.gamma < 0.0 || config.gamma > 1.0)
    throw ValidationError("SacPolicy: tau and gamma must be in [0, 1]");
  actor_ = MlpNetwork(layer_sizes(state_dim, config.hidden, 2 * action_dim), rng);
  for (int i = 0; i < 2; ++i) {
    critics_[i] = MlpNetwork(layer_sizes(state_dim + action_dim, config.hidden, 1), rng);
    targets_[i] = critics_[i];
    critic_opt_[i] = AdamState(critics_[i], AdamConfig{config.critic_lr});
  }
  actor_opt_ = AdamState(actor_, AdamConfig{config.actor_lr});
  alpha_opt_ = ScalarAdam(AdamConfig{config.alpha_lr});
  log_alpha_ = std::log(config.initial_alpha);
}

double SacPolicy::target_entropy() const {
  return config_.target_entropy.value_or(-static_cast<double>(action_dim_));
}

Matrix SacPolicy::critic_input(const Matrix& s, const Matrix& a) const {
  Matrix in(s.rows(), state_dim_ + action_dim_);
  in << s, a;
  return in;
}

SacPolicy::Sample SacPolicy::sample(const Matrix& states, const Matrix& noise,
                                    MlpCache* cache) const {
  const Eigen::Index b = states.rows();
  const int da = action_dim_;
  const double m = config_.max_action;
  Sample out;
  out.raw = actor_.forward(states, cache);
  out.actions.resize(b, da);
  out.pre_tanh.resize(b, da);
  out.log_std.resize(b, da);
  out.log_prob = Vector::Zero(b);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (Eigen::Index r = 0; r < b; ++r) {
    for (int j = 0; j < da; ++j) {
      const double ls = soft_clamp(out.raw(r, da + j), kSacLogStdMin, kSacLogStdMax);
      const double e = noise(r, j);
      const double u = out.raw(r, j) + std::exp(ls) * e;
      out.log_std(r, j) = ls;
      out.pre_tanh(r, j) = u;
      out.actions(r, j) = m * std::tanh(u);
      out.log_prob(r) += -0.5 * e * e - ls - half_log_2pi - log_one_minus_tanh2(u) - std::log(m);
    }
  }
  return out;
}

Matrix SacPolicy::act_batch(const Matrix& states, ActionMode mode, Rng* rng) const {
  if (states.cols() != state_dim_) throw ValidationError("SacPolicy::act: state dimension mismatch");
  if (mode == ActionMode::deterministic) {
    const Matrix raw = actor_.forward(states);
    return config_.max_action * raw.leftCols(action_dim_).array().tanh().matrix();
  }
  if (!rng) throw ValidationError("SacPolicy: stochastic mode needs an rng");
  return sample(states, standard_normal(states.rows(), action_dim_, *rng), nullptr).actions;
}

double SacPolicy::critic_loss(const Batch& batch, const Matrix& next_noise, MlpGradient* g1,
                              MlpGradient* g2) const {
  check_batch(batch, state_dim_, action_dim_, "SacPolicy::critic_loss");
  const Eigen::Index b = batch.states.rows();
  const Sample next = sample(batch.next_states, next_noise, nullptr);
  const Matrix next_in = critic_input(batch.next_states, next.actions);
  // Bootstrapped target from the target critics only.
  const Vector tq = targets_[0].forward(next_in).col(0).cwiseMin(targets_[1].forward(next_in).col(0));
  const Vector soft = tq - alpha() * next.log_prob;
  const Vector y = batch.rewards.array() +
                   config_.gamma * (1.0 - batch.terminals.array()) * soft.array();

  const Matrix in = critic_input(batch.states, batch.actions);
  double total = 0.0;
  MlpGradient* grads[2] = {g1, g2};
  for (int i = 0; i < 2; ++i) {
    MlpCache cache;
    const Matrix q = critics_[i].forward(in, grads[i] ? &cache : nullptr);
    const Vector diff = q.col(0) - y;
    total += diff.squaredNorm() / static_cast<double>(b);
    if (grads[i]) {
      *grads[i] = critics_[i].zero_gradient();
      critics_[i].backward(cache, (2.0 / static_cast<double>(b)) * diff, grads[i]);
    }
  }
  return total;
}

double SacPolicy::actor_loss(const Batch& batch, const Matrix& noise, MlpGradient* grad,
                             double* mean_log_prob) const {
  check_batch(batch, state_dim_, action_dim_, "SacPolicy::actor_loss");
  const Eigen::Index b = batch.states.rows();
  const int da = action_dim_;
  const double alpha = this->alpha();
  const double m = config_.max_action;
  MlpCache acache;
  const Sample smp = sample(batch.states, noise, grad ? &acache : nullptr);
  const Matrix in = critic_input(batch.states, smp.actions);
  MlpCache c1, c2;
  const Vector q1 = critics_[0].forward(in, grad ? &c1 : nullptr).col(0);
  const Vector q2 = critics_[1].forward(in, grad ? &c2 : nullptr).col(0);
  const Vector qmin = q1.cwiseMin(q2);
  const double loss = (alpha * smp.log_prob - qmin).mean();
  if (mean_log_prob) *mean_log_prob = smp.log_prob.mean();
  if (!grad) return loss;

  Matrix og1 = Matrix::Zero(b, 1), og2 = Matrix::Zero(b, 1);
  for (Eigen::Index r = 0; r < b; ++r) (q1(r) <= q2(r) ? og1 : og2)(r, 0) = 1.0;
  const Matrix dq_da = (critics_[0].backward(c1, og1, nullptr) + critics_[1].backward(c2, og2, nullptr))
                           .rightCols(da);
  Matrix out_grad(b, 2 * da);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (Eigen::Index r = 0; r < b; ++r) {
    for (int j = 0; j < da; ++j) {
      const double t = std::tanh(smp.pre_tanh(r, j));
      const double g_u = -dq_da(r, j) * m * (1.0 - t * t) + alpha * 2.0 * t;
      const double sigma = std::exp(smp.log_std(r, j));
      out_grad(r, j) = g_u * inv_b;
      const double d_ls = g_u * sigma * noise(r, j) - alpha;
      out_grad(r, da + j) =
          d_ls * soft_clamp_derivative(smp.raw(r, da + j), kSacLogStdMin, kSacLogStdMax) * inv_b;
    }
  }
  *grad = actor_.zero_gradient();
  actor_.backward(acache, out_grad, grad);
  return loss;
}

double SacPolicy::alpha_loss(double mean_log_prob, double* grad) const {
  const double gap = mean_log_prob + target_entropy();
  if (grad) *grad = -gap;
  return -log_alpha_ * gap;
}

SacLosses SacPolicy::update(const Batch& batch, Rng& rng) {
  check_batch(batch, state_dim_, action_dim_, "SacPolicy::update");
  const Eigen::Index b = batch.states.rows();
  SacLosses out;

  MlpGradient g1, g2;
  out.critic = critic_loss(batch, standard_normal(b, action_dim_, rng), &g1, &g2);
  check_loss(out.critic, "sac critic");
  check_finite(g1, "sac critic 1");
  check_finite(g2, "sac critic 2");
  critic_opt_[0].step(critics_[0], g1);
  critic_opt_[1].step(critics_[1], g2);

  MlpGradient ga;
  double mean_log_prob = 0.0;
  out.actor = actor_loss(batch, standard_normal(b, action_dim_, rng), &ga, &mean_log_prob);
  check_loss(out.actor, "sac actor");
  check_finite(ga, "sac actor");
  actor_opt_.step(actor_, ga);

  double g_alpha = 0.0;
  out.alpha_loss = alpha_loss(mean_log_prob, &g_alpha);
  if (config_.auto_alpha) alpha_opt_.step(log_alpha_, g_alpha);
  if (!std::isfinite(log_alpha_)) throw NumericalError("sac: non-finite temperature");
  out.alpha = alpha();
  out.entropy = -mean_log_prob;

  soft_update(targets_[0], critics_[0], config_.tau);
  soft_update(targets_[1], critics_[1], config_.tau);
  ++updates_;
  return out;
}

namespace {
constexpr char kSacMagic[9] = "ORPOSAC1";
constexpr char kTd3Magic[9] = "ORPOTD3B";

void put_hidden(ByteWriter& out, const std::vector<int>& hidden) {
  out.put<std::uint32_t>(static_cast<std::uint32_t>(hidden.size()));
  for (int h : hidden) out.put<std::uint32_t>(static_cast<std::uint32_t>(h));
}

std::vector<int> get_hidden(ByteReader& in) {
  const auto n = in.get<std::uint32_t>();
  if (n > 64) throw FormatError("policy checkpoint: implausible layer count");
  std::vector<int> h;
  for (std::uint32_t i = 0; i < n; ++i) h.push_back(static_cast<int>(in.get<std::uint32_t>()));
  return h;
}

void check_net(const MlpNetwork& net, int in, int out, const char* what) {
  if (net.input_size() != in || net.output_size() != out)
    throw FormatError(std::string("policy checkpoint: ") + what + " shape mismatch");
}
}  // namespace

void SacPolicy::save(const std::filesystem::path& path) const {
  ByteWriter out;
  write_header(out, kSacMagic, kPolicyFormatVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(state_dim_));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(action_dim_));
  put_hidden(out, config_.hidden);
  out.put<double>(config_.gamma);
  out.put<double>(config_.tau);
  out.put<double>(config_.actor_lr);
  out.put<double>(config_.critic_lr);
  out.put<double>(config_.alpha_lr);
  out.put<std::uint8_t>(config_.auto_alpha ? 1 : 0);
  out.put<double>(target_entropy());
  out.put<double>(config_.max_action);
  out.put<double>(log_alpha_);
  out.network(actor_);
  for (int i = 0; i < 2; ++i) out.network(critics_[i]);
  for (int i = 0; i < 2; ++i) out.network(targets_[i]);
  write_file(path, out.data());
}

SacPolicy SacPolicy::load(const std::filesystem::path& path) {
  ByteReader in(read_file(path));
  read_header(in, kSacMagic, kPolicyFormatVersion, "SAC checkpoint");
  SacPolicy p;
  p.state_dim_ = static_cast<int>(in.get<std::uint32_t>());
  p.action_dim_ = static_cast<int>(in.get<std::uint32_t>());
  p.config_.hidden = get_hidden(in);
  p.config_.gamma = in.get<double>();
  p.config_.tau = in.get<double>();
  p.config_.actor_lr = in.get<double>();
  p.config_.critic_lr = in.get<double>();
  p.config_.alpha_lr = in.get<double>();
  p.config_.auto_alpha = in.get<std::uint8_t>() != 0;
  p.config_.target_entropy = in.get<double>();
  p.config_.max_action = in.get<double>();
  p.log_alpha_ = in.get<double>();
  p.config_.initial_alpha = std::exp(p.log_alpha_);
  p.actor_ = in.network();
  for (int i = 0; i < 2; ++i) p.critics_[i] = in.network();
  for (int i = 0; i < 2; ++i) p.targets_[i] = in.network();
  if (!in.done()) throw FormatError("SAC checkpoint: trailing bytes");
  check_net(p.actor_, p.state_dim_, 2 * p.action_dim_, "actor");
  for (int i = 0; i < 2; ++i) {
    check_net(p.critics_[i], p.state_dim_ + p.action_dim_, 1, "critic");
    check_net(p.targets_[i], p.state_dim_ + p.action_dim_, 1, "target critic");
    p.critic_opt_[i] = AdamState(p.critics_[i], AdamConfig{p.config_.critic_lr});
  }
  p.actor_opt_ = AdamState(p.actor_, AdamConfig{p.config_.actor_lr});
  p.alpha_opt_ = ScalarAdam(AdamConfig{p.config_.alpha_lr});
  return p;
}

// ---- TD3+BC -----------------------------------------------------------------

Td3BcPolicy::Td3BcPolicy(int state_dim, int action_dim, const Td3BcConfig& config, Rng& rng)
    : state_dim_(state_dim), action_dim_(action_dim), config_(config) {
  if (state_dim < 1 || action_dim < 1) throw ValidationError("Td3BcPolicy: bad dimensions");
  if (!(config.max_action > 0.0)) throw ValidationError("Td3BcPolicy: max_action must be positive");
  if (config.policy_delay < 1) throw ValidationError("Td3BcPolicy: policy_delay must be >= 1");
  if (config.alpha_bc < 0.0) throw ValidationError("Td3BcPolicy: alpha_bc must be >= 0");
  if (config.tau < 0.0 || config.tau > 1.0 || config.gamma < 0.0 || config.gamma > 1.0)
    throw ValidationError("Td3BcPolicy: tau and gamma must be in [0, 1]");
  actor_ = MlpNetwork(layer_sizes(state_dim, config.hidden, action_dim), rng);
  target_actor_ = actor_;
  for (int i = 0; i < 2; ++i) {
    critics_[i] = MlpNetwork(layer_sizes(state_dim + action_dim, config.hidden, 1), rng);
    target_critics_[i] = critics_[i];
    critic_opt_[i] = AdamState(critics_[i], AdamConfig{config.critic_lr});
  }
  actor_opt_ = AdamState(actor_, AdamConfig{config.actor_lr});
}

Matrix Td3BcPolicy::norm(const Matrix& s) const {
  if (state_norm_.mean.size() == 0) return s;
  return state_norm_.apply(s);
}

Matrix Td3BcPolicy::critic_input(const Matrix& ns, const Matrix& a) const {
  Matrix in(ns.rows(), state_dim_ + action_dim_);
  in << ns, a;
  return in;
}

Matrix Td3BcPolicy::actor_actions(const MlpNetwork& net, const Matrix& ns, MlpCache* cache) const {
  return config_.max_action * net.forward(ns, cache).array().tanh().matrix();
}

Matrix Td3BcPolicy::act_batch(const Matrix& states, ActionMode, Rng*) const {
  if (states.cols() != state_dim_) throw ValidationError("Td3BcPolicy::act: state dimension mismatch");
  return actor_actions(actor_, norm(states), nullptr);
}

double Td3BcPolicy::critic_loss(const Batch& batch, const Matrix& noise, MlpGradient* g1,
                                MlpGradient* g2) const {
  check_batch(batch, state_dim_, action_dim_, "Td3BcPolicy::critic_loss");
  const Eigen::Index b = batch.states.rows();
  const double m = config_.max_action;
  const Matrix ns_next = norm(batch.next_states);
  const Matrix smoothing =
      (noise.array() * config_.policy_noise * m).cwiseMax(-config_.noise_clip * m).cwiseMin(config_.noise_clip * m);
  const Matrix next_a =
      (actor_actions(target_actor_, ns_next, nullptr).array() + smoothing.array()).cwiseMax(-m).cwiseMin(m);
  const Matrix next_in = critic_input(ns_next, next_a);
  const Vector tq =
      target_critics_[0].forward(next_in).col(0).cwiseMin(target_critics_[1].forward(next_in).col(0));
  const Vector y = batch.rewards.array() + config_.gamma * (1.0 - batch.terminals.array()) * tq.array();

  const Matrix in = critic_input(norm(batch.states), batch.actions);
  double total = 0.0;
  MlpGradient* grads[2] = {g1, g2};
  for (int i = 0; i < 2; ++i) {
    MlpCache cache;
    const Matrix q = critics_[i].forward(in, grads[i] ? &cache : nullptr);
    const Vector diff = q.col(0) - y;
    total += diff.squaredNorm() / static_cast<double>(b);
    if (grads[i]) {
      *grads[i] = critics_[i].zero_gradient();
      critics_[i].backward(cache, (2.0 / static_cast<double>(b)) * diff, grads[i]);
    }
  }
  return total;
}

Td3BcLosses Td3BcPolicy::actor_loss(const Batch& batch, MlpGradient* grad, double lambda_bc) const {
  check_batch(batch, state_dim_, action_dim_, "Td3BcPolicy::actor_loss");
  const Eigen::Index b = batch.states.rows();
  const double m = config_.max_action;
  const Matrix ns = norm(batch.states);
  MlpCache acache, ccache;
  const Matrix pre = actor_.forward(ns, grad ? &acache : nullptr);
  const Matrix t = pre.array().tanh().matrix();
  const Matrix pi = m * t;
  const Vector q = critics_[0].forward(critic_input(ns, pi), grad ? &ccache : nullptr).col(0);

  Td3BcLosses out;
  out.lambda_bc =
      lambda_bc >= 0.0 ? lambda_bc : config_.alpha_bc / std::max(q.cwiseAbs().mean(), 1e-6);
  const Matrix diff = pi - batch.actions;
  out.q_term = -out.lambda_bc * q.mean();
  out.bc_term = diff.rowwise().squaredNorm().mean();
  out.actor = out.q_term + out.bc_term;
  if (!grad) return out;

  const double inv_b = 1.0 / static_cast<double>(b);
  const Matrix dq_da =
      critics_[0].backward(ccache, Matrix::Constant(b, 1, 1.0), nullptr).rightCols(action_dim_);
  const Matrix d_pi = (-out.lambda_bc * dq_da + 2.0 * diff) * inv_b;
  const Matrix d_pre = (d_pi.array() * m * (1.0 - t.array().square())).matrix();
  *grad = actor_.zero_gradient();
  actor_.backward(acache, d_pre, grad);
  return out;
}

Td3BcLosses Td3BcPolicy::update(const Batch& batch, Rng& rng) {
  check_batch(batch, state_dim_, action_dim_, "Td3BcPolicy::update");
  MlpGradient g1, g2;
  const double critic =
      critic_loss(batch, standard_normal(batch.states.rows(), action_dim_, rng), &g1, &g2);
  check_loss(critic, "td3bc critic");
  check_finite(g1, "td3bc critic 1");
  check_finite(g2, "td3bc critic 2");
  critic_opt_[0].step(critics_[0], g1);
  critic_opt_[1].step(critics_[1], g2);
  ++updates_;

  Td3BcLosses out;
  if (updates_ % config_.policy_delay == 0) {
    MlpGradient ga;
    out = actor_loss(batch, &ga);
    check_loss(out.actor, "td3bc actor");
    check_finite(ga, "td3bc actor");
    actor_opt_.step(actor_, ga);
    out.actor_updated = true;
    soft_update(target_actor_, actor_, config_.tau);
    soft_update(target_critics_[0], critics_[0], config_.tau);
    soft_update(target_critics_[1], critics_[1], config_.tau);
  }
  out.critic = critic;
  return out;
}

void Td3BcPolicy::save(const std::filesystem::path& path) const {
  ByteWriter out;
  write_header(out, kTd3Magic, kPolicyFormatVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(state_dim_));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(action_dim_));
  put_hidden(out, config_.hidden);
  out.put<double>(config_.gamma);
  out.put<double>(config_.tau);
  out.put<double>(config_.actor_lr);
  out.put<double>(config_.critic_lr);
  out.put<double>(config_.policy_noise);
  out.put<double>(config_.noise_clip);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(config_.policy_delay));
  out.put<double>(config_.alpha_bc);
  out.put<double>(config_.max_action);
  out.vector(state_norm_.mean);
  out.vector(state_norm_.std);
  out.network(actor_);
  out.network(target_actor_);
  for (int i = 0; i < 2; ++i) out.network(critics_[i]);
  for (int i = 0; i < 2; ++i) out.network(target_critics_[i]);
  write_file(path, out.data());
}

Td3BcPolicy Td3BcPolicy::load(const std::filesystem::path& path) {
  ByteReader in(read_file(path));
  read_header(in, kTd3Magic, kPolicyFormatVersion, "TD3+BC checkpoint");
  Td3BcPolicy p;
  p.state_dim_ = static_cast<int>(in.get<std::uint32_t>());
  p.action_dim_ = static_cast<int>(in.get<std::uint32_t>());
  p.config_.hidden = get_hidden(in);
  p.config_.gamma = in.get<double>();
  p.config_.tau = in.get<double>();
  p.config_.actor_lr = in.get<double>();
  p.config_.critic_lr = in.get<double>();
  p.config_.policy_noise = in.get<double>();
  p.config_.noise_clip = in.get<double>();
  p.config_.policy_delay = static_cast<int>(in.get<std::uint32_t>());
  p.config_.alpha_bc = in.get<double>();
  p.config_.max_action = in.get<double>();
  p.state_norm_.mean = in.vector();
  p.state_norm_.std = in.vector();
  p.actor_ = in.network();
  p.target_actor_ = in.network();
  for (int i = 0; i < 2; ++i) p.critics_[i] = in.network();
  for (int i = 0; i < 2; ++i) p.target_critics_[i] = in.network();
  if (!in.done()) throw FormatError("TD3+BC checkpoint: trailing bytes");
  if (p.state_norm_.mean.size() != 0 &&
      (p.state_norm_.mean.size() != p.state_dim_ || p.state_norm_.std.size() != p.state_dim_))
    throw FormatError("TD3+BC checkpoint: normalizer size mismatch");
  check_net(p.actor_, p.state_dim_, p.action_dim_, "actor");
  check_net(p.target_actor_, p.state_dim_, p.action_dim_, "target actor");
  for (int i = 0; i < 2; ++i) {
    check_net(p.critics_[i], p.state_dim_ + p.action_dim_, 1, "critic");
    check_net(p.target_critics_[i], p.state_dim_ + p.action_dim_, 1, "target critic");
    p.critic_opt_[i] = AdamState(p.critics_[i], AdamConfig{p.config_.critic_lr});
  }
  p.actor_opt_ = AdamState(p.actor_, AdamConfig{p.config_.actor_lr});
  return p;
}

}  // namespace orpo
