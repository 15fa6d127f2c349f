#include "dflex/sac.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dflex/error.hpp"

namespace dflex {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

Eigen::MatrixXd clamp_log_std(const Eigen::MatrixXd& raw) {
  return raw.cwiseMax(SquashedGaussianPolicy::kLogStdMin).cwiseMin(SquashedGaussianPolicy::kLogStdMax);
}

Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index j = 0; j < out.size(); ++j) out.data()[j] = g(rng);
  return out;
}

// Reparameterized batch sample: columns are samples.
struct BatchSample {
  Eigen::MatrixXd mean, log_std, eps, action;
  Eigen::RowVectorXd log_prob;
};

BatchSample sample_batch(const Eigen::MatrixXd& head, int d, std::mt19937_64& rng) {
  BatchSample s;
  s.mean = head.topRows(d);
  s.log_std = clamp_log_std(head.bottomRows(d));
  s.eps = standard_normal(d, head.cols(), rng);
  const Eigen::MatrixXd u = s.mean.array() + s.log_std.array().exp() * s.eps.array();
  s.action = u.array().tanh();
  s.log_prob.resize(head.cols());
  for (Eigen::Index c = 0; c < head.cols(); ++c) {
    double lp = 0.0;
    for (int r = 0; r < d; ++r) {
      lp += -0.5 * s.eps(r, c) * s.eps(r, c) - s.log_std(r, c) - kHalfLog2Pi - log_one_minus_tanh_sq(u(r, c));
    }
    s.log_prob[c] = lp;
  }
  return s;
}

Eigen::MatrixXd stack(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
  Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

std::vector<int> net_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

}  // namespace

double log_one_minus_tanh_sq(double u) {
  const double a = std::abs(u);
  return 2.0 * (std::numbers::ln2 - a - std::log1p(std::exp(-2.0 * a)));
}

SquashedGaussianPolicy::SquashedGaussianPolicy(int obs_dim, int act_dim, const std::vector<int>& hidden,
                                               std::mt19937_64& rng)
    : net_(nn::Mlp::random(net_sizes(obs_dim, hidden, 2 * act_dim), rng, 0.1)) {}

SquashedGaussianPolicy::SquashedGaussianPolicy(nn::Mlp net) : net_(std::move(net)) {
  if (net_.sizes().empty() || net_.output_size() % 2 != 0) {
    fail(ErrorCode::ShapeMismatch, "policy network needs an even output width");
  }
}

double SquashedGaussianPolicy::log_prob(const Eigen::VectorXd& obs, const Eigen::VectorXd& action) const {
  const int d = act_dim();
  if (action.size() != d) fail(ErrorCode::ShapeMismatch, "action width does not match the policy");
  const Eigen::VectorXd head = net_.predict(obs);
  double lp = 0.0;
  for (int r = 0; r < d; ++r) {
    const double a = action[r];
    if (!(std::abs(a) < 1.0)) fail(ErrorCode::InvalidParams, "action must lie strictly inside (-1, 1)");
    const double ls = std::clamp(head[d + r], kLogStdMin, kLogStdMax);
    const double z = (std::atanh(a) - head[r]) / std::exp(ls);
    lp += -0.5 * z * z - ls - kHalfLog2Pi - std::log1p(-a * a);
  }
  return lp;
}

PolicyOutput sac_act(const SquashedGaussianPolicy& policy, const Eigen::VectorXd& obs, ActMode mode,
                     std::mt19937_64& rng) {
  if (!obs.allFinite()) fail(ErrorCode::NonFiniteObservation, "policy input is not finite");
  const int d = policy.act_dim();
  const Eigen::VectorXd head = policy.net().predict(obs);
  PolicyOutput out;
  out.action.resize(d);
  for (int r = 0; r < d; ++r) {
    const double ls = std::clamp(head[d + r], SquashedGaussianPolicy::kLogStdMin, SquashedGaussianPolicy::kLogStdMax);
    double eps = 0.0;
    if (mode == ActMode::Stochastic) {
      std::normal_distribution<double> g(0.0, 1.0);
      eps = g(rng);
    }
    const double u = head[r] + std::exp(ls) * eps;
    out.action[r] = std::tanh(u);
    out.log_prob += -0.5 * eps * eps - ls - kHalfLog2Pi - log_one_minus_tanh_sq(u);
  }
  return out;
}

SacAgent::SacAgent(int obs_dim, int act_dim, const RlConfig& cfg, std::mt19937_64& rng)
    : policy(obs_dim, act_dim, cfg.hidden, rng),
      q1(nn::Mlp::random(net_sizes(obs_dim + act_dim, cfg.hidden, 1), rng)),
      q2(nn::Mlp::random(net_sizes(obs_dim + act_dim, cfg.hidden, 1), rng)),
      q1_target(q1),
      q2_target(q2),
      policy_opt(policy.net().num_params(), nn::AdamConfig{cfg.actor_lr}),
      q1_opt(q1.num_params(), nn::AdamConfig{cfg.critic_lr}),
      q2_opt(q2.num_params(), nn::AdamConfig{cfg.critic_lr}),
      buffer(obs_dim, act_dim, cfg.replay_capacity) {}

double critic_loss(const Eigen::VectorXd& q, const Eigen::VectorXd& target) {
  if (q.size() != target.size() || q.size() == 0) fail(ErrorCode::ShapeMismatch, "critic loss needs equal nonempty batches");
  return (q - target).squaredNorm() / static_cast<double>(q.size());
}

ActorObjective sac_actor_objective(const SquashedGaussianPolicy& policy, const nn::Mlp& q1, const nn::Mlp& q2,
                                   const Eigen::MatrixXd& obs, const Eigen::MatrixXd& eps, double alpha) {
  const int d = policy.act_dim();
  const Eigen::Index n = obs.cols();
  if (eps.rows() != d || eps.cols() != n || n == 0) fail(ErrorCode::ShapeMismatch, "noise does not match the batch");
  const auto b = static_cast<double>(n);

  nn::Mlp::Cache pc;
  const Eigen::MatrixXd head = policy.net().forward(obs, pc);
  const Eigen::MatrixXd raw_ls = head.bottomRows(d);
  const Eigen::ArrayXXd log_std = clamp_log_std(raw_ls).array();
  const Eigen::ArrayXXd sigma = log_std.exp();
  const Eigen::ArrayXXd u = head.topRows(d).array() + sigma * eps.array();
  const Eigen::ArrayXXd a = u.tanh();

  double logp_sum = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    logp_sum += -0.5 * eps.data()[j] * eps.data()[j] - log_std.data()[j] - kHalfLog2Pi -
                log_one_minus_tanh_sq(u.data()[j]);
  }

  const Eigen::MatrixXd pi_in = stack(obs, a.matrix());
  nn::Mlp::Cache c1, c2;
  const Eigen::RowVectorXd qa1 = q1.forward(pi_in, c1).row(0);
  const Eigen::RowVectorXd qa2 = q2.forward(pi_in, c2).row(0);
  Eigen::RowVectorXd up1 = Eigen::RowVectorXd::Zero(n);
  Eigen::RowVectorXd up2 = Eigen::RowVectorXd::Zero(n);
  double q_sum = 0.0;
  for (Eigen::Index c = 0; c < n; ++c) {
    if (qa1[c] <= qa2[c]) {
      up1[c] = -1.0 / b;
      q_sum += qa1[c];
    } else {
      up2[c] = -1.0 / b;
      q_sum += qa2[c];
    }
  }
  Eigen::VectorXd scratch;
  const Eigen::MatrixXd dq1 = q1.backward(c1, up1, scratch);
  scratch.resize(0);
  const Eigen::MatrixXd dq2 = q2.backward(c2, up2, scratch);
  const Eigen::ArrayXXd dq_da = (dq1.bottomRows(d) + dq2.bottomRows(d)).array();

  // log pi = sum(-eps^2/2 - log_std - log(1 - tanh(u)^2)) + const, with u = mean + sigma * eps.
  const Eigen::ArrayXXd d_u = alpha * 2.0 * a / b + dq_da * (1.0 - a * a);
  Eigen::ArrayXXd d_ls = d_u * sigma * eps.array() - alpha / b;
  for (Eigen::Index j = 0; j < d_ls.size(); ++j) {
    const double r = raw_ls.data()[j];
    if (r < SquashedGaussianPolicy::kLogStdMin || r > SquashedGaussianPolicy::kLogStdMax) d_ls.data()[j] = 0.0;
  }

  ActorObjective out;
  policy.net().backward(pc, stack(d_u.matrix(), d_ls.matrix()), out.grad);
  out.entropy_term = alpha * logp_sum / b;
  out.q_mean = q_sum / b;
  out.loss = out.entropy_term - out.q_mean;
  return out;
}

SacLosses sac_update(SacAgent& ag, const RlConfig& cfg, std::mt19937_64& rng) {
  const ReplayBuffer::Batch batch = ag.buffer.sample(cfg.sac_batch, rng);
  const int d = ag.policy.act_dim();
  const auto b = static_cast<double>(cfg.sac_batch);
  SacLosses losses;

  // Critic targets from the slow networks at a fresh next action.
  const BatchSample next = sample_batch(ag.policy.net().forward(batch.next_obs), d, rng);
  const Eigen::MatrixXd next_in = stack(batch.next_obs, next.action);
  const Eigen::RowVectorXd q_next =
      ag.q1_target.forward(next_in).cwiseMin(ag.q2_target.forward(next_in)).row(0) - cfg.alpha * next.log_prob;
  const Eigen::VectorXd target = cfg.reward_scale * batch.reward.array() +
                                 cfg.gamma * (1.0 - batch.done.array()) * q_next.transpose().array();

  const Eigen::MatrixXd q_in = stack(batch.obs, batch.act);
  for (auto [net, opt] : {std::pair{&ag.q1, &ag.q1_opt}, std::pair{&ag.q2, &ag.q2_opt}}) {
    nn::Mlp::Cache cache;
    const Eigen::VectorXd q = net->forward(q_in, cache).row(0).transpose();
    losses.critic += 0.5 * critic_loss(q, target);
    Eigen::VectorXd grad;
    net->backward(cache, (2.0 / b) * (q - target).transpose(), grad);
    opt->step(net->params(), grad);
  }

  // Actor: reparameterized sample through the updated critics.
  const ActorObjective obj = sac_actor_objective(ag.policy, ag.q1, ag.q2, batch.obs,
                                                 standard_normal(d, cfg.sac_batch, rng), cfg.alpha);
  ag.policy_opt.step(ag.policy.net().params(), obj.grad);
  losses.entropy_term = obj.entropy_term;
  losses.q_mean = obj.q_mean;
  losses.actor = obj.loss;

  ag.q1_target.soft_update_from(ag.q1, cfg.tau);
  ag.q2_target.soft_update_from(ag.q2, cfg.tau);
  return losses;
}

// --- frozen policies ---

Action SacPolicies::act(const StepContext& ctx, std::size_t i) const {
  if (i >= actors.size()) fail(ErrorCode::RosterMismatch, "no policy for building " + std::to_string(i));
  static thread_local std::mt19937_64 unused;
  const PolicyOutput out = sac_act(actors[i], local_observation(ctx, i, stats), ActMode::Deterministic, unused);
  return to_action(out.action[0], out.action[1], ctx.params(i));
}

nn::Checkpoint SacPolicies::to_checkpoint() const {
  nn::Checkpoint ck;
  for (std::size_t i = 0; i < actors.size(); ++i) ck.nets.emplace_back("actor_" + std::to_string(i), actors[i].net());
  ck.vectors.emplace_back("obs_mean", stats.flat_mean());
  ck.vectors.emplace_back("obs_scale", stats.flat_scale());
  return ck;
}

SacPolicies SacPolicies::from_checkpoint(const nn::Checkpoint& ckpt) {
  SacPolicies out;
  out.stats = ObservationStats::from_flat(ckpt.vector("obs_mean"), ckpt.vector("obs_scale"));
  for (std::size_t i = 0; i < out.stats.num_buildings(); ++i) {
    SquashedGaussianPolicy p(ckpt.net("actor_" + std::to_string(i)));
    if (p.obs_dim() != kObsSize || p.act_dim() != kActSize) {
      fail(ErrorCode::ShapeMismatch, "actor " + std::to_string(i) + " has the wrong shape");
    }
    out.actors.push_back(std::move(p));
  }
  return out;
}

// --- training ---

double resolve_reward_scale(double requested, const RewardConfig& reward) {
  if (requested > 0.0) return requested;
  validate(reward);
  return 1.0 / (reward.delta_kwh * reward.delta_kwh);
}

SacTrainResult train_sac(const Scenario& train, const ReferenceSignal& reference, const ObservationStats& stats,
                         const SacTrainConfig& cfg, std::uint64_t seed) {
  if (cfg.episodes < 1 || cfg.episode_steps < 1 || cfg.updates_per_step < 0) {
    fail(ErrorCode::InvalidParams, "episodes, episode length and update count must be positive");
  }
  tune_allocator_for_training();
  DistrictEnv env(train, reference, cfg.reward);
  RlConfig rl = cfg.rl;
  rl.reward_scale = resolve_reward_scale(cfg.reward_scale, env.reward_config());
  validate(rl);
  const std::size_t n = train.num_buildings();
  if (stats.num_buildings() != n) fail(ErrorCode::RosterMismatch, "statistics do not match the roster");

  std::mt19937_64 rng(seed ^ 0x5ac0ffee1ULL);
  std::vector<SacAgent> agents;
  agents.reserve(n);
  for (std::size_t i = 0; i < n; ++i) agents.emplace_back(kObsSize, kActSize, rl, rng);

  SacTrainResult result;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Eigen::VectorXd> obs(n), raw(n);
  std::vector<Action> actions(n);
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    env.reset_random(static_cast<std::size_t>(cfg.episode_steps), rng, cfg.init_temp_spread_c);
    for (std::size_t i = 0; i < n; ++i) obs[i] = local_observation(env.context(), i, stats);
    CurveRow row;
    row.episode = ep;
    int steps = 0;
    while (!env.done()) {
      const bool warm = agents.front().buffer.size() >= static_cast<std::size_t>(rl.sac_batch);
      for (std::size_t i = 0; i < n; ++i) {
        if (warm) {
          raw[i] = sac_act(agents[i].policy, obs[i], ActMode::Stochastic, rng).action;
        } else {
          raw[i] = Eigen::Vector2d(unit(rng), unit(rng));
        }
        actions[i] = to_action(raw[i][0], raw[i][1], train.buildings[i]);
      }
      const RewardTerms terms = env.step(actions);
      row.mean_reward += terms.reward;
      row.tracking_term += terms.tracking;
      row.comfort_term += terms.comfort;
      ++steps;
      // Episode ends are time limits, so the next state is always bootstrapped.
      for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd next = local_observation(env.context(), i, stats);
        agents[i].buffer.add(obs[i], raw[i], terms.reward, next, false);
        obs[i] = std::move(next);
      }
      if (agents.front().buffer.size() >= static_cast<std::size_t>(rl.sac_batch)) {
        for (int u = 0; u < cfg.updates_per_step; ++u) {
          for (auto& ag : agents) sac_update(ag, rl, rng);
        }
      }
    }
    row.mean_reward /= steps;
    row.tracking_term /= steps;
    row.comfort_term /= steps;
    result.curve.push_back(row);
  }
  for (auto& ag : agents) result.policies.actors.push_back(std::move(ag.policy));
  result.policies.stats = stats;
  return result;
}

SacController::SacController(SacPolicies policies) : policies_(std::move(policies)) {
  if (policies_.actors.size() != policies_.stats.num_buildings()) {
    fail(ErrorCode::RosterMismatch, "policy count does not match the statistics");
  }
}

std::vector<Action> SacController::act(const StepContext& ctx) {
  if (ctx.states.size() != policies_.actors.size()) {
    fail(ErrorCode::RosterMismatch, std::to_string(policies_.actors.size()) + " policies for " +
                                        std::to_string(ctx.states.size()) + " buildings");
  }
  std::vector<Action> out;
  out.reserve(ctx.states.size());
  for (std::size_t i = 0; i < ctx.states.size(); ++i) out.push_back(policies_.act(ctx, i));
  return out;
}

}  // namespace dflex
