#include "dflex/mappo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dflex/error.hpp"

namespace dflex {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

std::vector<int> net_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

}  // namespace

GaussianPolicy::GaussianPolicy(int obs_dim, int act_dim, const std::vector<int>& hidden, std::mt19937_64& rng,
                               double init_log_std)
    : net_(nn::Mlp::random(net_sizes(obs_dim, hidden, act_dim), rng, 0.1)),
      log_std_(Eigen::VectorXd::Constant(act_dim, init_log_std)) {}

GaussianPolicy::GaussianPolicy(nn::Mlp mean_net, Eigen::VectorXd log_std)
    : net_(std::move(mean_net)), log_std_(std::move(log_std)) {
  if (net_.sizes().empty() || log_std_.size() != net_.output_size()) {
    fail(ErrorCode::ShapeMismatch, "log_std width does not match the policy output");
  }
}

Eigen::VectorXd GaussianPolicy::mean(const Eigen::VectorXd& obs) const {
  if (!obs.allFinite()) fail(ErrorCode::NonFiniteObservation, "policy input is not finite");
  return net_.predict(obs);
}

PolicyOutput GaussianPolicy::sample(const Eigen::VectorXd& obs, std::mt19937_64& rng) const {
  const Eigen::VectorXd mu = mean(obs);
  std::normal_distribution<double> g(0.0, 1.0);
  PolicyOutput out;
  out.action.resize(mu.size());
  for (Eigen::Index r = 0; r < mu.size(); ++r) {
    const double eps = g(rng);
    out.action[r] = mu[r] + std::exp(log_std_[r]) * eps;
    out.log_prob += -0.5 * eps * eps - log_std_[r] - kHalfLog2Pi;
  }
  return out;
}

double GaussianPolicy::log_prob(const Eigen::VectorXd& obs, const Eigen::VectorXd& action) const {
  const Eigen::VectorXd mu = mean(obs);
  if (action.size() != mu.size()) fail(ErrorCode::ShapeMismatch, "action width does not match the policy");
  double lp = 0.0;
  for (Eigen::Index r = 0; r < mu.size(); ++r) {
    const double z = (action[r] - mu[r]) / std::exp(log_std_[r]);
    lp += -0.5 * z * z - log_std_[r] - kHalfLog2Pi;
  }
  return lp;
}

// --- frozen policies ---

Action MappoPolicies::act(const StepContext& ctx, std::size_t i) const {
  if (i >= actors.size()) fail(ErrorCode::RosterMismatch, "no policy for building " + std::to_string(i));
  const Eigen::VectorXd mu = actors[i].mean(local_observation(ctx, i, stats));
  return to_action(mu[0], mu[1], ctx.params(i));
}

nn::Checkpoint MappoPolicies::to_checkpoint() const {
  nn::Checkpoint ck;
  for (std::size_t i = 0; i < actors.size(); ++i) {
    ck.nets.emplace_back("actor_" + std::to_string(i), actors[i].net());
    const auto& ls = actors[i].log_std();
    ck.vectors.emplace_back("log_std_" + std::to_string(i), std::vector<double>(ls.data(), ls.data() + ls.size()));
  }
  ck.vectors.emplace_back("obs_mean", stats.flat_mean());
  ck.vectors.emplace_back("obs_scale", stats.flat_scale());
  return ck;
}

MappoPolicies MappoPolicies::from_checkpoint(const nn::Checkpoint& ckpt) {
  MappoPolicies out;
  out.stats = ObservationStats::from_flat(ckpt.vector("obs_mean"), ckpt.vector("obs_scale"));
  for (std::size_t i = 0; i < out.stats.num_buildings(); ++i) {
    const auto& ls = ckpt.vector("log_std_" + std::to_string(i));
    GaussianPolicy p(ckpt.net("actor_" + std::to_string(i)),
                     Eigen::Map<const Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size())));
    if (p.obs_dim() != kObsSize || p.act_dim() != kActSize) {
      fail(ErrorCode::ShapeMismatch, "actor " + std::to_string(i) + " has the wrong shape");
    }
    out.actors.push_back(std::move(p));
  }
  return out;
}

// --- rollout ---

void RolloutBuffer::add(Eigen::MatrixXd o, Eigen::VectorXd s, Eigen::MatrixXd a, Eigen::VectorXd logp,
                        double reward, double value) {
  if (o.cols() != n_agents || a.cols() != n_agents || logp.size() != n_agents) {
    fail(ErrorCode::ShapeMismatch, "rollout entry does not match the agent count");
  }
  obs.push_back(std::move(o));
  state.push_back(std::move(s));
  actions.push_back(std::move(a));
  log_probs.push_back(std::move(logp));
  rewards.push_back(reward);
  values.push_back(value);
}

void RolloutBuffer::finish_segment(double last_value, double gamma, double lambda) {
  const std::size_t end = size();
  if (end == segment_start_) return;
  std::vector<double> v(values.begin() + static_cast<std::ptrdiff_t>(segment_start_), values.end());
  v.push_back(last_value);
  const std::span<const double> r(rewards.data() + segment_start_, end - segment_start_);
  const GaeResult g = gae(r, v, gamma, lambda);
  advantages.resize(end);
  td_residuals.resize(end);
  returns.resize(end);
  for (std::size_t j = 0; j < g.advantages.size(); ++j) {
    advantages[segment_start_ + j] = g.advantages[j];
    td_residuals[segment_start_ + j] = g.td_residuals[j];
    returns[segment_start_ + j] = g.advantages[j] + values[segment_start_ + j];
  }
  segment_start_ = end;
}

void RolloutBuffer::clear() {
  obs.clear();
  state.clear();
  actions.clear();
  log_probs.clear();
  rewards.clear();
  values.clear();
  advantages.clear();
  td_residuals.clear();
  returns.clear();
  ratios.clear();
  segment_start_ = 0;
}

// --- learner ---

MappoLearner::MappoLearner(std::size_t n_agents, const RlConfig& cfg, std::mt19937_64& rng, double init_log_std)
    : critic(nn::Mlp::random(net_sizes(global_state_size(n_agents), cfg.hidden, 1), rng)),
      critic_opt(critic.num_params(), nn::AdamConfig{cfg.critic_lr}) {
  for (std::size_t i = 0; i < n_agents; ++i) {
    actors.emplace_back(kObsSize, kActSize, cfg.hidden, rng, init_log_std);
    actor_opts.emplace_back(actors.back().net().num_params(), nn::AdamConfig{cfg.actor_lr});
    log_std_opts.emplace_back(kActSize, nn::AdamConfig{cfg.actor_lr});
  }
}

PpoLosses ppo_update(MappoLearner& learner, RolloutBuffer& rollout, const RlConfig& cfg, std::mt19937_64& rng) {
  const std::size_t steps = rollout.size();
  if (steps == 0) fail(ErrorCode::EmptyRollout, "rollout holds no steps");
  if (rollout.advantages.size() != steps) fail(ErrorCode::EmptyRollout, "rollout advantages are not computed");
  const int n = rollout.n_agents;
  if (n != static_cast<int>(learner.actors.size())) fail(ErrorCode::RosterMismatch, "rollout and learner disagree on agents");

  const auto mb = static_cast<std::size_t>((cfg.ppo_minibatch + n - 1) / n);
  rollout.ratios.assign(steps, Eigen::VectorXd::Ones(n));
  std::vector<std::size_t> order(steps);
  std::iota(order.begin(), order.end(), 0);

  PpoLosses out;
  long clipped = 0, total = 0;
  const int dim_s = static_cast<int>(rollout.state.front().size());
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < steps; start += mb) {
      const std::size_t m = std::min(mb, steps - start);
      const auto md = static_cast<double>(m);
      const auto mi = static_cast<Eigen::Index>(m);

      Eigen::VectorXd adv(mi);
      Eigen::MatrixXd s(dim_s, mi);
      Eigen::RowVectorXd ret(mi);
      for (Eigen::Index c = 0; c < mi; ++c) {
        const std::size_t t = order[start + static_cast<std::size_t>(c)];
        adv[c] = rollout.advantages[t];
        s.col(c) = rollout.state[t];
        ret[c] = rollout.returns[t];
      }
      const double mean = adv.mean();
      const double sd = m > 1 ? std::sqrt((adv.array() - mean).square().sum() / md) : 0.0;
      adv = (adv.array() - mean) / (sd + 1e-8);

      nn::Mlp::Cache vc;
      const Eigen::RowVectorXd v = learner.critic.forward(s, vc).row(0);
      out.value += (v - ret).squaredNorm() / md;
      Eigen::VectorXd vgrad;
      learner.critic.backward(vc, (2.0 / md) * (v - ret), vgrad);
      learner.critic_opt.step(learner.critic.params(), vgrad);

      double surrogate_sum = 0.0, max_ratio_error = 0.0;
      for (int i = 0; i < n; ++i) {
        GaussianPolicy& pol = learner.actors[static_cast<std::size_t>(i)];
        Eigen::MatrixXd o(kObsSize, mi), a(kActSize, mi);
        Eigen::VectorXd old(mi);
        for (Eigen::Index c = 0; c < mi; ++c) {
          const std::size_t t = order[start + static_cast<std::size_t>(c)];
          o.col(c) = rollout.obs[t].col(i);
          a.col(c) = rollout.actions[t].col(i);
          old[c] = rollout.log_probs[t][i];
        }
        nn::Mlp::Cache pc;
        const Eigen::MatrixXd mu = pol.net().forward(o, pc);
        const Eigen::ArrayXd inv_sigma = (-pol.log_std().array()).exp();
        const Eigen::ArrayXXd z = (a - mu).array().colwise() * inv_sigma;
        Eigen::MatrixXd d_mu(kActSize, mi);
        Eigen::VectorXd d_ls = Eigen::VectorXd::Zero(kActSize);
        for (Eigen::Index c = 0; c < mi; ++c) {
          const double logp = -0.5 * z.col(c).square().sum() - pol.log_std().sum() - kActSize * kHalfLog2Pi;
          const double ratio = std::exp(logp - old[c]);
          surrogate_sum += ppo_clip_objective(ratio, adv[c], cfg.clip);
          max_ratio_error = std::max(max_ratio_error, std::abs(ratio - 1.0));
          const double g = ppo_clip_gradient(ratio, adv[c], cfg.clip);
          if (g == 0.0) ++clipped;
          ++total;
          // Loss is -mean(surrogate); dlogp = ratio * dratio.
          const double d_logp = -g * ratio / md;
          d_mu.col(c) = d_logp * (z.col(c) * inv_sigma).matrix();
          d_ls += d_logp * (z.col(c).square() - 1.0).matrix();
          rollout.ratios[order[start + static_cast<std::size_t>(c)]][i] = ratio;
        }
        Eigen::VectorXd pgrad;
        pol.net().backward(pc, d_mu, pgrad);
        learner.actor_opts[static_cast<std::size_t>(i)].step(pol.net().params(), pgrad);
        learner.log_std_opts[static_cast<std::size_t>(i)].step(pol.log_std(), d_ls);
      }
      const double surrogate = surrogate_sum / (md * n);
      if (out.minibatches == 0) {
        out.first_surrogate = surrogate;
        out.first_mean_advantage = adv.mean();
        out.first_max_ratio_error = max_ratio_error;
      }
      out.policy -= surrogate;
      ++out.minibatches;
    }
  }
  out.policy /= out.minibatches;
  out.value /= out.minibatches;
  out.clip_fraction = total > 0 ? static_cast<double>(clipped) / static_cast<double>(total) : 0.0;
  return out;
}

// --- training ---

MappoTrainResult train_mappo(const Scenario& train, const ReferenceSignal& reference,
                             const ObservationStats& stats, const MappoTrainConfig& cfg, std::uint64_t seed) {
  if (cfg.iterations < 1 || cfg.episodes_per_iteration < 1 || cfg.episode_steps < 1) {
    fail(ErrorCode::InvalidParams, "iterations, episodes and episode length must be positive");
  }
  tune_allocator_for_training();
  DistrictEnv env(train, reference, cfg.reward);
  RlConfig rl = cfg.rl;
  rl.reward_scale = resolve_reward_scale(cfg.reward_scale, env.reward_config());
  validate(rl);
  const std::size_t n = train.num_buildings();
  if (stats.num_buildings() != n) fail(ErrorCode::RosterMismatch, "statistics do not match the roster");

  std::mt19937_64 rng(seed ^ 0x3a990f7bULL);
  MappoLearner learner(n, rl, rng, cfg.init_log_std);
  RolloutBuffer rollout(static_cast<int>(n));
  MappoTrainResult result;
  int episode = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    rollout.clear();
    for (int e = 0; e < cfg.episodes_per_iteration; ++e) {
      env.reset_random(static_cast<std::size_t>(cfg.episode_steps), rng, cfg.init_temp_spread_c);
      CurveRow row;
      row.episode = episode++;
      int steps = 0;
      while (!env.done()) {
        const StepContext ctx = env.context();
        Eigen::VectorXd s = global_state(ctx, stats);
        const double v = learner.critic.predict(s)[0];
        Eigen::MatrixXd o(kObsSize, static_cast<Eigen::Index>(n)), a(kActSize, static_cast<Eigen::Index>(n));
        Eigen::VectorXd logp(static_cast<Eigen::Index>(n));
        std::vector<Action> actions(n);
        for (std::size_t i = 0; i < n; ++i) {
          const auto c = static_cast<Eigen::Index>(i);
          o.col(c) = local_observation(ctx, i, stats);
          const PolicyOutput p = learner.actors[i].sample(o.col(c), rng);
          a.col(c) = p.action;
          logp[c] = p.log_prob;
          actions[i] = to_action(p.action[0], p.action[1], train.buildings[i]);
        }
        const RewardTerms terms = env.step(actions);
        row.mean_reward += terms.reward;
        row.tracking_term += terms.tracking;
        row.comfort_term += terms.comfort;
        ++steps;
        rollout.add(std::move(o), std::move(s), std::move(a), std::move(logp), rl.reward_scale * terms.reward, v);
      }
      // Time-limit truncation: bootstrap from the state after the window.
      const double last = learner.critic.predict(global_state(env.context(), stats))[0];
      rollout.finish_segment(last, rl.gamma, rl.lambda);
      row.mean_reward /= steps;
      row.tracking_term /= steps;
      row.comfort_term /= steps;
      result.curve.push_back(row);
    }
    ppo_update(learner, rollout, rl, rng);
  }
  result.policies.actors = std::move(learner.actors);
  result.policies.stats = stats;
  result.critic = std::move(learner.critic);
  return result;
}

MappoController::MappoController(MappoPolicies policies) : policies_(std::move(policies)) {
  if (policies_.actors.size() != policies_.stats.num_buildings()) {
    fail(ErrorCode::RosterMismatch, "policy count does not match the statistics");
  }
}

std::vector<Action> MappoController::act(const StepContext& ctx) {
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
