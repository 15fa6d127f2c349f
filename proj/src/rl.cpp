#include "dflex/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dflex/csv.hpp"
#include "dflex/error.hpp"

namespace dflex {

double huber(double e, double delta) {
  if (!(delta > 0.0)) fail(ErrorCode::InvalidParams, "huber delta must be positive");
  const double a = std::abs(e);
  return a <= delta ? 0.5 * e * e : delta * (a - 0.5 * delta);
}

double comfort_loss(std::span<const double> temps, std::span<const ComfortBand> bands) {
  if (temps.empty()) fail(ErrorCode::EmptyDistrict, "no temperatures");
  if (temps.size() != bands.size()) {
    fail(ErrorCode::RosterMismatch, std::to_string(temps.size()) + " temperatures for " +
                                        std::to_string(bands.size()) + " bands");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < temps.size(); ++i) {
    total += comfort_violation(temps[i], bands[i].t_min_c, bands[i].t_max_c);
  }
  return total / static_cast<double>(temps.size());
}

void validate(const RewardConfig& cfg) {
  if (!(cfg.w_track >= 0.0) || !(cfg.w_comfort >= 0.0)) {
    fail(ErrorCode::InvalidParams, "reward weights must be nonnegative");
  }
  if (!(cfg.delta_kwh > 0.0) || !std::isfinite(cfg.delta_kwh)) {
    fail(ErrorCode::InvalidParams, "reward delta must be positive and finite");
  }
}

RewardConfig with_default_delta(RewardConfig cfg, const ReferenceSignal& reference) {
  if (cfg.delta_kwh > 0.0) return cfg;
  if (reference.r.empty()) fail(ErrorCode::EmptyTrace, "reference is empty");
  double sum = 0.0;
  for (double r : reference.r) sum += r;
  cfg.delta_kwh = 0.1 * std::abs(sum / static_cast<double>(reference.size()));
  if (!(cfg.delta_kwh > 0.0)) fail(ErrorCode::ZeroReferenceMean, "cannot derive delta from a zero reference");
  return cfg;
}

RewardTerms global_reward(double y, double r, std::span<const double> temps,
                          std::span<const ComfortBand> bands, const RewardConfig& cfg) {
  RewardTerms out;
  out.tracking = huber(y - r, cfg.delta_kwh);
  out.comfort = comfort_loss(temps, bands);
  out.reward = -(cfg.w_track * out.tracking + cfg.w_comfort * out.comfort);
  return out;
}

// --- observations ---

std::vector<double> ObservationStats::flat_mean() const {
  std::vector<double> out;
  for (const auto& m : mean) out.insert(out.end(), m.begin(), m.end());
  return out;
}

std::vector<double> ObservationStats::flat_scale() const {
  std::vector<double> out;
  for (const auto& s : scale) out.insert(out.end(), s.begin(), s.end());
  return out;
}

ObservationStats ObservationStats::from_flat(const std::vector<double>& mean, const std::vector<double>& scale) {
  if (mean.size() != scale.size() || mean.size() % kFeatures != 0 || mean.empty()) {
    fail(ErrorCode::ShapeMismatch, "observation statistics have inconsistent lengths");
  }
  ObservationStats out;
  for (std::size_t i = 0; i < mean.size(); i += kFeatures) {
    std::array<double, kFeatures> m{}, s{};
    for (int f = 0; f < kFeatures; ++f) {
      m[f] = mean[i + f];
      s[f] = scale[i + f];
      if (!std::isfinite(m[f]) || !(s[f] > 0.0)) fail(ErrorCode::InvalidParams, "bad observation statistics");
    }
    out.mean.push_back(m);
    out.scale.push_back(s);
  }
  return out;
}

ObservationStats fit_observation_stats(const DistrictTrace& trace) {
  if (trace.num_steps == 0 || trace.num_buildings == 0) fail(ErrorCode::EmptyTrace, "no steps to fit");
  constexpr int F = ObservationStats::kFeatures;
  ObservationStats out;
  const auto n_steps = static_cast<double>(trace.num_steps);
  for (std::size_t i = 0; i < trace.num_buildings; ++i) {
    std::array<double, F> sum{}, sq{};
    for (std::size_t k = 0; k < trace.num_steps; ++k) {
      // Observations are taken at the start of a step, from the prior state.
      const BuildingState& s = k == 0 ? trace.initial[i] : trace.state(k - 1, i);
      const double f[F] = {trace.disturbance(k, i).t_out_c, s.t_c, s.soc, trace.reference[k], s.y_kwh};
      for (int j = 0; j < F; ++j) {
        sum[j] += f[j];
        sq[j] += f[j] * f[j];
      }
    }
    std::array<double, F> mean{}, scale{};
    for (int j = 0; j < F; ++j) {
      mean[j] = sum[j] / n_steps;
      const double sd = std::sqrt(std::max(0.0, sq[j] / n_steps - mean[j] * mean[j]));
      scale[j] = sd > 1e-6 ? sd : std::max(1.0, 0.1 * std::abs(mean[j]));
    }
    out.mean.push_back(mean);
    out.scale.push_back(scale);
  }
  return out;
}

namespace {

void check_stats(const StepContext& ctx, const ObservationStats& stats, std::size_t i) {
  if (i >= stats.num_buildings() || i >= ctx.states.size()) {
    fail(ErrorCode::RosterMismatch, "building " + std::to_string(i) + " outside the observation roster");
  }
}

double normalized(double value, const ObservationStats& stats, std::size_t i, int feature) {
  return (value - stats.mean[i][feature]) / stats.scale[i][feature];
}

}  // namespace

Eigen::VectorXd local_observation(const StepContext& ctx, std::size_t i, const ObservationStats& stats) {
  check_stats(ctx, stats, i);
  const BuildingState& s = ctx.states[i];
  const Disturbance& d = ctx.disturbance(i);
  const double angle = 2.0 * std::numbers::pi * d.hour_of_day / 24.0;
  Eigen::VectorXd o(kObsSize);
  o[kSinHour] = std::sin(angle);
  o[kCosHour] = std::cos(angle);
  o[kTOut] = normalized(d.t_out_c, stats, i, 0);
  o[kTIn] = normalized(s.t_c, stats, i, 1);
  o[kSoc] = normalized(s.soc, stats, i, 2);
  o[kRef] = normalized(ctx.r(), stats, i, 3);
  o[kPrevLoad] = normalized(s.y_kwh, stats, i, 4);
  if (!o.allFinite()) {
    fail(ErrorCode::NonFiniteObservation, "observation of building " + std::to_string(i) + " at step " +
                                              std::to_string(ctx.k) + " is not finite");
  }
  return o;
}

Eigen::VectorXd global_state(const StepContext& ctx, const ObservationStats& stats) {
  const std::size_t n = ctx.states.size();
  if (n == 0) fail(ErrorCode::EmptyDistrict, "no buildings");
  if (stats.num_buildings() != n) fail(ErrorCode::RosterMismatch, "statistics do not match the roster");
  Eigen::VectorXd s(global_state_size(n));
  double t_out = 0.0, t_out_mean = 0.0, t_out_scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const BuildingState& b = ctx.states[i];
    s[static_cast<Eigen::Index>(3 * i)] = normalized(b.t_c, stats, i, 1);
    s[static_cast<Eigen::Index>(3 * i + 1)] = normalized(b.soc, stats, i, 2);
    s[static_cast<Eigen::Index>(3 * i + 2)] = normalized(b.y_kwh, stats, i, 4);
    t_out += ctx.disturbance(i).t_out_c;
    t_out_mean += stats.mean[i][0];
    t_out_scale += stats.scale[i][0];
  }
  const double angle = 2.0 * std::numbers::pi * ctx.disturbance(0).hour_of_day / 24.0;
  const auto base = static_cast<Eigen::Index>(3 * n);
  s[base] = (t_out - t_out_mean) / t_out_scale;
  s[base + 1] = std::sin(angle);
  s[base + 2] = std::cos(angle);
  s[base + 3] = normalized(ctx.r(), stats, 0, 3);
  if (!s.allFinite()) {
    fail(ErrorCode::NonFiniteObservation, "global state at step " + std::to_string(ctx.k) + " is not finite");
  }
  return s;
}

Action to_action(double a_hvac, double a_batt, const BuildingParams& params) {
  const double h = std::clamp(a_hvac, -1.0, 1.0);
  const double b = std::clamp(a_batt, -1.0, 1.0);
  return {0.5 * (h + 1.0), params.p_min_kw + 0.5 * (b + 1.0) * (params.p_max_kw - params.p_min_kw)};
}

// --- environment ---

DistrictEnv::DistrictEnv(const Scenario& scenario, const ReferenceSignal& reference, RewardConfig reward)
    : scenario_(&scenario), reference_(&reference), reward_(with_default_delta(reward, reference)),
      bands_(bands_of(scenario)) {
  validate(scenario);
  validate(reward_);
  if (reference.size() != scenario.num_steps()) {
    fail(ErrorCode::LengthMismatch, "reference length does not match the scenario");
  }
  temps_.resize(scenario.num_buildings());
}

void DistrictEnv::reset(std::size_t start, std::size_t length, std::vector<BuildingState> initial) {
  if (length == 0 || start + length > scenario_->num_steps()) {
    fail(ErrorCode::LengthMismatch, "episode window exceeds the scenario");
  }
  if (initial.size() != scenario_->num_buildings()) {
    fail(ErrorCode::RosterMismatch, "initial states do not match the roster");
  }
  states_ = std::move(initial);
  k_ = start;
  end_ = start + length;
  y_prev_ = 0.0;
}

void DistrictEnv::reset_random(std::size_t length, std::mt19937_64& rng, double temp_spread_c) {
  const std::size_t steps = scenario_->num_steps();
  // The step after the window must exist so the final observation can be bootstrapped.
  if (length == 0 || length >= steps) fail(ErrorCode::LengthMismatch, "episode needs a step beyond its window");
  std::uniform_int_distribution<std::size_t> start_dist(0, (steps - length - 1) / length);
  const std::size_t start = start_dist(rng) * length;
  std::vector<BuildingState> init;
  init.reserve(scenario_->num_buildings());
  for (const auto& p : scenario_->buildings) {
    std::uniform_real_distribution<double> t(p.t_min_c - temp_spread_c, p.t_max_c + temp_spread_c);
    std::uniform_real_distribution<double> soc(p.soc_min, p.soc_max);
    BuildingState s;
    s.t_c = t(rng);
    s.soc = soc(rng);
    s.y_kwh = 0.0;
    init.push_back(s);
  }
  reset(start, length, std::move(init));
}

StepContext DistrictEnv::context() const {
  return StepContext{k_, scenario_, reference_, states_, y_prev_};
}

RewardTerms DistrictEnv::step(const std::vector<Action>& actions) {
  if (done()) fail(ErrorCode::InvariantViolation, "step after the end of the episode");
  const std::size_t n = scenario_->num_buildings();
  if (actions.size() != n) fail(ErrorCode::ControllerError, "wrong number of actions");
  double y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const StepResult res = step_building(states_[i], scenario_->buildings[i], actions[i],
                                         scenario_->disturbances[i][k_], scenario_->calendar.dt_h);
    states_[i] = res.state;
    temps_[i] = res.state.t_c;
    y += res.state.y_kwh;
  }
  const RewardTerms terms = global_reward(y, reference_->r[k_], temps_, bands_, reward_);
  y_prev_ = y;
  ++k_;
  return terms;
}

// --- advantage estimation ---

GaeResult gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda) {
  if (values.size() != rewards.size() + 1) {
    fail(ErrorCode::LengthMismatch, "values need one more entry than rewards (" +
                                        std::to_string(values.size()) + " vs " +
                                        std::to_string(rewards.size()) + ")");
  }
  const std::size_t k = rewards.size();
  GaeResult out;
  out.advantages.resize(k);
  out.td_residuals.resize(k);
  double running = 0.0;
  for (std::size_t j = k; j-- > 0;) {
    out.td_residuals[j] = rewards[j] + gamma * values[j + 1] - values[j];
    running = out.td_residuals[j] + gamma * lambda * running;
    out.advantages[j] = running;
  }
  return out;
}

double ppo_clip_objective(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

double ppo_clip_gradient(double ratio, double advantage, double eps) {
  // The unclipped branch is active unless the ratio has left the trust region
  // in the direction the advantage rewards.
  if (advantage > 0.0 && ratio > 1.0 + eps) return 0.0;
  if (advantage < 0.0 && ratio < 1.0 - eps) return 0.0;
  return advantage;
}

// --- replay ---

ReplayBuffer::ReplayBuffer(int obs_dim, int act_dim, std::size_t capacity)
    : obs_dim_(obs_dim), act_dim_(act_dim), capacity_(capacity) {
  if (obs_dim < 1 || act_dim < 1 || capacity < 1) fail(ErrorCode::InvalidParams, "bad replay buffer shape");
}

void ReplayBuffer::add(const Eigen::VectorXd& obs, const Eigen::VectorXd& act, double reward,
                       const Eigen::VectorXd& next_obs, bool done) {
  if (obs.size() != obs_dim_ || next_obs.size() != obs_dim_ || act.size() != act_dim_) {
    fail(ErrorCode::ShapeMismatch, "transition does not match the buffer shape");
  }
  const auto od = static_cast<std::size_t>(obs_dim_);
  const auto ad = static_cast<std::size_t>(act_dim_);
  if (next_ == size_ && size_ < capacity_) {
    obs_.insert(obs_.end(), obs.data(), obs.data() + od);
    next_obs_.insert(next_obs_.end(), next_obs.data(), next_obs.data() + od);
    act_.insert(act_.end(), act.data(), act.data() + ad);
    reward_.push_back(reward);
    done_.push_back(done ? 1.0 : 0.0);
  } else {
    std::copy(obs.data(), obs.data() + od, obs_.begin() + static_cast<std::ptrdiff_t>(next_ * od));
    std::copy(next_obs.data(), next_obs.data() + od, next_obs_.begin() + static_cast<std::ptrdiff_t>(next_ * od));
    std::copy(act.data(), act.data() + ad, act_.begin() + static_cast<std::ptrdiff_t>(next_ * ad));
    reward_[next_] = reward;
    done_[next_] = done ? 1.0 : 0.0;
  }
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

ReplayBuffer::Batch ReplayBuffer::sample(int batch, std::mt19937_64& rng) const {
  if (batch < 1 || size_ < static_cast<std::size_t>(batch)) {
    fail(ErrorCode::BufferUnderflow, "buffer holds " + std::to_string(size_) + " transitions, batch needs " +
                                         std::to_string(batch));
  }
  Batch b;
  b.obs.resize(obs_dim_, batch);
  b.next_obs.resize(obs_dim_, batch);
  b.act.resize(act_dim_, batch);
  b.reward.resize(batch);
  b.done.resize(batch);
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  const auto od = static_cast<std::size_t>(obs_dim_);
  const auto ad = static_cast<std::size_t>(act_dim_);
  for (int j = 0; j < batch; ++j) {
    const std::size_t s = pick(rng);
    std::copy_n(obs_.begin() + static_cast<std::ptrdiff_t>(s * od), od, b.obs.col(j).data());
    std::copy_n(next_obs_.begin() + static_cast<std::ptrdiff_t>(s * od), od, b.next_obs.col(j).data());
    std::copy_n(act_.begin() + static_cast<std::ptrdiff_t>(s * ad), ad, b.act.col(j).data());
    b.reward[j] = reward_[s];
    b.done[j] = done_[s];
  }
  return b;
}

// --- configuration and reporting ---

void validate(const RlConfig& cfg) {
  auto require = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::InvalidParams, what);
  };
  require(cfg.gamma >= 0.0 && cfg.gamma <= 1.0, "gamma must lie in [0, 1]");
  require(cfg.lambda >= 0.0 && cfg.lambda <= 1.0, "lambda must lie in [0, 1]");
  require(cfg.clip > 0.0, "clip must be positive");
  require(cfg.alpha >= 0.0, "alpha must be nonnegative");
  require(cfg.actor_lr > 0.0 && cfg.critic_lr > 0.0, "learning rates must be positive");
  require(cfg.tau > 0.0 && cfg.tau <= 1.0, "tau must lie in (0, 1]");
  require(cfg.sac_batch >= 1 && cfg.ppo_minibatch >= 1 && cfg.ppo_epochs >= 1, "batch sizes must be positive");
  require(cfg.replay_capacity >= 1, "replay capacity must be positive");
  require(cfg.reward_scale > 0.0, "reward scale must be positive");
  for (int h : cfg.hidden) require(h >= 1, "hidden widths must be positive");
}

void write_training_curve(const std::vector<CurveRow>& curve, const std::filesystem::path& path) {
  std::string out = csv::join_row({"episode", "mean_reward", "tracking_term", "comfort_term"});
  for (const auto& row : curve) {
    out += csv::join_row({std::to_string(row.episode), csv::format_double(row.mean_reward),
                          csv::format_double(row.tracking_term), csv::format_double(row.comfort_term)});
  }
  csv::write_file(path, out);
}

CurveRow score_trace(const DistrictTrace& trace, const std::vector<ComfortBand>& bands, const RewardConfig& cfg) {
  if (trace.num_steps == 0) fail(ErrorCode::EmptyTrace, "trace is empty");
  CurveRow row;
  std::vector<double> temps(trace.num_buildings);
  for (std::size_t k = 0; k < trace.num_steps; ++k) {
    for (std::size_t i = 0; i < trace.num_buildings; ++i) temps[i] = trace.state(k, i).t_c;
    const RewardTerms t = global_reward(trace.district_load[k], trace.reference[k], temps, bands, cfg);
    row.mean_reward += t.reward;
    row.tracking_term += t.tracking;
    row.comfort_term += t.comfort;
  }
  const auto k = static_cast<double>(trace.num_steps);
  row.mean_reward /= k;
  row.tracking_term /= k;
  row.comfort_term /= k;
  return row;
}

void tune_allocator_for_training() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 128 << 20);
    return true;
  }();
  (void)done;
#endif
}

void RandomController::reset(const Scenario& /*scenario*/, std::uint64_t seed) {
  rng_.seed(seed ^ 0x7a9d0c4e1ULL);
}

std::vector<Action> RandomController::act(const StepContext& ctx) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Action> out;
  out.reserve(ctx.states.size());
  for (std::size_t i = 0; i < ctx.states.size(); ++i) {
    const double h = unit(rng_);
    const double b = unit(rng_);
    out.push_back(to_action(h, b, ctx.params(i)));
  }
  return out;
}

}  // namespace dflex
