#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "dflex/error.hpp"
#include "dflex/mappo.hpp"
#include "dflex/rbc.hpp"
#include "dflex/rl.hpp"
#include "dflex/sac.hpp"
#include "dflex/scenario.hpp"
#include "rl_cases.hpp"
#include "test_util.hpp"

using namespace dflex;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SmallDistrict {
  TrainTestScenarios tt = generate_train_test(3, 4, 2, 11);
  ReferenceSignal ref = build_reference(compute_baseline(tt.train));
  ReferenceSignal test_ref = build_reference(compute_baseline(tt.test));
  ObservationStats stats;

  SmallDistrict() {
    RbcController rbc;
    stats = fit_observation_stats(run_episode(tt.train, rbc, ref, 0));
  }
};

RlConfig small_rl() {
  RlConfig cfg;
  cfg.hidden = {16, 16};
  cfg.sac_batch = 32;
  cfg.ppo_minibatch = 48;
  cfg.ppo_epochs = 2;
  return cfg;
}

void set_head_bias(nn::Mlp& net, std::initializer_list<double> values) {
  auto b = net.bias(net.num_layers() - 1);
  REQUIRE(static_cast<std::size_t>(b.size()) == values.size());
  Eigen::Index j = 0;
  for (double v : values) b[j++] = v;
}

bool same_traces(const DistrictTrace& a, const DistrictTrace& b) {
  if (a.actions.size() != b.actions.size()) return false;
  for (std::size_t j = 0; j < a.actions.size(); ++j) {
    if (a.actions[j].u != b.actions[j].u || a.actions[j].p_batt_kw != b.actions[j].p_batt_kw) return false;
    if (a.states[j].t_c != b.states[j].t_c || a.states[j].soc != b.states[j].soc) return false;
  }
  return a.district_load == b.district_load;
}

}  // namespace

TEST_CASE("huber examples and errors") {
  CHECK(huber(0.0, 1.0) == 0.0);
  CHECK(huber(0.5, 1.0) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(huber(3.0, 1.0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(huber(-3.0, 1.0) == huber(3.0, 1.0));
  CHECK(test::code_of([] { (void)huber(1.0, 0.0); }) == ErrorCode::InvalidParams);
}

TEST_CASE("huber is continuous with matching one-sided slopes at the threshold") {
  const double h = 1e-7;
  for (double delta : {0.3, 1.0, 6.5}) {
    CHECK(huber(delta - 1e-12, delta) == doctest::Approx(huber(delta + 1e-12, delta)).epsilon(1e-10));
    const double left = (huber(delta, delta) - huber(delta - h, delta)) / h;
    const double right = (huber(delta + h, delta) - huber(delta, delta)) / h;
    CHECK(left == doctest::Approx(delta).epsilon(1e-5));
    CHECK(right == doctest::Approx(delta).epsilon(1e-5));
  }
}

TEST_CASE("comfort loss") {
  const std::vector<ComfortBand> band2(2, ComfortBand{20.0, 24.0});
  CHECK(comfort_loss(std::vector<double>{21.0, 23.5}, band2) == 0.0);
  CHECK(comfort_loss(std::vector<double>{25.0, 22.0}, band2) == doctest::Approx(0.5));

  const std::vector<double> temps{18.2, 26.1, 22.0};
  const std::vector<ComfortBand> band3{{20.0, 24.0}, {19.0, 25.0}, {21.0, 23.0}};
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) sum += comfort_violation(temps[i], band3[i].t_min_c, band3[i].t_max_c);
  CHECK(comfort_loss(temps, band3) == doctest::Approx(sum / 3.0).epsilon(1e-15));

  CHECK(test::code_of([] { (void)comfort_loss(std::vector<double>{}, std::vector<ComfortBand>{}); }) ==
        ErrorCode::EmptyDistrict);
  CHECK(test::code_of([&] { (void)comfort_loss(temps, band2); }) == ErrorCode::RosterMismatch);
}

TEST_CASE("global reward examples") {
  const std::vector<double> ok{22.0, 21.0};
  const std::vector<ComfortBand> bands(2);
  RewardConfig cfg{1.0, 10.0, 1.0};
  CHECK(global_reward(50.0, 50.0, ok, bands, cfg).reward == 0.0);

  RewardConfig track_only{1.0, 0.0, 1.0};
  const auto t = global_reward(52.0, 50.0, ok, bands, track_only);
  CHECK(t.reward == doctest::Approx(-1.5));
  CHECK(t.tracking == doctest::Approx(1.5));
  CHECK(t.comfort == 0.0);

  const auto c = global_reward(50.0, 50.0, std::vector<double>{25.0, 22.0}, bands, cfg);
  CHECK(c.reward == doctest::Approx(-5.0));

  CHECK(test::code_of([] { validate(RewardConfig{-1.0, 1.0, 1.0}); }) == ErrorCode::InvalidParams);
  CHECK(test::code_of([] { validate(RewardConfig{1.0, 1.0, 0.0}); }) == ErrorCode::InvalidParams);
}

TEST_CASE("reward is never positive and worsening a term never raises it") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> w(0.0, 5.0), e(-30.0, 30.0), temp(14.0, 30.0), step(0.0, 3.0);
  const std::vector<ComfortBand> bands(3);
  for (int t = 0; t < 2000; ++t) {
    const RewardConfig cfg{w(rng), w(rng), 0.1 + w(rng)};
    const double err = e(rng);
    std::vector<double> temps{temp(rng), temp(rng), temp(rng)};
    const double base = global_reward(60.0 + err, 60.0, temps, bands, cfg).reward;
    CHECK(base <= 0.0);

    const double worse_err = err + (err >= 0 ? step(rng) : -step(rng));
    CHECK(global_reward(60.0 + worse_err, 60.0, temps, bands, cfg).reward <= base);

    // Push one building further from the band centre.
    temps[0] += temps[0] >= 22.0 ? step(rng) : -step(rng);
    CHECK(global_reward(60.0 + err, 60.0, temps, bands, cfg).reward <= base);
  }
}

TEST_CASE("default delta is a tenth of the mean reference") {
  const ReferenceSignal ref{{50.0, 70.0}};
  CHECK(with_default_delta({}, ref).delta_kwh == doctest::Approx(6.0));
  CHECK(with_default_delta({1.0, 1.0, 2.5}, ref).delta_kwh == 2.5);
}

TEST_CASE("gae hand examples") {
  const auto one = gae(std::vector<double>{1.0}, std::vector<double>{0.5, 0.0}, 0.99, 0.95);
  CHECK(one.advantages[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(one.td_residuals[0] == doctest::Approx(0.5).epsilon(1e-15));

  // delta_0 = 1 + 0.9*2 - 1 = 1.8, delta_1 = 0.5 + 0.9*3 - 2 = 1.2, A_0 = 1.8 + 0.9*1.2.
  const std::vector<double> r{1.0, 0.5}, v{1.0, 2.0, 3.0};
  const auto l1 = gae(r, v, 0.9, 1.0);
  CHECK(l1.td_residuals[0] == doctest::Approx(1.8));
  CHECK(l1.td_residuals[1] == doctest::Approx(1.2));
  CHECK(l1.advantages[0] == doctest::Approx(2.88));
  CHECK(l1.advantages[1] == doctest::Approx(1.2));

  const auto l0 = gae(r, v, 0.9, 0.0);
  CHECK(l0.advantages[0] == l0.td_residuals[0]);
  CHECK(l0.advantages[1] == l0.td_residuals[1]);

  CHECK(test::code_of([&] { (void)gae(r, std::vector<double>{1.0, 2.0}, 0.9, 0.9); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("gae recursion matches the double sum on random sequences") {
  const auto c = test::gae_random_check(300, 21);
  CHECK(c.worst_oracle <= 1e-10);
  CHECK(c.worst_lambda0 == 0.0);
  CHECK(c.worst_lambda1 <= 1e-10);
}

TEST_CASE("ppo clip examples") {
  CHECK(ppo_clip_objective(1.5, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(ppo_clip_objective(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  CHECK(ppo_clip_objective(1.0, 0.7, 0.2) == doctest::Approx(0.7));
  CHECK(ppo_clip_gradient(1.5, 1.0, 0.2) == 0.0);
  CHECK(ppo_clip_gradient(0.5, -1.0, 0.2) == 0.0);
  CHECK(ppo_clip_gradient(0.5, 1.0, 0.2) == 1.0);
  CHECK(ppo_clip_gradient(1.5, -1.0, 0.2) == -1.0);
}

TEST_CASE("clipped contributions respect the min structure") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ratio(0.0, 3.0), adv(-5.0, 5.0), eps(0.01, 0.5);
  for (int t = 0; t < 5000; ++t) {
    const double rho = ratio(rng), a = adv(rng), e = eps(rng);
    const double c = ppo_clip_objective(rho, a, e);
    const bool on_bound = std::abs(c - (1.0 - e) * a) < 1e-12 || std::abs(c - (1.0 + e) * a) < 1e-12;
    const bool unclipped = std::abs(c - rho * a) < 1e-12;
    CHECK((on_bound || unclipped));
    CHECK(c <= rho * a + 1e-12);
    if (a > 0) CHECK(c <= (1.0 + e) * a + 1e-12);
    if (a < 0) CHECK(c <= (1.0 - e) * a + 1e-12);

    const double h = 1e-7;
    if (std::abs(rho - 1.0 - e) > 1e-5 && std::abs(rho - 1.0 + e) > 1e-5) {
      const double fd = (ppo_clip_objective(rho + h, a, e) - ppo_clip_objective(rho - h, a, e)) / (2 * h);
      CHECK(ppo_clip_gradient(rho, a, e) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("replay buffer overwrites in a ring and samples only stored slots") {
  ReplayBuffer buf(1, 1, 4);
  std::mt19937_64 rng(1);
  CHECK(test::code_of([&] { (void)buf.sample(1, rng); }) == ErrorCode::BufferUnderflow);
  for (int t = 0; t < 6; ++t) {
    buf.add(Eigen::VectorXd::Constant(1, t), Eigen::VectorXd::Constant(1, -t), t, Eigen::VectorXd::Constant(1, t + 1),
            t % 2 == 1);
  }
  CHECK(buf.size() == 4);
  CHECK(buf.capacity() == 4);
  std::vector<int> seen(6, 0);
  for (int draw = 0; draw < 100; ++draw) {
    const auto b = buf.sample(4, rng);
    for (Eigen::Index c = 0; c < 4; ++c) {
    const int t = static_cast<int>(b.obs(0, c));
    REQUIRE(t >= 2);
    REQUIRE(t <= 5);
    ++seen[static_cast<std::size_t>(t)];
    CHECK(b.act(0, c) == -t);
    CHECK(b.reward[c] == t);
    CHECK(b.next_obs(0, c) == t + 1);
    CHECK(b.done[c] == (t % 2 == 1 ? 1.0 : 0.0));
    }
  }
  for (int t = 2; t < 6; ++t) CHECK(seen[static_cast<std::size_t>(t)] > 60);
  CHECK(test::code_of([&] { (void)buf.sample(5, rng); }) == ErrorCode::BufferUnderflow);
}

TEST_CASE("squash correction is stable in the tails") {
  for (double u : {0.0, 0.3, -1.7, 4.0}) {
    const double t = std::tanh(u);
    CHECK(log_one_minus_tanh_sq(u) == doctest::Approx(std::log(1.0 - t * t)).epsilon(1e-9));
  }
  CHECK(log_one_minus_tanh_sq(40.0) == doctest::Approx(2.0 * (std::log(2.0) - 40.0)).epsilon(1e-12));
  CHECK(std::isfinite(log_one_minus_tanh_sq(1e4)));
}

TEST_CASE("sac samples follow the analytic squashed density") {
  std::mt19937_64 rng(4);
  SquashedGaussianPolicy pol(3, 1, {8}, rng);
  set_head_bias(pol.net(), {0.4, -0.6});
  const Eigen::VectorXd o = Eigen::Vector3d(0.2, -0.1, 0.5);

  constexpr int kDraws = 10000, kBins = 20;
  std::vector<int> counts(kBins, 0);
  for (int t = 0; t < kDraws; ++t) {
    const PolicyOutput s = sac_act(pol, o, ActMode::Stochastic, rng);
    REQUIRE(std::abs(s.action[0]) < 1.0);
    CHECK(s.log_prob == doctest::Approx(pol.log_prob(o, s.action)).epsilon(1e-8));
    const int bin = std::min(kBins - 1, static_cast<int>((s.action[0] + 1.0) / 2.0 * kBins));
    ++counts[static_cast<std::size_t>(bin)];
  }
  // Bin mass by midpoint quadrature of exp(log_prob).
  for (int b = 0; b < kBins; ++b) {
    const double lo = -1.0 + 2.0 * b / kBins, width = 2.0 / kBins;
    double mass = 0.0;
    constexpr int kSub = 200;
    for (int s = 0; s < kSub; ++s) {
      const double a = lo + (s + 0.5) * width / kSub;
      mass += std::exp(pol.log_prob(o, Eigen::VectorXd::Constant(1, a))) * width / kSub;
    }
    const double expected = mass * kDraws;
    const double sd = std::sqrt(std::max(1.0, expected * (1.0 - mass)));
    CHECK(std::abs(counts[static_cast<std::size_t>(b)] - expected) <= 4.5 * sd);
  }
}

TEST_CASE("sac actions are bounded, deterministic per seed, and reject bad input") {
  std::mt19937_64 init(2);
  SquashedGaussianPolicy pol(kObsSize, kActSize, {16}, init);
  set_head_bias(pol.net(), {30.0, -30.0, 0.0, 0.0});
  std::mt19937_64 r1(9), r2(9);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd o = Eigen::VectorXd::Random(kObsSize) * 5.0;
    const auto det = sac_act(pol, o, ActMode::Deterministic, r1);
    CHECK(det.action.cwiseAbs().maxCoeff() <= 1.0);
    const auto a = sac_act(pol, o, ActMode::Stochastic, r1);
    const auto b = sac_act(pol, o, ActMode::Stochastic, r2);
    (void)sac_act(pol, o, ActMode::Deterministic, r2);
    CHECK(a.action == b.action);
    CHECK(a.log_prob == b.log_prob);
  }
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(kObsSize);
  bad[3] = kNaN;
  CHECK(test::code_of([&] { (void)sac_act(pol, bad, ActMode::Deterministic, r1); }) ==
        ErrorCode::NonFiniteObservation);
}

TEST_CASE("critic loss is zero at its fixed point") {
  const Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(10, -3.0, 4.0);
  CHECK(critic_loss(q, q) == 0.0);
  CHECK(critic_loss(q, q.array() + 2.0) == doctest::Approx(4.0));
  CHECK(test::code_of([&] { (void)critic_loss(q, Eigen::VectorXd::Zero(3)); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("actor objective gradient matches finite differences") {
  RlConfig cfg;
  cfg.hidden = {5, 4};
  std::mt19937_64 rng(3);
  SacAgent ag(3, 2, cfg, rng);
  std::normal_distribution<double> g;
  for (Eigen::Index j = 0; j < ag.policy.net().num_params(); ++j) ag.policy.net().params()[j] += 0.3 * g(rng);
  Eigen::MatrixXd obs(3, 5), eps(2, 5);
  for (Eigen::Index j = 0; j < obs.size(); ++j) obs.data()[j] = g(rng);
  for (Eigen::Index j = 0; j < eps.size(); ++j) eps.data()[j] = g(rng);

  for (double alpha : {0.0, 0.2}) {
    const auto obj = sac_actor_objective(ag.policy, ag.q1, ag.q2, obs, eps, alpha);
    if (alpha == 0.0) {
      CHECK(obj.entropy_term == 0.0);
      CHECK(obj.loss == -obj.q_mean);
    }
    double worst = 0.0;
    for (Eigen::Index j = 0; j < ag.policy.net().num_params(); ++j) {
      SquashedGaussianPolicy p = ag.policy, m = ag.policy;
      const double h = 1e-6;
      p.net().params()[j] += h;
      m.net().params()[j] -= h;
      const double fd = (sac_actor_objective(p, ag.q1, ag.q2, obs, eps, alpha).loss -
                         sac_actor_objective(m, ag.q1, ag.q2, obs, eps, alpha).loss) /
                        (2 * h);
      worst = std::max(worst, std::abs(fd - obj.grad[j]) / std::max(1.0, std::abs(fd)));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("sac update needs a full batch and moves the targets slowly") {
  RlConfig cfg = small_rl();
  std::mt19937_64 rng(6);
  SacAgent ag(2, 1, cfg, rng);
  const Eigen::VectorXd o = Eigen::Vector2d(0.1, -0.2);
  for (int t = 0; t < cfg.sac_batch - 1; ++t) ag.buffer.add(o, Eigen::VectorXd::Zero(1), -1.0, o, false);
  CHECK(test::code_of([&] { (void)sac_update(ag, cfg, rng); }) == ErrorCode::BufferUnderflow);
  ag.buffer.add(o, Eigen::VectorXd::Zero(1), -1.0, o, false);

  const Eigen::VectorXd q1_before = ag.q1.params(), target_before = ag.q1_target.params();
  const auto losses = sac_update(ag, cfg, rng);
  CHECK(std::isfinite(losses.critic));
  CHECK(std::isfinite(losses.actor));
  const Eigen::VectorXd expected = (1.0 - cfg.tau) * target_before + cfg.tau * ag.q1.params();
  CHECK((ag.q1_target.params() - expected).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(ag.q1.params() != q1_before);
}

TEST_CASE("sac bandit converges to the known optimum") {
  const double a = test::sac_bandit(5000, 1);
  CHECK(a == doctest::Approx(0.5).epsilon(0.1));
  CHECK(std::abs(a - 0.5) <= 0.05);
}

TEST_CASE("observations use the building's own data and fail on non-finite input") {
  SmallDistrict d;
  const auto& sc = d.tt.test;
  std::vector<BuildingState> states = sc.initial_states;
  StepContext ctx{5, &sc, &d.test_ref, states, 0.0};
  const Eigen::VectorXd o = local_observation(ctx, 1, d.stats);
  CHECK(o.size() == kObsSize);
  CHECK(o[kSinHour] * o[kSinHour] + o[kCosHour] * o[kCosHour] == doctest::Approx(1.0));
  CHECK(o[kTIn] == doctest::Approx((states[1].t_c - d.stats.mean[1][1]) / d.stats.scale[1][1]));

  // y_{k-1} of the district is not part of the local observation.
  StepContext other = ctx;
  other.district_load_prev = kNaN;
  CHECK(local_observation(other, 1, d.stats) == o);

  states[1].soc = kNaN;
  CHECK(test::code_of([&] { (void)local_observation(ctx, 1, d.stats); }) == ErrorCode::NonFiniteObservation);
  CHECK(global_state(StepContext{5, &sc, &d.test_ref, sc.initial_states, 0.0}, d.stats).size() == global_state_size(3));
}

TEST_CASE("statistics fall back to a unit scale for constant features") {
  SmallDistrict d;
  for (std::size_t i = 0; i < d.stats.num_buildings(); ++i) {
    for (int f = 0; f < ObservationStats::kFeatures; ++f) CHECK(d.stats.scale[i][static_cast<std::size_t>(f)] > 0.0);
    // The flat reference has zero spread, so its scale is max(1, 0.1 |mean|).
    CHECK(d.stats.scale[i][3] == doctest::Approx(std::max(1.0, 0.1 * std::abs(d.stats.mean[i][3]))));
  }
  const auto back = ObservationStats::from_flat(d.stats.flat_mean(), d.stats.flat_scale());
  CHECK(back.mean == d.stats.mean);
  CHECK(back.scale == d.stats.scale);
}

TEST_CASE("action mapping covers the actuator ranges") {
  BuildingParams p;
  p.p_min_kw = -3.0;
  p.p_max_kw = 5.0;
  CHECK(to_action(-1.0, -1.0, p).u == 0.0);
  CHECK(to_action(-1.0, -1.0, p).p_batt_kw == -3.0);
  CHECK(to_action(1.0, 1.0, p).u == 1.0);
  CHECK(to_action(1.0, 1.0, p).p_batt_kw == 5.0);
  CHECK(to_action(0.0, 0.0, p).u == 0.5);
  CHECK(to_action(0.0, 0.0, p).p_batt_kw == 1.0);
  CHECK(to_action(3.0, -7.0, p).u == 1.0);
}

TEST_CASE("environment rewards match a scored run_episode trace") {
  SmallDistrict d;
  const auto& sc = d.tt.train;
  RbcController rbc;
  const auto trace = run_episode(sc, rbc, d.ref, 0);
  const RewardConfig cfg = with_default_delta({}, d.ref);
  const CurveRow scored = score_trace(trace, bands_of(sc), cfg);

  DistrictEnv env(sc, d.ref, {});
  env.reset(0, sc.num_steps(), sc.initial_states);
  RbcController rbc2;
  rbc2.reset(sc, 0);
  double total = 0.0;
  for (std::size_t k = 0; k < sc.num_steps(); ++k) {
    const StepContext ctx = env.context();
    total += env.step(rbc2.act(ctx)).reward;
  }
  CHECK(env.done());
  CHECK(total / static_cast<double>(sc.num_steps()) == doctest::Approx(scored.mean_reward).epsilon(1e-12));
  CHECK(env.reward_config().delta_kwh == doctest::Approx(cfg.delta_kwh));
}

TEST_CASE("random episodes start on day boundaries and leave a bootstrap step") {
  SmallDistrict d;
  DistrictEnv env(d.tt.train, d.ref, {});
  std::mt19937_64 rng(3);
  std::vector<int> starts(4, 0);
  for (int t = 0; t < 200; ++t) {
    env.reset_random(24, rng, 1.0);
    REQUIRE(env.k() % 24 == 0);
    REQUIRE(env.k() + 24 < d.tt.train.num_steps());
    ++starts[env.k() / 24];
    for (const auto& s : env.states()) {
      CHECK(s.t_c >= 19.0 - 1e-9);
      CHECK(s.t_c <= 25.0 + 1e-9);
    }
  }
  CHECK(starts[3] == 0);
  CHECK(starts[0] > 0);
  CHECK(starts[2] > 0);
  CHECK(test::code_of([&] { env.reset_random(96, rng); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("rollout advantages and first-minibatch ratios") {
  RlConfig cfg = small_rl();
  std::mt19937_64 rng(12);
  MappoLearner learner(2, cfg, rng);
  RolloutBuffer roll(2);
  CHECK(test::code_of([&] { (void)ppo_update(learner, roll, cfg, rng); }) == ErrorCode::EmptyRollout);

  std::normal_distribution<double> g;
  for (int seg = 0; seg < 2; ++seg) {
    for (int t = 0; t < 10; ++t) {
      Eigen::MatrixXd o(kObsSize, 2), a(kActSize, 2);
      Eigen::VectorXd lp(2);
      for (Eigen::Index c = 0; c < 2; ++c) {
        for (int r = 0; r < kObsSize; ++r) o(r, c) = g(rng);
        const auto s = learner.actors[static_cast<std::size_t>(c)].sample(o.col(c), rng);
        a.col(c) = s.action;
        lp[c] = s.log_prob;
        CHECK(s.log_prob == doctest::Approx(learner.actors[static_cast<std::size_t>(c)].log_prob(o.col(c), s.action)));
      }
      Eigen::VectorXd s = Eigen::VectorXd::Random(global_state_size(2));
      roll.add(o, s, a, lp, g(rng), learner.critic.predict(s)[0]);
    }
    roll.finish_segment(0.3, cfg.gamma, cfg.lambda);
  }
  REQUIRE(roll.advantages.size() == 20);
  // Segments are independent: the second starts its own recursion.
  std::vector<double> r(roll.rewards.begin() + 10, roll.rewards.end());
  std::vector<double> v(roll.values.begin() + 10, roll.values.end());
  v.push_back(0.3);
  const auto ref = test::gae_double_sum(r, v, cfg.gamma, cfg.lambda);
  for (std::size_t j = 0; j < 10; ++j) {
    CHECK(roll.advantages[10 + j] == doctest::Approx(ref[j]).epsilon(1e-12));
    CHECK(roll.returns[10 + j] == doctest::Approx(ref[j] + roll.values[10 + j]).epsilon(1e-12));
  }

  const auto losses = ppo_update(learner, roll, cfg, rng);
  CHECK(losses.first_max_ratio_error <= 1e-12);
  CHECK(losses.first_mean_advantage == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(losses.first_surrogate == doctest::Approx(losses.first_mean_advantage).epsilon(1e-10));
  CHECK(losses.minibatches == cfg.ppo_epochs * 1);  // ceil(48 / 2) = 24 >= 20 steps
  CHECK(std::isfinite(losses.value));
}

TEST_CASE("mappo execution ignores the global state and the critic") {
  SmallDistrict d;
  RlConfig cfg = small_rl();
  std::mt19937_64 rng(13);
  MappoLearner learner(3, cfg, rng);
  MappoPolicies pols{learner.actors, d.stats};

  const auto& sc = d.tt.test;
  std::vector<BuildingState> states = sc.initial_states;
  StepContext ctx{7, &sc, &d.test_ref, states, 41.0};
  const Action before = pols.act(ctx, 0);

  learner.critic.params().setConstant(kNaN);
  std::vector<BuildingState> poisoned = states;
  for (std::size_t i = 1; i < poisoned.size(); ++i) poisoned[i] = {kNaN, kNaN, kNaN};
  StepContext bad{7, &sc, &d.test_ref, poisoned, kNaN};
  CHECK(test::code_of([&] { (void)global_state(bad, d.stats); }) == ErrorCode::NonFiniteObservation);
  const Action after = pols.act(bad, 0);
  CHECK(after.u == before.u);
  CHECK(after.p_batt_kw == before.p_batt_kw);
}

TEST_CASE("sac training produces a curve per episode and frozen deterministic policies") {
  SmallDistrict d;
  SacTrainConfig cfg;
  cfg.rl = small_rl();
  cfg.episodes = 6;
  const auto res = train_sac(d.tt.train, d.ref, d.stats, cfg, 3);
  CHECK(res.curve.size() == 6);
  for (std::size_t e = 0; e < res.curve.size(); ++e) {
    CHECK(res.curve[e].episode == static_cast<int>(e));
    CHECK(res.curve[e].mean_reward <= 0.0);
  }
  const auto again = train_sac(d.tt.train, d.ref, d.stats, cfg, 3);
  CHECK(again.policies.actors[2].net().params() == res.policies.actors[2].net().params());

  SacController c1(res.policies), c2(res.policies);
  const auto t1 = run_episode(d.tt.test, c1, d.test_ref, 0);
  const auto t2 = run_episode(d.tt.test, c1, d.test_ref, 5);
  const auto t3 = run_episode(d.tt.test, c2, d.test_ref, 0);
  CHECK(same_traces(t1, t2));
  CHECK(same_traces(t1, t3));

  const auto path = std::filesystem::temp_directory_path() / "dflex_test_sac.ckpt";
  nn::write_checkpoint(res.policies.to_checkpoint(), path);
  SacController c4(SacPolicies::from_checkpoint(nn::read_checkpoint(path)));
  CHECK(same_traces(t1, run_episode(d.tt.test, c4, d.test_ref, 0)));
  std::filesystem::remove(path);

  nn::Checkpoint partial = res.policies.to_checkpoint();
  partial.nets.pop_back();
  CHECK(test::code_of([&] { (void)SacPolicies::from_checkpoint(partial); }) == ErrorCode::MissingArtifact);
}

TEST_CASE("mappo training produces a curve per episode and restores from a checkpoint") {
  SmallDistrict d;
  MappoTrainConfig cfg;
  cfg.rl = small_rl();
  cfg.iterations = 3;
  cfg.episodes_per_iteration = 2;
  const auto res = train_mappo(d.tt.train, d.ref, d.stats, cfg, 4);
  CHECK(res.curve.size() == 6);
  CHECK(res.curve.back().episode == 5);
  CHECK(res.critic.input_size() == global_state_size(3));

  MappoController c1(res.policies);
  const auto t1 = run_episode(d.tt.test, c1, d.test_ref, 0);
  CHECK(same_traces(t1, run_episode(d.tt.test, c1, d.test_ref, 1)));

  const auto path = std::filesystem::temp_directory_path() / "dflex_test_mappo.ckpt";
  nn::write_checkpoint(res.policies.to_checkpoint(), path);
  MappoController c2(MappoPolicies::from_checkpoint(nn::read_checkpoint(path)));
  CHECK(same_traces(t1, run_episode(d.tt.test, c2, d.test_ref, 0)));
  std::filesystem::remove(path);
}

TEST_CASE("training curve csv") {
  const std::vector<CurveRow> curve{{0, -2.5, 1.5, 0.1}, {1, -1.0, 1.0, 0.0}};
  const auto path = std::filesystem::temp_directory_path() / "dflex_test_curve.csv";
  write_training_curve(curve, path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "episode,mean_reward,tracking_term,comfort_term");
  CHECK(row.rfind("0,-2.5,1.5,0.1", 0) == 0);
  std::filesystem::remove(path);
}

TEST_CASE("random controller stays inside the action box") {
  SmallDistrict d;
  RandomController rnd;
  const auto t1 = run_episode(d.tt.test, rnd, d.test_ref, 2);
  const auto t2 = run_episode(d.tt.test, rnd, d.test_ref, 2);
  CHECK(same_traces(t1, t2));
  for (std::size_t k = 0; k < t1.num_steps; ++k) {
    for (std::size_t i = 0; i < t1.num_buildings; ++i) {
      CHECK(t1.action(k, i).u >= 0.0);
      CHECK(t1.action(k, i).u <= 1.0);
    }
  }
}
