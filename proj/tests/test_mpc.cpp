#include <doctest.h>

#include <cmath>
#include <random>

#include "dflex/error.hpp"
#include "dflex/mpc.hpp"
#include "dflex/scenario.hpp"
#include "mpc_cases.hpp"
#include "test_util.hpp"

using namespace dflex;

namespace {

struct OneBuilding {
  std::vector<BuildingState> states{{22.0, 0.5, 0.0}};
  std::vector<BuildingParams> params{BuildingParams{}};
  std::vector<ThermalFit> fits;

  OneBuilding() {
    auto& p = params[0];
    p.a = 0.9;
    p.b = 0.1;
    p.c = 0.2;
    p.d = 0.3;
    p.p_hvac_kw = 5.0;
    ThermalFit f;
    f.a = p.a;
    f.b = p.b;
    f.c = p.c;
    f.d = p.d;
    fits.push_back(f);
  }

  MpcInputs inputs(int h, double t_out, double base, double pv, double r) const {
    MpcInputs in;
    in.states = states;
    in.params = params;
    in.fits = fits;
    in.forecast.assign(1, std::vector<Disturbance>(static_cast<std::size_t>(h), {t_out, base, pv, 12}));
    in.reference.assign(static_cast<std::size_t>(h), r);
    return in;
  }
};

MpcDecision solve(const MpcInputs& in, const MpcConfig& cfg) {
  const auto prob = assemble_mpc_qp(in, cfg);
  const auto sol = qp::solve_qp(prob, cfg.solver);
  REQUIRE(sol.status == qp::Status::Solved);
  return decode_mpc_solution(sol, in, cfg);
}

}  // namespace

TEST_CASE("decision vector shape") {
  const MpcLayout lay{25, 12};
  CHECK(lay.num_variables() == 25 * 12 * 4 + 12);
  CHECK(lay.num_constraints() == 25 * 12 * 7 + 12);
  CHECK(lay.y(0) == 1200);
  CHECK(lay.s_hi(11, 24) == 1199);

  const auto sc = generate_synthetic_scenario(3, 1, 2);
  MpcInputs in;
  const auto fits = test::exact_fits(sc);
  in.states = sc.initial_states;
  in.params = sc.buildings;
  in.fits = fits;
  MpcConfig cfg;
  fill_forecast(in, sc, build_reference(compute_baseline(sc)), 0, cfg.horizon);
  const auto prob = assemble_mpc_qp(in, cfg);
  CHECK(prob.num_variables() == 3 * 12 * 4 + 12);
  CHECK(prob.num_constraints() == 3 * 12 * 7 + 12);
  CHECK_NOTHROW(qp::validate(prob));
}

TEST_CASE("single-step tracking is met exactly") {
  OneBuilding b;
  MpcConfig cfg;
  cfg.horizon = 1;
  cfg.w_comfort = cfg.w_slack = cfg.w_ctrl = 0.0;
  cfg.w_track = 1.0;
  const auto in = b.inputs(1, 5.0, 2.0, 0.5, 3.2);
  const auto d = solve(in, cfg);
  CHECK(d.y[0] == doctest::Approx(3.2).epsilon(1e-6));
  const double load = 2.0 - 0.5 + 5.0 * d.actions[0][0].u + d.actions[0][0].p_batt_kw;
  CHECK(load == doctest::Approx(3.2).epsilon(1e-5));

  // A control penalty removes the ambiguity: the battery alone closes the gap.
  cfg.w_ctrl = 0.01;
  const auto e = solve(in, cfg);
  CHECK(e.actions[0][0].u == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(e.actions[0][0].p_batt_kw == doctest::Approx(3.2 - (2.0 - 0.5)).epsilon(1e-5));
}

TEST_CASE("unreachable band uses the lower slack instead of failing") {
  OneBuilding b;
  b.states[0].t_c = 5.0;
  MpcConfig cfg;
  cfg.horizon = 4;
  const auto d = solve(b.inputs(4, -20.0, 1.0, 0.0, 2.0), cfg);
  CHECK(d.status == qp::Status::Solved);
  CHECK(d.s_lo[0][0] > 1.0);
  CHECK(d.actions[0][0].u == doctest::Approx(1.0).epsilon(1e-4));
  for (int j = 0; j < 4; ++j) {
    CHECK(d.s_hi[static_cast<std::size_t>(j)][0] >= -1e-9);
    CHECK(d.s_lo[static_cast<std::size_t>(j)][0] ==
          doctest::Approx(20.0 - d.t_pred[static_cast<std::size_t>(j)][0]).epsilon(1e-4));
  }
}

TEST_CASE("dominant comfort penalty leaves slacks unused when the band is reachable") {
  OneBuilding b;
  b.states[0] = {20.5, 0.1, 0.0};  // empty battery: only HVAC moves the load
  MpcConfig cfg;
  cfg.horizon = 6;
  cfg.w_comfort = 1e4;
  // The reference leaves no room for the heating the band needs.
  const auto d = solve(b.inputs(6, 10.0, 1.0, 0.0, 1.0), cfg);
  CHECK(d.actions[0][0].u > 0.2);
  for (int j = 0; j < 6; ++j) {
    CHECK(std::abs(d.s_lo[static_cast<std::size_t>(j)][0]) <= 1e-6);
    CHECK(d.t_pred[static_cast<std::size_t>(j)][0] >= 20.0 - 1e-4);
  }
}

TEST_CASE("assembly errors") {
  OneBuilding b;
  MpcConfig cfg;
  auto in = b.inputs(5, 0.0, 1.0, 0.0, 1.0);
  CHECK(test::code_of([&] { assemble_mpc_qp(in, cfg); }) == ErrorCode::ForecastTooShort);
  in = b.inputs(12, 0.0, 1.0, 0.0, 1.0);
  in.reference.resize(3);
  CHECK(test::code_of([&] { assemble_mpc_qp(in, cfg); }) == ErrorCode::ForecastTooShort);
  in = b.inputs(12, 0.0, 1.0, 0.0, 1.0);
  in.fits = {};
  CHECK(test::code_of([&] { assemble_mpc_qp(in, cfg); }) == ErrorCode::RosterMismatch);
  cfg.horizon = 0;
  CHECK(test::code_of([&] { validate(cfg); }) == ErrorCode::InvalidParams);
  cfg = MpcConfig{};
  cfg.w_slack = -1.0;
  CHECK(test::code_of([&] { validate(cfg); }) == ErrorCode::InvalidParams);
}

TEST_CASE("forecast window holds the last value past the end") {
  const auto sc = generate_synthetic_scenario(2, 1, 3);
  const auto ref = build_reference(compute_baseline(sc));
  MpcInputs in;
  fill_forecast(in, sc, ref, 20, 12);
  REQUIRE(in.forecast[1].size() == 12);
  CHECK(in.forecast[1][3].t_out_c == sc.disturbances[1][23].t_out_c);
  CHECK(in.forecast[1][11].base_load_kwh == sc.disturbances[1][23].base_load_kwh);
  CHECK(in.forecast[0][0].pv_kwh == sc.disturbances[0][20].pv_kwh);
  CHECK(in.reference.size() == 12);
}

TEST_CASE("slacks are nonnegative and the auxiliary load matches the load model") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> temp(16.0, 26.0);
  std::uniform_real_distribution<double> soc(0.1, 0.9);
  std::uniform_real_distribution<double> scale(0.6, 1.4);
  for (int trial = 0; trial < 12; ++trial) {
    auto sc = generate_synthetic_scenario(3, 2, 100 + static_cast<std::uint64_t>(trial));
    const auto fits = test::exact_fits(sc);
    const auto base_ref = build_reference(compute_baseline(sc));
    std::vector<BuildingState> states;
    for (std::size_t i = 0; i < 3; ++i) states.push_back({temp(rng), soc(rng), 0.0});
    MpcInputs in;
    in.states = states;
    in.params = sc.buildings;
    in.fits = fits;
    ReferenceSignal ref{std::vector<double>(base_ref.r.size(), base_ref.r[0] * scale(rng))};
    MpcConfig cfg;
    fill_forecast(in, sc, ref, static_cast<std::size_t>(trial * 3), cfg.horizon);
    const auto d = solve(in, cfg);
    for (int j = 0; j < cfg.horizon; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      CHECK(std::abs(d.y[ju] - d.y_reconstructed[ju]) <= 1e-6);
      for (std::size_t i = 0; i < 3; ++i) {
        CHECK(d.s_lo[ju][i] >= -1e-9);
        CHECK(d.s_hi[ju][i] >= -1e-9);
        CHECK(d.soc_pred[ju][i] >= sc.buildings[i].soc_min - 1e-6);
        CHECK(d.soc_pred[ju][i] <= sc.buildings[i].soc_max + 1e-6);
      }
    }
  }
}

TEST_CASE("open-loop plan and closed loop coincide under constant disturbances") {
  // Mild weather: the building drifts toward 23 C without heating, and the
  // reference sits one battery kW above the uncontrolled load.
  Scenario sc;
  sc.buildings.push_back(BuildingParams{});
  auto& p = sc.buildings[0];
  p.a = 0.9;
  p.b = 0.1;
  p.c = 0.05;
  p.d = 2.3 - 0.1 * 0.0 + 0.0;  // equilibrium (b*T_out + d)/(1-a) = 23 C at T_out = 0
  p.e_cap_kwh = 40.0;
  const std::size_t k_steps = 10;
  sc.disturbances.assign(1, std::vector<Disturbance>(k_steps, {0.0, 2.0, 0.5, 10}));
  sc.initial_states = {{21.0, 0.3, 0.0}};
  const ReferenceSignal ref{std::vector<double>(k_steps, 2.5)};

  MpcConfig cfg;
  cfg.horizon = 10;
  MpcController mpc(test::exact_fits(sc), cfg);
  mpc.reset(sc, 0);
  const MpcDecision* plan = nullptr;
  MpcDecision first;
  std::vector<BuildingState> states = sc.initial_states;
  for (std::size_t k = 0; k < 6; ++k) {
    StepContext ctx;
    ctx.k = k;
    ctx.scenario = &sc;
    ctx.reference = &ref;
    ctx.states = states;
    const auto act = mpc.act(ctx);
    if (k == 0) {
      first = *mpc.last_decision();
      plan = &first;
    }
    const auto res = step_building(states[0], p, act[0], sc.disturbances[0][k], 1.0);
    CHECK(act[0].u == doctest::Approx(plan->actions[k][0].u).epsilon(1e-3).scale(1.0));
    CHECK(act[0].p_batt_kw == doctest::Approx(plan->actions[k][0].p_batt_kw).epsilon(1e-3).scale(1.0));
    CHECK(res.state.t_c == doctest::Approx(plan->t_pred[k][0]).epsilon(1e-3).scale(1.0));
    CHECK(res.state.soc == doctest::Approx(plan->soc_pred[k][0]).epsilon(1e-3).scale(1.0));
    states[0] = res.state;
  }
  CHECK(first.actions[0][0].p_batt_kw == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(mpc.fallback_count() == 0);
}

TEST_CASE("reused solver matches a fresh solve every step") {
  const auto sc = generate_synthetic_scenario(2, 1, 6);
  const auto ref = build_reference(compute_baseline(sc));
  const auto fits = test::exact_fits(sc);
  MpcConfig cfg;
  MpcController mpc(fits, cfg);
  mpc.reset(sc, 0);
  std::vector<BuildingState> states = sc.initial_states;
  for (std::size_t k = 0; k < 10; ++k) {
    StepContext ctx;
    ctx.k = k;
    ctx.scenario = &sc;
    ctx.reference = &ref;
    ctx.states = states;
    const auto act = mpc.act(ctx);

    MpcInputs in;
    in.states = states;
    in.params = sc.buildings;
    in.fits = fits;
    fill_forecast(in, sc, ref, k, cfg.horizon);
    const auto fresh = solve(in, cfg);
    const auto sol_obj = [&](const MpcDecision& d) {
      double s = 0.0;
      for (double v : d.tracking_residual) s += v * v;
      return s;
    };
    CHECK(sol_obj(*mpc.last_decision()) == doctest::Approx(sol_obj(fresh)).epsilon(1e-3).scale(1.0));
    for (std::size_t i = 0; i < 2; ++i) {
      states[i] = step_building(states[i], sc.buildings[i], act[i], sc.disturbances[i][k], 1.0).state;
    }
  }
}

TEST_CASE("one-building day: tight tracking without slack") {
  const auto out = test::mpc_sanity_run();
  CHECK(std::abs(out.mpc_nmbe) <= 1.0);
  CHECK(out.max_slack <= 1e-6);
  CHECK(out.fallbacks == 0);
  CHECK(out.max_violation_k <= 1e-3);
  // The grid search confirms the reference is reachable.
  CHECK(std::abs(out.oracle_nmbe) <= 1.0);
}

TEST_CASE("iteration limit falls back to the rule-based action") {
  const auto sc = generate_synthetic_scenario(2, 1, 8);
  const auto ref = build_reference(compute_baseline(sc));
  MpcConfig cfg;
  cfg.solver.max_iter = 1;
  MpcController mpc(test::exact_fits(sc), cfg);
  RbcController rbc(cfg.fallback);
  const auto a = run_episode(sc, mpc, ref, 0);
  const auto b = run_episode(sc, rbc, ref, 0);
  CHECK(mpc.fallback_count() == 24);
  CHECK(a.events.size() == 24);
  CHECK(a.events[0].find("MaxIter") != std::string::npos);
  for (std::size_t j = 0; j < a.actions.size(); ++j) {
    CHECK(a.actions[j].u == b.actions[j].u);
    CHECK(a.actions[j].p_batt_kw == b.actions[j].p_batt_kw);
  }
}

TEST_CASE("controller checks the roster and is deterministic") {
  const auto sc = generate_synthetic_scenario(2, 1, 9);
  const auto ref = build_reference(compute_baseline(sc));
  auto fits = test::exact_fits(sc);
  MpcController a(fits);
  MpcController b(fits);
  const auto ta = run_episode(sc, a, ref, 0);
  const auto tb = run_episode(sc, b, ref, 0);
  CHECK(ta.district_load == tb.district_load);
  fits.pop_back();
  MpcController bad(fits);
  CHECK(test::code_of([&] { run_episode(sc, bad, ref, 0); }) == ErrorCode::RosterMismatch);
}
