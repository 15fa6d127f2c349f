#include "dflex/sim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "dflex/calendar.hpp"
#include "dflex/error.hpp"

namespace dflex {

namespace {

void require_finite(double value, const char* field) {
  if (!std::isfinite(value)) fail(ErrorCode::NonFiniteInput, std::string("non-finite ") + field);
}

void require(bool ok, const char* field, const std::string& rule) {
  if (!ok) fail(ErrorCode::InvalidParams, std::string(field) + ": " + rule);
}

}  // namespace

void validate(const BuildingParams& p) {
  for (auto [value, name] : {std::pair{p.a, "a"}, {p.b, "b"}, {p.c, "c"}, {p.d, "d"},
                             {p.p_hvac_kw, "p_hvac"}, {p.e_cap_kwh, "e_cap"},
                             {p.p_min_kw, "p_min"}, {p.p_max_kw, "p_max"},
                             {p.soc_min, "soc_min"}, {p.soc_max, "soc_max"},
                             {p.t_min_c, "t_min"}, {p.t_max_c, "t_max"},
                             {p.round_trip_efficiency, "round_trip_efficiency"}}) {
    require(std::isfinite(value), name, "must be finite");
  }
  require(p.a > 0.0 && p.a < 1.0, "a", "must lie in (0, 1)");
  require(p.e_cap_kwh > 0.0, "e_cap", "must be positive");
  require(p.p_min_kw < 0.0 && p.p_max_kw > 0.0, "p_min/p_max", "need p_min < 0 < p_max");
  require(p.soc_min >= 0.0 && p.soc_min < p.soc_max && p.soc_max <= 1.0, "soc_min/soc_max",
          "need 0 <= soc_min < soc_max <= 1");
  require(p.t_min_c < p.t_max_c, "t_min/t_max", "need t_min < t_max");
  require(p.p_hvac_kw > 0.0, "p_hvac", "must be positive");
  require(p.round_trip_efficiency > 0.0 && p.round_trip_efficiency <= 1.0,
          "round_trip_efficiency", "must lie in (0, 1]");
}

StepResult step_building(const BuildingState& state, const BuildingParams& params,
                         const Action& action, const Disturbance& dist, double dt_h) {
  require_finite(state.t_c, "state.T");
  require_finite(state.soc, "state.soc");
  require_finite(action.u, "action.u");
  require_finite(action.p_batt_kw, "action.p_batt");
  require_finite(dist.t_out_c, "dist.T_out");
  require_finite(dist.base_load_kwh, "dist.base_load");
  require_finite(dist.pv_kwh, "dist.pv");
  require_finite(dt_h, "dt");
  validate(params);
  if (dt_h <= 0.0) fail(ErrorCode::InvalidParams, "dt must be positive");

  const double u = std::clamp(action.u, 0.0, 1.0);

  // Efficiency is split evenly between charge and discharge.
  const double eta = std::sqrt(params.round_trip_efficiency);
  const double soc = std::clamp(state.soc, params.soc_min, params.soc_max);
  double p = std::clamp(action.p_batt_kw, params.p_min_kw, params.p_max_kw);
  const double charge_headroom = (params.soc_max - soc) * params.e_cap_kwh / (eta * dt_h);
  const double discharge_headroom = (soc - params.soc_min) * params.e_cap_kwh * eta / dt_h;
  p = std::clamp(p, -discharge_headroom, charge_headroom);

  const double stored = p >= 0.0 ? eta * p * dt_h : p * dt_h / eta;
  const double soc_next =
      std::clamp(soc + stored / params.e_cap_kwh, params.soc_min, params.soc_max);

  StepResult out;
  out.applied = {u, p};
  out.state.t_c = params.a * state.t_c + params.b * dist.t_out_c +
                  params.c * params.p_hvac_kw * u + params.d;
  out.state.soc = soc_next;
  out.state.y_kwh =
      dist.base_load_kwh - dist.pv_kwh + params.p_hvac_kw * u * dt_h + p * dt_h;
  return out;
}

double aggregate_load(std::span<const double> building_loads) {
  if (building_loads.empty()) fail(ErrorCode::EmptyDistrict, "no building loads");
  double total = 0.0;
  for (double y : building_loads) {
    require_finite(y, "building load");
    total += y;
  }
  return total;
}

double comfort_violation(double t_c, double t_min_c, double t_max_c) {
  if (!(t_min_c < t_max_c)) fail(ErrorCode::InvalidBand, "t_min must be below t_max");
  return std::max(0.0, t_c - t_max_c) + std::max(0.0, t_min_c - t_c);
}

std::vector<Action> NullController::act(const StepContext& ctx) {
  return std::vector<Action>(ctx.states.size());
}

DistrictTrace run_episode(const Scenario& scenario, Controller& controller,
                          const ReferenceSignal& reference, std::uint64_t seed) {
  const std::size_t steps = scenario.num_steps();
  if (steps == 0 || steps != reference.size()) {
    fail(ErrorCode::LengthMismatch, "scenario has " + std::to_string(steps) +
                                        " steps, reference has " +
                                        std::to_string(reference.size()));
  }
  validate(scenario);
  const std::size_t n = scenario.num_buildings();
  const double dt = scenario.calendar.dt_h;

  DistrictTrace trace;
  trace.dt_h = dt;
  trace.num_buildings = n;
  trace.num_steps = steps;
  trace.calendar_start = scenario.calendar.start;
  trace.initial = scenario.initial_states;
  trace.states.reserve(steps * n);
  trace.actions.reserve(steps * n);
  trace.disturbances.reserve(steps * n);
  trace.district_load.reserve(steps);
  trace.reference = reference.r;

  controller.reset(scenario, seed);

  std::vector<BuildingState> current = scenario.initial_states;
  std::vector<double> loads(n);
  double y_prev = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    StepContext ctx{k, &scenario, &reference, current, y_prev};
    std::vector<Action> actions;
    try {
      actions = controller.act(ctx);
      if (actions.size() != n) {
        fail(ErrorCode::ControllerError, "controller returned " +
                                             std::to_string(actions.size()) + " actions for " +
                                             std::to_string(n) + " buildings");
      }
      for (std::size_t i = 0; i < n; ++i) {
        const Disturbance& dist = scenario.disturbances[i][k];
        StepResult res = step_building(current[i], scenario.buildings[i], actions[i], dist, dt);
        current[i] = res.state;
        loads[i] = res.state.y_kwh;
        trace.states.push_back(res.state);
        trace.actions.push_back(res.applied);
        trace.disturbances.push_back(dist);
      }
    } catch (const Error& e) {
      throw Error(e.code(), "step " + std::to_string(k) + " (" + controller.name() +
                                "): " + e.detail());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ControllerError,
                  "step " + std::to_string(k) + " (" + controller.name() + "): " + e.what());
    }
    y_prev = aggregate_load(loads);
    trace.district_load.push_back(y_prev);
    for (auto& line : controller.take_events()) trace.events.push_back(std::move(line));
  }
  return trace;
}

// --- types.hpp helpers ---

BuildingState default_initial_state(const BuildingParams& params) {
  BuildingState s;
  s.t_c = 0.5 * (params.t_min_c + params.t_max_c);
  s.soc = 0.5 * (params.soc_min + params.soc_max);
  s.y_kwh = 0.0;
  return s;
}

void validate(const Scenario& scenario) {
  if (scenario.buildings.empty()) fail(ErrorCode::EmptyDistrict, "scenario has no buildings");
  if (scenario.disturbances.size() != scenario.buildings.size()) {
    fail(ErrorCode::RaggedSeries, "disturbance series count does not match roster");
  }
  if (scenario.initial_states.size() != scenario.buildings.size()) {
    fail(ErrorCode::LengthMismatch, "initial state count does not match roster");
  }
  const std::size_t steps = scenario.num_steps();
  for (std::size_t i = 0; i < scenario.buildings.size(); ++i) {
    validate(scenario.buildings[i]);
    if (scenario.disturbances[i].size() != steps) {
      fail(ErrorCode::RaggedSeries, "building " + std::to_string(scenario.buildings[i].id) +
                                        " has " + std::to_string(scenario.disturbances[i].size()) +
                                        " steps, expected " + std::to_string(steps));
    }
  }
  if (!(scenario.calendar.dt_h > 0.0)) fail(ErrorCode::InvalidParams, "dt must be positive");
}

Scenario Scenario::window(std::size_t start, std::size_t length) const {
  if (start + length > num_steps()) {
    fail(ErrorCode::LengthMismatch, "window exceeds scenario length");
  }
  Scenario out;
  out.buildings = buildings;
  out.initial_states = initial_states;
  out.label = label;
  out.calendar = calendar;
  out.calendar.start = add_hours(calendar.start, static_cast<double>(start) * calendar.dt_h);
  out.disturbances.reserve(disturbances.size());
  for (const auto& series : disturbances) {
    out.disturbances.emplace_back(series.begin() + static_cast<std::ptrdiff_t>(start),
                                  series.begin() + static_cast<std::ptrdiff_t>(start + length));
  }
  return out;
}

std::vector<double> DistrictTrace::building_load(std::size_t i) const {
  std::vector<double> out(num_steps);
  for (std::size_t k = 0; k < num_steps; ++k) out[k] = state(k, i).y_kwh;
  return out;
}

double DistrictTrace::battery_total_kw(std::size_t k) const {
  double total = 0.0;
  for (std::size_t i = 0; i < num_buildings; ++i) total += action(k, i).p_batt_kw;
  return total;
}

}  // namespace dflex
