#include "dflex/rbc.hpp"

#include <algorithm>
#include <cmath>

#include "dflex/error.hpp"

namespace dflex {

namespace {

int window_length(int start, int end_exclusive) {
  return ((end_exclusive - start) % 24 + 24) % 24;
}

bool valid_hour(int h) { return h >= 0 && h <= 23; }

}  // namespace

bool in_charge_window(int hour, const RbcConfig& cfg) {
  if (cfg.charge_start_hour <= cfg.charge_end_hour) {
    return hour >= cfg.charge_start_hour && hour < cfg.charge_end_hour;
  }
  return hour >= cfg.charge_start_hour || hour < cfg.charge_end_hour;
}

bool in_discharge_window(int hour, const RbcConfig& cfg) {
  if (cfg.discharge_start_hour <= cfg.discharge_end_hour) {
    return hour >= cfg.discharge_start_hour && hour <= cfg.discharge_end_hour;
  }
  return hour >= cfg.discharge_start_hour || hour <= cfg.discharge_end_hour;
}

void validate(const RbcConfig& cfg, const BuildingParams& params) {
  if (!valid_hour(cfg.charge_start_hour) || !valid_hour(cfg.charge_end_hour) ||
      !valid_hour(cfg.discharge_start_hour) || !valid_hour(cfg.discharge_end_hour)) {
    fail(ErrorCode::InvalidParams, "rbc window hours must lie in 0..23");
  }
  for (int h = 0; h < 24; ++h) {
    if (in_charge_window(h, cfg) && in_discharge_window(h, cfg)) {
      fail(ErrorCode::InvalidParams, "rbc charge and discharge windows overlap at hour " +
                                         std::to_string(h));
    }
  }
  if (!(params.t_min_c <= cfg.hysteresis_low_c && cfg.hysteresis_low_c < cfg.hysteresis_high_c &&
        cfg.hysteresis_high_c <= params.t_max_c)) {
    fail(ErrorCode::InvalidParams, "rbc hysteresis thresholds must satisfy "
                                   "t_min <= low < high <= t_max");
  }
  for (const auto& rate : {cfg.charge_rate, cfg.discharge_rate}) {
    if (rate && !(*rate >= 0.0 && *rate <= 1.0)) {
      fail(ErrorCode::InvalidParams, "rbc rates must lie in [0, 1]");
    }
  }
}

double default_charge_rate(const BuildingParams& params, const RbcConfig& cfg, double dt_h) {
  const double hours = window_length(cfg.charge_start_hour, cfg.charge_end_hour);
  return std::min(1.0, params.e_cap_kwh / (hours * params.p_max_kw * dt_h));
}

double default_discharge_rate(const BuildingParams& params, const RbcConfig& cfg, double dt_h) {
  const double hours = window_length(cfg.discharge_start_hour, cfg.discharge_end_hour) + 1;
  return std::min(1.0, params.e_cap_kwh / (hours * std::abs(params.p_min_kw) * dt_h));
}

Action rbc_act(const BuildingState& state, const Disturbance& dist, const RbcConfig& cfg,
               const BuildingParams& params, ThermostatLatch& latch, double dt_h) {
  if (state.t_c < cfg.hysteresis_low_c) {
    latch.heating = true;
  } else if (state.t_c > cfg.hysteresis_high_c) {
    latch.heating = false;
  }

  Action action;
  action.u = latch.heating ? 1.0 : 0.0;
  if (!cfg.battery_enabled) return action;

  const int hour = dist.hour_of_day;
  if (in_charge_window(hour, cfg) && state.soc < params.soc_max) {
    const double rate = cfg.charge_rate.value_or(default_charge_rate(params, cfg, dt_h));
    action.p_batt_kw = rate * params.p_max_kw;
  } else if (in_discharge_window(hour, cfg) && state.soc > params.soc_min) {
    const double rate = cfg.discharge_rate.value_or(default_discharge_rate(params, cfg, dt_h));
    action.p_batt_kw = -rate * std::abs(params.p_min_kw);
  }
  return action;
}

void RbcController::reset(const Scenario& scenario, std::uint64_t /*seed*/) {
  for (const auto& params : scenario.buildings) validate(cfg_, params);
  latches_.assign(scenario.num_buildings(), ThermostatLatch{});
}

std::vector<Action> RbcController::act(const StepContext& ctx) {
  if (latches_.size() != ctx.states.size()) latches_.assign(ctx.states.size(), ThermostatLatch{});
  std::vector<Action> actions(ctx.states.size());
  const double dt = ctx.scenario->calendar.dt_h;
  for (std::size_t i = 0; i < ctx.states.size(); ++i) {
    actions[i] = rbc_act(ctx.states[i], ctx.disturbance(i), cfg_, ctx.params(i), latches_[i], dt);
  }
  return actions;
}

}  // namespace dflex
