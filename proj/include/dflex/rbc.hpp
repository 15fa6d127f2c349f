#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dflex/sim.hpp"

namespace dflex {

/// Time-of-use battery schedule plus hysteresis thermostat.
struct RbcConfig {
  // Charge window [charge_start, charge_end) wraps midnight.
  int charge_start_hour = 22;
  int charge_end_hour = 8;
  // Discharge window [discharge_start, discharge_end] is inclusive.
  int discharge_start_hour = 14;
  int discharge_end_hour = 21;
  // Fractions of p_max / |p_min|; unset means "sized to the window" per building.
  std::optional<double> charge_rate;
  std::optional<double> discharge_rate;
  double hysteresis_low_c = 20.5;
  double hysteresis_high_c = 22.0;
  bool battery_enabled = true;
};

/// Throws InvalidParams when windows overlap or thresholds leave the band.
void validate(const RbcConfig& cfg, const BuildingParams& params);

bool in_charge_window(int hour, const RbcConfig& cfg);
bool in_discharge_window(int hour, const RbcConfig& cfg);

/// min(1, E_cap / (10 h * p_max)): a full charge fits the 10-hour window.
double default_charge_rate(const BuildingParams& params, const RbcConfig& cfg, double dt_h);
/// min(1, E_cap / (8 h * |p_min|)).
double default_discharge_rate(const BuildingParams& params, const RbcConfig& cfg, double dt_h);

struct ThermostatLatch {
  bool heating = false;
};

/// One RBC decision. Updates the latch; otherwise stateless.
Action rbc_act(const BuildingState& state, const Disturbance& dist, const RbcConfig& cfg,
               const BuildingParams& params, ThermostatLatch& latch, double dt_h = 1.0);

class RbcController : public Controller {
 public:
  explicit RbcController(RbcConfig cfg = {}) : cfg_(std::move(cfg)) {}

  [[nodiscard]] std::string name() const override { return cfg_.battery_enabled ? "rbc" : "baseline"; }
  void reset(const Scenario& scenario, std::uint64_t seed) override;
  std::vector<Action> act(const StepContext& ctx) override;

  [[nodiscard]] const RbcConfig& config() const { return cfg_; }

 private:
  RbcConfig cfg_;
  std::vector<ThermostatLatch> latches_;
};

/// Thermostat HVAC with an idle battery; the uncontrolled reference behaviour.
inline RbcConfig baseline_config(RbcConfig cfg = {}) {
  cfg.battery_enabled = false;
  return cfg;
}

}  // namespace dflex
