#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace dflex {

/// Static physics of one building.
///
/// Indoor temperature follows the first-order model
///   T' = a*T + b*T_out + c*P_hvac*u + d
/// with u the HVAC actuation fraction. Battery power is signed: positive charges.
struct BuildingParams {
  int id = 0;
  double a = 0.95;
  double b = 0.05;
  double c = 0.05;
  double d = 0.0;
  double p_hvac_kw = 3.0;
  double e_cap_kwh = 10.0;
  double p_min_kw = -4.0;
  double p_max_kw = 4.0;
  double soc_min = 0.1;
  double soc_max = 0.9;
  double t_min_c = 20.0;
  double t_max_c = 24.0;
  double floor_area_m2 = 0.0;  // metadata only
  double round_trip_efficiency = 1.0;
};

/// Throws InvalidParams naming the offending field.
void validate(const BuildingParams& params);

struct BuildingState {
  double t_c = 22.0;   // indoor temperature
  double soc = 0.5;    // fraction of e_cap
  double y_kwh = 0.0;  // net consumption during the last step
};

struct Action {
  double u = 0.0;          // HVAC fraction in [0, 1]
  double p_batt_kw = 0.0;  // battery power, positive = charge
};

struct Disturbance {
  double t_out_c = 0.0;
  double base_load_kwh = 0.0;
  double pv_kwh = 0.0;
  int hour_of_day = 0;
};

struct Calendar {
  std::string start = "2025-01-01T00:00:00";  // ISO-8601, local time
  double dt_h = 1.0;
};

/// Disturbance series and building roster for one evaluation period.
struct Scenario {
  std::vector<BuildingParams> buildings;
  std::vector<std::vector<Disturbance>> disturbances;  // [building][step]
  std::vector<BuildingState> initial_states;           // one per building
  Calendar calendar;
  std::string label;

  [[nodiscard]] std::size_t num_buildings() const { return buildings.size(); }
  [[nodiscard]] std::size_t num_steps() const {
    return disturbances.empty() ? 0 : disturbances.front().size();
  }

  /// Copy of steps [start, start+length) with the given initial states.
  [[nodiscard]] Scenario window(std::size_t start, std::size_t length) const;
};

/// Mid-band temperature and mid-range SOC.
BuildingState default_initial_state(const BuildingParams& params);

/// Throws on ragged series, an empty roster, or invalid building parameters.
void validate(const Scenario& scenario);

struct ReferenceSignal {
  std::vector<double> r;  // target district load per step (kWh/step)

  [[nodiscard]] std::size_t size() const { return r.size(); }
};

/// Per-step record of an episode. Per-building rows are stored step-major:
/// element (k, i) lives at k*N + i.
struct DistrictTrace {
  double dt_h = 1.0;
  std::size_t num_buildings = 0;
  std::size_t num_steps = 0;
  std::string calendar_start;
  std::vector<BuildingState> initial;
  std::vector<BuildingState> states;  // state after step k
  std::vector<Action> actions;        // action as applied at step k
  std::vector<Disturbance> disturbances;
  std::vector<double> district_load;  // y_k
  std::vector<double> reference;      // r_k
  std::vector<std::string> events;

  [[nodiscard]] const BuildingState& state(std::size_t k, std::size_t i) const {
    return states[k * num_buildings + i];
  }
  [[nodiscard]] const Action& action(std::size_t k, std::size_t i) const {
    return actions[k * num_buildings + i];
  }
  [[nodiscard]] const Disturbance& disturbance(std::size_t k, std::size_t i) const {
    return disturbances[k * num_buildings + i];
  }
  [[nodiscard]] std::vector<double> building_load(std::size_t i) const;
  [[nodiscard]] double battery_total_kw(std::size_t k) const;
};

}  // namespace dflex
