#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dflex/types.hpp"

namespace dflex {

struct StepResult {
  BuildingState state;
  Action applied;
};

/// Advance one building by one step. Out-of-range commands are clamped
/// (u to [0,1]; battery to power bounds, then to SOC headroom).
StepResult step_building(const BuildingState& state, const BuildingParams& params,
                         const Action& action, const Disturbance& dist, double dt_h);

double aggregate_load(std::span<const double> building_loads);

/// Kelvin outside the band, zero inside.
double comfort_violation(double t_c, double t_min_c, double t_max_c);

/// What a controller sees at step k. Controllers are expected to read only the
/// fields their architecture is entitled to; forecasts come from `scenario`.
struct StepContext {
  std::size_t k = 0;
  const Scenario* scenario = nullptr;
  const ReferenceSignal* reference = nullptr;
  std::span<const BuildingState> states;  // states at the start of step k
  double district_load_prev = 0.0;        // y_{k-1}; 0 at k = 0

  [[nodiscard]] const Disturbance& disturbance(std::size_t i) const {
    return scenario->disturbances[i][k];
  }
  [[nodiscard]] const BuildingParams& params(std::size_t i) const {
    return scenario->buildings[i];
  }
  [[nodiscard]] double r() const { return reference->r[k]; }
};

class Controller {
 public:
  virtual ~Controller() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  /// Called once before the first step of every episode.
  virtual void reset(const Scenario& /*scenario*/, std::uint64_t /*seed*/) {}
  virtual std::vector<Action> act(const StepContext& ctx) = 0;
  /// Drains log lines (solver fallbacks and similar) recorded since the last call.
  virtual std::vector<std::string> take_events() { return {}; }
};

/// u = 0, p = 0 always.
class NullController final : public Controller {
 public:
  [[nodiscard]] std::string name() const override { return "null"; }
  std::vector<Action> act(const StepContext& ctx) override;
};

DistrictTrace run_episode(const Scenario& scenario, Controller& controller,
                          const ReferenceSignal& reference, std::uint64_t seed);

}  // namespace dflex
