#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dflex/mpc.hpp"
#include "dflex/qp.hpp"
#include "dflex/sac.hpp"
#include "dflex/sim.hpp"

namespace dflex {

/// Decision vector of the battery-only program: p for step j and building i
/// at j*N + i, then the district loads y_0..y_{H-1}.
/// Rows: power boxes, then stored-energy windows (both j*N + i), then coupling.
struct BatteryLayout {
  int n = 0;
  int h = 0;

  [[nodiscard]] int p(int j, int i) const { return j * n + i; }
  [[nodiscard]] int y(int j) const { return n * h + j; }
  [[nodiscard]] int num_variables() const { return n * h + h; }
  [[nodiscard]] int box_row(int j, int i) const { return j * n + i; }
  [[nodiscard]] int soc_row(int j, int i) const { return n * h + j * n + i; }
  [[nodiscard]] int coupling_row(int j) const { return 2 * n * h + j; }
  [[nodiscard]] int num_constraints() const { return 2 * n * h + h; }
};

struct BatteryQpInputs {
  std::span<const BuildingState> states;
  std::span<const BuildingParams> params;
  std::vector<double> hvac;                        // u_i, held over the horizon
  std::vector<std::vector<Disturbance>> forecast;  // [building][j], at least H entries
  std::vector<double> reference;                   // at least H entries
  double dt_h = 1.0;
};

/// minimize w_track * sum_j (y_j - r_j)^2 + w_ctrl * sum p^2 over the battery
/// powers, with the HVAC load fixed. Uses horizon, w_track, w_ctrl and solver
/// from `cfg`. Throws RosterMismatch, ForecastTooShort or InvalidParams.
qp::QuadraticProgram assemble_battery_qp(const BatteryQpInputs& in, const MpcConfig& cfg);

struct BatteryPlan {
  std::vector<std::vector<double>> p;  // [j][i], clipped to the power box
  std::vector<double> y;
  qp::Status status = qp::Status::MaxIter;
  int iterations = 0;
};

BatteryPlan decode_battery_solution(const qp::QpSolution& sol, const BatteryQpInputs& in, const MpcConfig& cfg);

/// Frozen SAC actors choose HVAC from local observations; a centralized
/// battery program then dispatches every battery against the reference.
/// The SAC battery outputs are discarded. When the program is not solved the
/// batteries idle for that step and an event is recorded.
class HybridController final : public Controller {
 public:
  HybridController(SacPolicies policies, MpcConfig cfg = {});
  [[nodiscard]] std::string name() const override { return "hybrid"; }
  void reset(const Scenario& scenario, std::uint64_t seed) override;
  std::vector<Action> act(const StepContext& ctx) override;
  std::vector<std::string> take_events() override;

  [[nodiscard]] const std::optional<BatteryPlan>& last_plan() const { return last_; }
  [[nodiscard]] int fallback_count() const { return fallbacks_; }

 private:
  SacPolicies policies_;
  MpcConfig cfg_;
  qp::AdmmSolver solver_;
  bool solver_ready_ = false;
  std::optional<qp::QpSolution> prev_;
  std::optional<BatteryPlan> last_;
  std::vector<std::string> events_;
  int fallbacks_ = 0;
};

}  // namespace dflex
