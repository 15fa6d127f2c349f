#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dflex/qp.hpp"
#include "dflex/rbc.hpp"
#include "dflex/sim.hpp"
#include "dflex/sysid.hpp"

namespace dflex {

struct MpcConfig {
  int horizon = 12;
  double w_track = 0.5;
  double w_comfort = 300.0;  // linear slack penalty
  double w_slack = 50.0;     // quadratic slack penalty
  double w_ctrl = 0.01;
  qp::SolverSettings solver;
  RbcConfig fallback;  // used whenever the QP is not solved
};

/// Throws InvalidParams for H < 1, negative weights or bad solver settings.
void validate(const MpcConfig& cfg);

/// Index arithmetic for the stacked decision vector and constraint rows.
///
/// Variables are step-major: for step j and building i the block
/// [u, p, s_lo, s_hi] starts at 4*(j*N + i); the district loads y_0..y_{H-1}
/// follow at 4*N*H. Temperatures and SOC are eliminated through the dynamics.
struct MpcLayout {
  int n = 0;  // buildings
  int h = 0;  // horizon
  static constexpr int kVarsPerBlock = 4;
  static constexpr int kRowsPerBlock = 7;

  [[nodiscard]] int u(int j, int i) const { return kVarsPerBlock * (j * n + i); }
  [[nodiscard]] int p(int j, int i) const { return u(j, i) + 1; }
  [[nodiscard]] int s_lo(int j, int i) const { return u(j, i) + 2; }
  [[nodiscard]] int s_hi(int j, int i) const { return u(j, i) + 3; }
  [[nodiscard]] int y(int j) const { return kVarsPerBlock * n * h + j; }
  [[nodiscard]] int num_variables() const { return kVarsPerBlock * n * h + h; }

  // Rows per block: u box, p box, s_lo >= 0, s_hi >= 0, comfort low, comfort high, SOC.
  [[nodiscard]] int row(int j, int i, int r) const { return kRowsPerBlock * (j * n + i) + r; }
  [[nodiscard]] int coupling_row(int j) const { return kRowsPerBlock * n * h + j; }
  [[nodiscard]] int num_constraints() const { return kRowsPerBlock * n * h + h; }
};

/// Everything the QP depends on at one decision time.
struct MpcInputs {
  std::span<const BuildingState> states;
  std::span<const BuildingParams> params;
  std::span<const ThermalFit> fits;
  std::vector<std::vector<Disturbance>> forecast;  // [building][j], at least H entries
  std::vector<double> reference;                   // r_j, at least H entries
  double dt_h = 1.0;
};

/// Throws ForecastTooShort, RosterMismatch (sizes of states/params/fits differ)
/// or whatever MpcConfig validation raises.
qp::QuadraticProgram assemble_mpc_qp(const MpcInputs& in, const MpcConfig& cfg);

struct MpcDecision {
  // All indexed [j][i].
  std::vector<std::vector<Action>> actions;
  std::vector<std::vector<double>> s_lo;
  std::vector<std::vector<double>> s_hi;
  std::vector<std::vector<double>> t_pred;    // temperature after step j
  std::vector<std::vector<double>> soc_pred;  // SOC after step j
  std::vector<double> y;                      // auxiliary district load
  std::vector<double> y_reconstructed;        // from u and p through the load model
  std::vector<double> tracking_residual;      // y_j - r_j
  qp::Status status = qp::Status::MaxIter;
  int iterations = 0;
};

MpcDecision decode_mpc_solution(const qp::QpSolution& sol, const MpcInputs& in, const MpcConfig& cfg);

/// Perfect-foresight forecast window starting at step k. Past the end of the
/// scenario the last disturbance and reference value are held.
void fill_forecast(MpcInputs& in, const Scenario& scenario, const ReferenceSignal& reference,
                   std::size_t k, int horizon);

/// Receding-horizon controller. The QP matrices do not change between steps,
/// so a single solver is set up once per episode and only its vectors change.
class MpcController final : public Controller {
 public:
  MpcController(std::vector<ThermalFit> fits, MpcConfig cfg = {});

  [[nodiscard]] std::string name() const override { return "mpc"; }
  void reset(const Scenario& scenario, std::uint64_t seed) override;
  std::vector<Action> act(const StepContext& ctx) override;
  std::vector<std::string> take_events() override;

  /// Decision from the most recent step (empty before the first).
  [[nodiscard]] const std::optional<MpcDecision>& last_decision() const { return last_; }
  [[nodiscard]] int fallback_count() const { return fallbacks_; }

 private:
  qp::WarmStart shifted_warm_start(const qp::QpSolution& prev) const;

  std::vector<ThermalFit> fits_;
  MpcConfig cfg_;
  qp::AdmmSolver solver_;
  bool solver_ready_ = false;
  std::optional<qp::QpSolution> prev_;
  std::optional<MpcDecision> last_;
  std::vector<ThermostatLatch> latches_;
  std::vector<std::string> events_;
  int fallbacks_ = 0;
};

}  // namespace dflex
