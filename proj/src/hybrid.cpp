#include "dflex/hybrid.hpp"

#include <algorithm>
#include <cmath>

#include "dflex/error.hpp"

namespace dflex {

namespace {

using qp::Triplet;

void check_sizes(const BatteryQpInputs& in, int h) {
  const std::size_t n = in.states.size();
  if (n == 0) fail(ErrorCode::EmptyDistrict, "no buildings");
  if (in.params.size() != n || in.hvac.size() != n || in.forecast.size() != n) {
    fail(ErrorCode::RosterMismatch, "states, params, hvac and forecasts must cover the same buildings");
  }
  const auto need = static_cast<std::size_t>(h);
  if (in.reference.size() < need) fail(ErrorCode::ForecastTooShort, "reference shorter than the horizon");
  for (const auto& f : in.forecast) {
    if (f.size() < need) fail(ErrorCode::ForecastTooShort, "disturbance forecast shorter than the horizon");
  }
  if (!(in.dt_h > 0.0)) fail(ErrorCode::InvalidParams, "dt_h must be positive");
}

}  // namespace

qp::QuadraticProgram assemble_battery_qp(const BatteryQpInputs& in, const MpcConfig& cfg) {
  validate(cfg);
  const int h = cfg.horizon;
  check_sizes(in, h);
  const int n = static_cast<int>(in.states.size());
  const BatteryLayout lay{n, h};
  const double dt = in.dt_h;

  qp::QuadraticProgram prob;
  prob.q = Eigen::VectorXd::Zero(lay.num_variables());
  prob.l = Eigen::VectorXd::Zero(lay.num_constraints());
  prob.u = Eigen::VectorXd::Zero(lay.num_constraints());
  std::vector<Triplet> pt, at;
  pt.reserve(static_cast<std::size_t>(lay.num_variables()));
  at.reserve(static_cast<std::size_t>(n * h * (h + 4) + h));

  for (int j = 0; j < h; ++j) {
    pt.emplace_back(lay.y(j), lay.y(j), 2.0 * cfg.w_track);
    prob.q[lay.y(j)] = -2.0 * cfg.w_track * in.reference[static_cast<std::size_t>(j)];
    const int c = lay.coupling_row(j);
    at.emplace_back(c, lay.y(j), 1.0);
  }

  for (int i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const auto& par = in.params[iu];
    const double soc0 = std::clamp(in.states[iu].soc, par.soc_min, par.soc_max);
    const double hvac_kwh = par.p_hvac_kw * std::clamp(in.hvac[iu], 0.0, 1.0) * dt;
    for (int j = 0; j < h; ++j) {
      const auto& w = in.forecast[iu][static_cast<std::size_t>(j)];
      if (cfg.w_ctrl > 0.0) pt.emplace_back(lay.p(j, i), lay.p(j, i), 2.0 * cfg.w_ctrl);

      int r = lay.box_row(j, i);
      at.emplace_back(r, lay.p(j, i), 1.0);
      prob.l[r] = par.p_min_kw;
      prob.u[r] = par.p_max_kw;

      r = lay.soc_row(j, i);
      for (int m = 0; m <= j; ++m) at.emplace_back(r, lay.p(m, i), dt);
      prob.l[r] = (par.soc_min - soc0) * par.e_cap_kwh;
      prob.u[r] = (par.soc_max - soc0) * par.e_cap_kwh;

      // y_j - dt * sum_i p = sum_i (base - pv + hvac).
      const int c = lay.coupling_row(j);
      at.emplace_back(c, lay.p(j, i), -dt);
      prob.l[c] += w.base_load_kwh - w.pv_kwh + hvac_kwh;
    }
  }
  for (int j = 0; j < h; ++j) prob.u[lay.coupling_row(j)] = prob.l[lay.coupling_row(j)];

  prob.P = qp::from_triplets(lay.num_variables(), lay.num_variables(), pt);
  prob.A = qp::from_triplets(lay.num_constraints(), lay.num_variables(), at);
  return prob;
}

BatteryPlan decode_battery_solution(const qp::QpSolution& sol, const BatteryQpInputs& in, const MpcConfig& cfg) {
  const int h = cfg.horizon;
  const int n = static_cast<int>(in.states.size());
  const BatteryLayout lay{n, h};
  if (sol.x.size() != lay.num_variables()) fail(ErrorCode::DimensionMismatch, "solution does not fit the layout");
  BatteryPlan plan;
  plan.status = sol.status;
  plan.iterations = sol.iterations;
  plan.p.assign(static_cast<std::size_t>(h), std::vector<double>(static_cast<std::size_t>(n)));
  plan.y.resize(static_cast<std::size_t>(h));
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < n; ++i) {
      const auto& par = in.params[static_cast<std::size_t>(i)];
      plan.p[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
          std::clamp(sol.x[lay.p(j, i)], par.p_min_kw, par.p_max_kw);
    }
    plan.y[static_cast<std::size_t>(j)] = sol.x[lay.y(j)];
  }
  return plan;
}

HybridController::HybridController(SacPolicies policies, MpcConfig cfg)
    : policies_(std::move(policies)), cfg_(std::move(cfg)) {
  validate(cfg_);
  if (policies_.actors.size() != policies_.stats.num_buildings()) {
    fail(ErrorCode::RosterMismatch, "policy count does not match the statistics");
  }
}

void HybridController::reset(const Scenario& scenario, std::uint64_t /*seed*/) {
  if (policies_.actors.size() != scenario.num_buildings()) {
    fail(ErrorCode::RosterMismatch, std::to_string(policies_.actors.size()) + " policies for " +
                                        std::to_string(scenario.num_buildings()) + " buildings");
  }
  solver_ready_ = false;
  prev_.reset();
  last_.reset();
  events_.clear();
  fallbacks_ = 0;
}

std::vector<Action> HybridController::act(const StepContext& ctx) {
  const Scenario& sc = *ctx.scenario;
  const std::size_t n = sc.num_buildings();
  if (ctx.states.size() != policies_.actors.size()) {
    fail(ErrorCode::RosterMismatch, std::to_string(policies_.actors.size()) + " policies for " +
                                        std::to_string(ctx.states.size()) + " buildings");
  }

  std::vector<Action> out(n);
  BatteryQpInputs in;
  in.states = ctx.states;
  in.params = sc.buildings;
  in.hvac.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].u = policies_.act(ctx, i).u;
    in.hvac[i] = out[i].u;
  }

  MpcInputs window;
  fill_forecast(window, sc, *ctx.reference, ctx.k, cfg_.horizon);
  in.forecast = std::move(window.forecast);
  in.reference = std::move(window.reference);
  in.dt_h = window.dt_h;

  const qp::QuadraticProgram prob = assemble_battery_qp(in, cfg_);
  if (!solver_ready_) {
    qp::validate(prob);
    solver_.setup(prob, cfg_.solver);
    solver_ready_ = true;
  } else {
    solver_.update_vectors(prob.q, prob.l, prob.u);
  }

  qp::QpSolution sol;
  if (prev_) {
    // Shift the previous plan one step forward, repeating its last step.
    const BatteryLayout lay{static_cast<int>(n), cfg_.horizon};
    qp::WarmStart ws{prev_->x, prev_->z_dual};
    for (int j = 0; j < lay.h; ++j) {
      const int src = std::min(j + 1, lay.h - 1);
      for (int i = 0; i < lay.n; ++i) {
        ws.x[lay.p(j, i)] = prev_->x[lay.p(src, i)];
        ws.z_dual[lay.box_row(j, i)] = prev_->z_dual[lay.box_row(src, i)];
        ws.z_dual[lay.soc_row(j, i)] = prev_->z_dual[lay.soc_row(src, i)];
      }
      ws.x[lay.y(j)] = prev_->x[lay.y(src)];
      ws.z_dual[lay.coupling_row(j)] = prev_->z_dual[lay.coupling_row(src)];
    }
    sol = solver_.solve(&ws);
  } else {
    sol = solver_.solve();
  }

  last_ = decode_battery_solution(sol, in, cfg_);
  if (sol.status != qp::Status::Solved) {
    ++fallbacks_;
    events_.push_back("step " + std::to_string(ctx.k) + ": battery qp " + qp::to_string(sol.status) + " after " +
                      std::to_string(sol.iterations) + " iterations, batteries idle");
    prev_.reset();
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out[i].p_batt_kw = last_->p.front()[i];
  prev_ = std::move(sol);
  return out;
}

std::vector<std::string> HybridController::take_events() {
  std::vector<std::string> out;
  out.swap(events_);
  return out;
}

}  // namespace dflex
