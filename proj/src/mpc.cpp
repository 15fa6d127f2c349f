#include "dflex/mpc.hpp"

#include <algorithm>
#include <cmath>

#include "dflex/error.hpp"

namespace dflex {

namespace {

using qp::kInfinity;
using qp::Triplet;

void check_sizes(const MpcInputs& in, int h) {
  const std::size_t n = in.states.size();
  if (in.params.size() != n || in.fits.size() != n || in.forecast.size() != n) {
    fail(ErrorCode::RosterMismatch, "states, params, fits and forecasts must cover the same buildings");
  }
  if (n == 0) fail(ErrorCode::EmptyDistrict, "no buildings");
  const auto need = static_cast<std::size_t>(h);
  if (in.reference.size() < need) {
    fail(ErrorCode::ForecastTooShort, "reference covers " + std::to_string(in.reference.size()) +
                                          " of " + std::to_string(h) + " steps");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (in.forecast[i].size() < need) {
      fail(ErrorCode::ForecastTooShort, "building " + std::to_string(i) + " forecast covers " +
                                            std::to_string(in.forecast[i].size()) + " of " +
                                            std::to_string(h) + " steps");
    }
  }
  if (!(in.dt_h > 0.0)) fail(ErrorCode::InvalidParams, "dt_h must be positive");
}

// Temperature trajectory with HVAC off: f_j = a f_{j-1} + b T_out_j + d, f_{-1} = T0.
std::vector<double> free_response(const ThermalFit& f, double t0, const std::vector<Disturbance>& w, int h) {
  std::vector<double> out(static_cast<std::size_t>(h));
  double t = t0;
  for (int j = 0; j < h; ++j) {
    t = f.a * t + f.b * w[static_cast<std::size_t>(j)].t_out_c + f.d;
    out[static_cast<std::size_t>(j)] = t;
  }
  return out;
}

double clamped_soc(const BuildingState& s, const BuildingParams& p) {
  return std::clamp(s.soc, p.soc_min, p.soc_max);
}

}  // namespace

void validate(const MpcConfig& cfg) {
  if (cfg.horizon < 1) fail(ErrorCode::InvalidParams, "horizon must be at least 1");
  const std::pair<double, const char*> weights[] = {{cfg.w_track, "w_track"},
                                                    {cfg.w_comfort, "w_comfort"},
                                                    {cfg.w_slack, "w_slack"},
                                                    {cfg.w_ctrl, "w_ctrl"}};
  for (const auto& [w, name] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorCode::InvalidParams, std::string(name) + " must be >= 0");
  }
  qp::validate(cfg.solver);
}

qp::QuadraticProgram assemble_mpc_qp(const MpcInputs& in, const MpcConfig& cfg) {
  validate(cfg);
  const int h = cfg.horizon;
  check_sizes(in, h);
  const int n = static_cast<int>(in.states.size());
  const MpcLayout lay{n, h};
  const double dt = in.dt_h;

  qp::QuadraticProgram prob;
  const int nv = lay.num_variables();
  const int nc = lay.num_constraints();
  prob.q = Eigen::VectorXd::Zero(nv);
  prob.l = Eigen::VectorXd::Zero(nc);
  prob.u = Eigen::VectorXd::Zero(nc);

  std::vector<Triplet> pt;
  std::vector<Triplet> at;
  pt.reserve(static_cast<std::size_t>(nv));
  at.reserve(static_cast<std::size_t>(n * h * (h + 8) + h));

  for (int j = 0; j < h; ++j) {
    pt.emplace_back(lay.y(j), lay.y(j), 2.0 * cfg.w_track);
    prob.q[lay.y(j)] = -2.0 * cfg.w_track * in.reference[static_cast<std::size_t>(j)];
  }

  for (int i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const auto& par = in.params[iu];
    const auto& fit = in.fits[iu];
    const auto& w = in.forecast[iu];
    const std::vector<double> free = free_response(fit, in.states[iu].t_c, w, h);
    const double soc0 = clamped_soc(in.states[iu], par);
    const double gain = fit.c * par.p_hvac_kw;

    for (int j = 0; j < h; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      if (cfg.w_ctrl > 0.0) pt.emplace_back(lay.u(j, i), lay.u(j, i), 2.0 * cfg.w_ctrl);
      if (cfg.w_slack > 0.0) {
        pt.emplace_back(lay.s_lo(j, i), lay.s_lo(j, i), 2.0 * cfg.w_slack);
        pt.emplace_back(lay.s_hi(j, i), lay.s_hi(j, i), 2.0 * cfg.w_slack);
      }
      prob.q[lay.s_lo(j, i)] = cfg.w_comfort;
      prob.q[lay.s_hi(j, i)] = cfg.w_comfort;

      int r = lay.row(j, i, 0);
      at.emplace_back(r, lay.u(j, i), 1.0);
      prob.l[r] = 0.0;
      prob.u[r] = 1.0;

      r = lay.row(j, i, 1);
      at.emplace_back(r, lay.p(j, i), 1.0);
      prob.l[r] = par.p_min_kw;
      prob.u[r] = par.p_max_kw;

      r = lay.row(j, i, 2);
      at.emplace_back(r, lay.s_lo(j, i), 1.0);
      prob.l[r] = 0.0;
      prob.u[r] = kInfinity;

      r = lay.row(j, i, 3);
      at.emplace_back(r, lay.s_hi(j, i), 1.0);
      prob.l[r] = 0.0;
      prob.u[r] = kInfinity;

      // T_{j+1} = free_j + sum_{m<=j} a^{j-m} c P u_m, softened by the slacks.
      const int lo = lay.row(j, i, 4);
      const int hi = lay.row(j, i, 5);
      double pw = 1.0;
      for (int m = j; m >= 0; --m) {
        at.emplace_back(lo, lay.u(m, i), pw * gain);
        at.emplace_back(hi, lay.u(m, i), pw * gain);
        pw *= fit.a;
      }
      at.emplace_back(lo, lay.s_lo(j, i), 1.0);
      at.emplace_back(hi, lay.s_hi(j, i), -1.0);
      prob.l[lo] = par.t_min_c - free[ju];
      prob.u[lo] = kInfinity;
      prob.l[hi] = -kInfinity;
      prob.u[hi] = par.t_max_c - free[ju];

      // Stored energy after step j stays within the SOC window.
      r = lay.row(j, i, 6);
      for (int m = 0; m <= j; ++m) at.emplace_back(r, lay.p(m, i), dt);
      prob.l[r] = (par.soc_min - soc0) * par.e_cap_kwh;
      prob.u[r] = (par.soc_max - soc0) * par.e_cap_kwh;

      // y_j - sum_i (P dt u + dt p) = sum_i (base - pv).
      const int c = lay.coupling_row(j);
      at.emplace_back(c, lay.u(j, i), -par.p_hvac_kw * dt);
      at.emplace_back(c, lay.p(j, i), -dt);
      prob.l[c] += w[ju].base_load_kwh - w[ju].pv_kwh;
    }
  }
  for (int j = 0; j < h; ++j) {
    const int c = lay.coupling_row(j);
    at.emplace_back(c, lay.y(j), 1.0);
    prob.u[c] = prob.l[c];
  }

  prob.P = qp::from_triplets(nv, nv, pt);
  prob.A = qp::from_triplets(nc, nv, at);
  return prob;
}

MpcDecision decode_mpc_solution(const qp::QpSolution& sol, const MpcInputs& in, const MpcConfig& cfg) {
  const int h = cfg.horizon;
  check_sizes(in, h);
  const int n = static_cast<int>(in.states.size());
  const MpcLayout lay{n, h};
  if (sol.x.size() != lay.num_variables()) {
    fail(ErrorCode::DimensionMismatch, "solution has " + std::to_string(sol.x.size()) +
                                           " entries, layout needs " + std::to_string(lay.num_variables()));
  }
  const auto hu = static_cast<std::size_t>(h);
  const auto nu = static_cast<std::size_t>(n);
  MpcDecision d;
  d.status = sol.status;
  d.iterations = sol.iterations;
  d.actions.assign(hu, std::vector<Action>(nu));
  d.s_lo.assign(hu, std::vector<double>(nu));
  d.s_hi.assign(hu, std::vector<double>(nu));
  d.t_pred.assign(hu, std::vector<double>(nu));
  d.soc_pred.assign(hu, std::vector<double>(nu));
  d.y.resize(hu);
  d.y_reconstructed.assign(hu, 0.0);
  d.tracking_residual.resize(hu);

  for (int i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const auto& par = in.params[iu];
    const auto& fit = in.fits[iu];
    double t = in.states[iu].t_c;
    double soc = clamped_soc(in.states[iu], par);
    for (int j = 0; j < h; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      const double u = sol.x[lay.u(j, i)];
      const double p = sol.x[lay.p(j, i)];
      d.actions[ju][iu] = {std::clamp(u, 0.0, 1.0), std::clamp(p, par.p_min_kw, par.p_max_kw)};
      d.s_lo[ju][iu] = sol.x[lay.s_lo(j, i)];
      d.s_hi[ju][iu] = sol.x[lay.s_hi(j, i)];
      t = fit.a * t + fit.b * in.forecast[iu][ju].t_out_c + fit.c * par.p_hvac_kw * u + fit.d;
      soc += p * in.dt_h / par.e_cap_kwh;
      d.t_pred[ju][iu] = t;
      d.soc_pred[ju][iu] = soc;
      const auto& w = in.forecast[iu][ju];
      d.y_reconstructed[ju] += w.base_load_kwh - w.pv_kwh + par.p_hvac_kw * u * in.dt_h + p * in.dt_h;
    }
  }
  for (int j = 0; j < h; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    d.y[ju] = sol.x[lay.y(j)];
    d.tracking_residual[ju] = d.y[ju] - in.reference[ju];
  }
  return d;
}

void fill_forecast(MpcInputs& in, const Scenario& scenario, const ReferenceSignal& reference,
                   std::size_t k, int horizon) {
  const std::size_t steps = scenario.num_steps();
  if (steps == 0 || reference.r.empty()) fail(ErrorCode::ForecastTooShort, "empty scenario or reference");
  const auto h = static_cast<std::size_t>(horizon);
  in.forecast.assign(scenario.num_buildings(), {});
  for (std::size_t i = 0; i < scenario.num_buildings(); ++i) {
    auto& f = in.forecast[i];
    f.reserve(h);
    for (std::size_t j = 0; j < h; ++j) f.push_back(scenario.disturbances[i][std::min(k + j, steps - 1)]);
  }
  in.reference.resize(h);
  for (std::size_t j = 0; j < h; ++j) in.reference[j] = reference.r[std::min(k + j, reference.r.size() - 1)];
  in.dt_h = scenario.calendar.dt_h;
}

MpcController::MpcController(std::vector<ThermalFit> fits, MpcConfig cfg)
    : fits_(std::move(fits)), cfg_(std::move(cfg)) {
  validate(cfg_);
}

void MpcController::reset(const Scenario& scenario, std::uint64_t /*seed*/) {
  if (fits_.size() != scenario.num_buildings()) {
    fail(ErrorCode::RosterMismatch, std::to_string(fits_.size()) + " thermal fits for " +
                                        std::to_string(scenario.num_buildings()) + " buildings");
  }
  for (const auto& p : scenario.buildings) validate(cfg_.fallback, p);
  latches_.assign(scenario.num_buildings(), ThermostatLatch{});
  solver_ready_ = false;
  prev_.reset();
  last_.reset();
  events_.clear();
  fallbacks_ = 0;
}

qp::WarmStart MpcController::shifted_warm_start(const qp::QpSolution& prev) const {
  const int n = static_cast<int>(fits_.size());
  const int h = cfg_.horizon;
  const MpcLayout lay{n, h};
  qp::WarmStart ws{prev.x, prev.z_dual};
  for (int j = 0; j < h; ++j) {
    const int src = std::min(j + 1, h - 1);
    for (int i = 0; i < n; ++i) {
      for (int f = 0; f < MpcLayout::kVarsPerBlock; ++f) ws.x[lay.u(j, i) + f] = prev.x[lay.u(src, i) + f];
      for (int r = 0; r < MpcLayout::kRowsPerBlock; ++r) {
        ws.z_dual[lay.row(j, i, r)] = prev.z_dual[lay.row(src, i, r)];
      }
    }
    ws.x[lay.y(j)] = prev.x[lay.y(src)];
    ws.z_dual[lay.coupling_row(j)] = prev.z_dual[lay.coupling_row(src)];
  }
  return ws;
}

std::vector<Action> MpcController::act(const StepContext& ctx) {
  const Scenario& sc = *ctx.scenario;
  const std::size_t n = sc.num_buildings();
  if (latches_.size() != n) latches_.assign(n, ThermostatLatch{});

  // The thermostat latches track every step so a fallback starts from a consistent state.
  std::vector<Action> fallback(n);
  for (std::size_t i = 0; i < n; ++i) {
    fallback[i] = rbc_act(ctx.states[i], ctx.disturbance(i), cfg_.fallback, ctx.params(i), latches_[i],
                          sc.calendar.dt_h);
  }

  MpcInputs in;
  in.states = ctx.states;
  in.params = sc.buildings;
  in.fits = fits_;
  fill_forecast(in, sc, *ctx.reference, ctx.k, cfg_.horizon);
  const qp::QuadraticProgram prob = assemble_mpc_qp(in, cfg_);
  if (!solver_ready_) {
    qp::validate(prob);
    solver_.setup(prob, cfg_.solver);
    solver_ready_ = true;
  } else {
    solver_.update_vectors(prob.q, prob.l, prob.u);
  }

  qp::QpSolution sol;
  if (prev_) {
    const qp::WarmStart ws = shifted_warm_start(*prev_);
    sol = solver_.solve(&ws);
  } else {
    sol = solver_.solve();
  }

  if (sol.status != qp::Status::Solved) {
    ++fallbacks_;
    events_.push_back("step " + std::to_string(ctx.k) + ": mpc " + qp::to_string(sol.status) + " after " +
                      std::to_string(sol.iterations) + " iterations, rbc fallback");
    prev_.reset();
    last_ = decode_mpc_solution(sol, in, cfg_);
    return fallback;
  }
  last_ = decode_mpc_solution(sol, in, cfg_);
  prev_ = std::move(sol);
  return last_->actions.front();
}

std::vector<std::string> MpcController::take_events() {
  std::vector<std::string> out;
  out.swap(events_);
  return out;
}

}  // namespace dflex
