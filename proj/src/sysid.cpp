#include "dflex/sysid.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "dflex/error.hpp"

namespace dflex {

namespace {

constexpr std::size_t kMinSamples = 8;
constexpr double kProjectionMargin = 1e-4;

Eigen::VectorXd least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Eigen::Index needed_rank) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < needed_rank) {
    fail(ErrorCode::RankDeficient, "regressors have rank " + std::to_string(qr.rank()) + " of " +
                                       std::to_string(needed_rank) + " (insufficient excitation)");
  }
  return qr.solve(y);
}

}  // namespace

ThermalFit identify_thermal_model(const ThermalSeries& s) {
  const std::size_t k = s.t_out_c.size();
  if (s.u.size() != k || s.t_c.size() != k + 1) {
    fail(ErrorCode::LengthMismatch, "need K+1 temperatures and K inputs");
  }
  if (k < kMinSamples) {
    fail(ErrorCode::TooFewSamples, std::to_string(k) + " transitions, need " + std::to_string(kMinSamples));
  }
  if (!(s.p_hvac_kw > 0.0)) fail(ErrorCode::InvalidParams, "p_hvac must be positive");

  const auto n = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd X(n, 4);
  Eigen::VectorXd y(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto i = static_cast<std::size_t>(j);
    X(j, 0) = s.t_c[i];
    X(j, 1) = s.t_out_c[i];
    X(j, 2) = s.p_hvac_kw * s.u[i];
    X(j, 3) = 1.0;
    y[j] = s.t_c[i + 1];
  }
  if (!X.allFinite() || !y.allFinite()) fail(ErrorCode::NonFiniteInput, "non-finite sample");

  // Column equilibration keeps the rank test meaningful across units.
  Eigen::VectorXd scale = X.colwise().norm().transpose();
  for (Eigen::Index c = 0; c < 4; ++c) {
    if (scale[c] == 0.0) fail(ErrorCode::RankDeficient, "regressor column " + std::to_string(c) + " is zero");
  }
  const Eigen::MatrixXd Xs = X * scale.cwiseInverse().asDiagonal();
  const Eigen::VectorXd theta = least_squares(Xs, y, 4).cwiseQuotient(scale);

  ThermalFit fit;
  fit.a = theta[0];
  fit.b = theta[1];
  fit.c = theta[2];
  fit.d = theta[3];
  fit.samples = k;

  if (!(fit.a > 0.0 && fit.a < 1.0)) {
    fit.projected = true;
    fit.a = std::clamp(fit.a, kProjectionMargin, 1.0 - kProjectionMargin);
    const Eigen::VectorXd y_rest = y - fit.a * X.col(0);
    const Eigen::MatrixXd Xr = Xs.rightCols(3);
    const Eigen::VectorXd rest = least_squares(Xr, y_rest, 3).cwiseQuotient(scale.tail(3));
    fit.b = rest[0];
    fit.c = rest[1];
    fit.d = rest[2];
  }

  const Eigen::Vector4d coef(fit.a, fit.b, fit.c, fit.d);
  fit.rmse_k = std::sqrt((X * coef - y).squaredNorm() / static_cast<double>(k));
  return fit;
}

ThermalSeries thermal_series(const DistrictTrace& trace, std::size_t building, double p_hvac_kw) {
  if (building >= trace.num_buildings) {
    fail(ErrorCode::RosterMismatch, "building index " + std::to_string(building) + " out of range");
  }
  ThermalSeries s;
  s.p_hvac_kw = p_hvac_kw;
  s.t_c.reserve(trace.num_steps + 1);
  s.t_c.push_back(trace.initial.at(building).t_c);
  for (std::size_t k = 0; k < trace.num_steps; ++k) {
    s.t_c.push_back(trace.state(k, building).t_c);
    s.t_out_c.push_back(trace.disturbance(k, building).t_out_c);
    s.u.push_back(trace.action(k, building).u);
  }
  return s;
}

std::vector<ThermalFit> identify_district(const DistrictTrace& trace, const Scenario& scenario) {
  if (trace.num_buildings != scenario.num_buildings()) {
    fail(ErrorCode::RosterMismatch, "trace and scenario rosters differ");
  }
  std::vector<ThermalFit> fits;
  fits.reserve(trace.num_buildings);
  for (std::size_t i = 0; i < trace.num_buildings; ++i) {
    try {
      fits.push_back(identify_thermal_model(thermal_series(trace, i, scenario.buildings[i].p_hvac_kw)));
    } catch (const Error& e) {
      throw Error(e.code(), "building " + std::to_string(scenario.buildings[i].id) + ": " + e.detail());
    }
  }
  return fits;
}

}  // namespace dflex
