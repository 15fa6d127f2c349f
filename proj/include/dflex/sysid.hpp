#pragma once

#include <vector>

#include "dflex/types.hpp"

namespace dflex {

/// Fitted T' = a*T + b*T_out + c*P_hvac*u + d.
struct ThermalFit {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
  double rmse_k = 0.0;
  std::size_t samples = 0;
  bool projected = false;  // a was pulled into (0, 1) and the rest refit
};

/// One building's record: t_c holds K+1 temperatures, t_out and u hold K inputs.
struct ThermalSeries {
  std::vector<double> t_c;
  std::vector<double> t_out_c;
  std::vector<double> u;
  double p_hvac_kw = 1.0;
};

/// Least squares on the four regressors. Throws TooFewSamples (< 8 transitions),
/// LengthMismatch, NonFiniteInput or RankDeficient.
ThermalFit identify_thermal_model(const ThermalSeries& series);

/// Extracts building i's series from a trace (initial state included).
ThermalSeries thermal_series(const DistrictTrace& trace, std::size_t building, double p_hvac_kw);

/// Fits every building of a trace.
std::vector<ThermalFit> identify_district(const DistrictTrace& trace, const Scenario& scenario);

}  // namespace dflex
