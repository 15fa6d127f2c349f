#include "dflex/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "dflex/calendar.hpp"
#include "dflex/csv.hpp"
#include "dflex/error.hpp"
#include "dflex/sim.hpp"

namespace dflex {

namespace {

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void check_pair(std::span<const double> y, std::span<const double> r) {
  if (y.size() != r.size()) {
    fail(ErrorCode::LengthMismatch, "y has " + std::to_string(y.size()) + " values, r has " +
                                        std::to_string(r.size()));
  }
  if (y.empty()) fail(ErrorCode::LengthMismatch, "empty series");
}

double reference_mean(std::span<const double> r) {
  const double m = mean_of(r);
  if (m == 0.0 || !std::isfinite(m)) fail(ErrorCode::ZeroReferenceMean, "mean(r) must be nonzero");
  return m;
}

const char* kBuildingColumns[] = {"t_c", "soc", "y_kwh", "u", "p_kw", "t_out_c", "base_kwh", "pv_kwh"};

}  // namespace

double nmbe(std::span<const double> y, std::span<const double> r) {
  check_pair(y, r);
  const double rm = reference_mean(r);
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) s += y[k] - r[k];
  return 100.0 * (s / static_cast<double>(y.size())) / rm;
}

double cvrmse(std::span<const double> y, std::span<const double> r) {
  check_pair(y, r);
  const double rm = reference_mean(r);
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) s += (y[k] - r[k]) * (y[k] - r[k]);
  return 100.0 * std::sqrt(s / static_cast<double>(y.size())) / rm;
}

std::vector<ComfortBand> bands_of(const Scenario& scenario) {
  std::vector<ComfortBand> out;
  out.reserve(scenario.num_buildings());
  for (const auto& b : scenario.buildings) out.push_back({b.t_min_c, b.t_max_c});
  return out;
}

ComfortMetrics comfort_metrics(const DistrictTrace& trace, const std::vector<ComfortBand>& bands) {
  if (trace.num_steps == 0) fail(ErrorCode::EmptyTrace, "trace has no steps");
  const std::size_t n = trace.num_buildings;
  if (bands.size() != n) {
    fail(ErrorCode::RosterMismatch, std::to_string(bands.size()) + " bands for " +
                                        std::to_string(n) + " buildings");
  }
  ComfortMetrics m;
  m.exceedance_hours.assign(n, 0);
  m.exceedance_pct.assign(n, 0.0);
  m.kelvin_hours.assign(n, 0.0);
  for (std::size_t k = 0; k < trace.num_steps; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = comfort_violation(trace.state(k, i).t_c, bands[i].t_min_c, bands[i].t_max_c);
      if (v > 0.0) ++m.exceedance_hours[i];
      m.kelvin_hours[i] += v * trace.dt_h;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    m.exceedance_pct[i] = 100.0 * m.exceedance_hours[i] / static_cast<double>(trace.num_steps);
    m.mean_exceedance_pct += m.exceedance_pct[i];
    m.mean_kelvin_hours += m.kelvin_hours[i];
  }
  m.mean_exceedance_pct /= static_cast<double>(n);
  m.mean_kelvin_hours /= static_cast<double>(n);
  return m;
}

double median(std::vector<double> values) {
  if (values.empty()) fail(ErrorCode::EmptyTrace, "median of an empty series");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

SpatialVariability spatial_variability(const DistrictTrace& ctrl, const DistrictTrace& rbc) {
  if (ctrl.num_buildings != rbc.num_buildings) {
    fail(ErrorCode::RosterMismatch, "traces cover " + std::to_string(ctrl.num_buildings) +
                                        " and " + std::to_string(rbc.num_buildings) + " buildings");
  }
  if (ctrl.num_steps != rbc.num_steps) {
    fail(ErrorCode::LengthMismatch, "traces have " + std::to_string(ctrl.num_steps) + " and " +
                                        std::to_string(rbc.num_steps) + " steps");
  }
  if (ctrl.num_steps == 0 || ctrl.num_buildings == 0) fail(ErrorCode::EmptyTrace, "empty trace");
  const std::size_t n = ctrl.num_buildings;
  SpatialVariability out;
  out.sigma.resize(ctrl.num_steps);
  std::vector<double> dy(n);
  for (std::size_t k = 0; k < ctrl.num_steps; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dy[i] = ctrl.state(k, i).y_kwh - rbc.state(k, i).y_kwh;
      mean += dy[i];
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double d : dy) var += (d - mean) * (d - mean);
    out.sigma[k] = std::sqrt(var / static_cast<double>(n));
  }
  out.sv_med = median(out.sigma);
  return out;
}

MetricReport evaluate(const DistrictTrace& trace, const std::vector<ComfortBand>& bands,
                      const DistrictTrace* rbc_trace, std::string controller, std::string period,
                      std::uint64_t seed) {
  MetricReport rep;
  rep.controller = std::move(controller);
  rep.period = std::move(period);
  rep.seed = seed;
  rep.nmbe = nmbe(trace.district_load, trace.reference);
  rep.cvrmse = cvrmse(trace.district_load, trace.reference);
  rep.comfort = comfort_metrics(trace, bands);
  if (rbc_trace != nullptr) rep.sv = spatial_variability(trace, *rbc_trace);
  return rep;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  j["controller"] = r.controller;
  j["period"] = r.period;
  j["seed"] = r.seed;
  j["nmbe_pct"] = r.nmbe;
  j["cvrmse_pct"] = r.cvrmse;
  j["exceedance_hours"] = r.comfort.exceedance_hours;
  j["exceedance_pct"] = r.comfort.exceedance_pct;
  j["mean_exceedance_pct"] = r.comfort.mean_exceedance_pct;
  j["kelvin_hours"] = r.comfort.kelvin_hours;
  j["mean_kelvin_hours"] = r.comfort.mean_kelvin_hours;
  if (r.sv) {
    j["sv_med_kwh"] = r.sv->sv_med;
    j["sv_sigma_kwh"] = r.sv->sigma;
  } else {
    j["sv_med_kwh"] = nullptr;
  }
  return j;
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.controller = j.at("controller").get<std::string>();
    r.period = j.at("period").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.nmbe = j.at("nmbe_pct").get<double>();
    r.cvrmse = j.at("cvrmse_pct").get<double>();
    r.comfort.exceedance_hours = j.at("exceedance_hours").get<std::vector<int>>();
    r.comfort.exceedance_pct = j.at("exceedance_pct").get<std::vector<double>>();
    r.comfort.mean_exceedance_pct = j.at("mean_exceedance_pct").get<double>();
    r.comfort.kelvin_hours = j.at("kelvin_hours").get<std::vector<double>>();
    r.comfort.mean_kelvin_hours = j.at("mean_kelvin_hours").get<double>();
    if (!j.at("sv_med_kwh").is_null()) {
      SpatialVariability sv;
      sv.sv_med = j.at("sv_med_kwh").get<double>();
      if (j.contains("sv_sigma_kwh")) sv.sigma = j.at("sv_sigma_kwh").get<std::vector<double>>();
      r.sv = std::move(sv);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MissingArtifact, std::string("malformed metric report: ") + e.what());
  }
  return r;
}

std::string summary_csv_header() {
  return "controller,period,seed,nmbe_pct,cvrmse_pct,exceed_pct,kelvin_hours,sv_med_kwh\n";
}

std::string summary_csv_row(const MetricReport& r) {
  return csv::join_row({r.controller, r.period, std::to_string(r.seed), csv::format_double(r.nmbe),
                        csv::format_double(r.cvrmse), csv::format_double(r.comfort.mean_exceedance_pct),
                        csv::format_double(r.comfort.mean_kelvin_hours),
                        r.sv ? csv::format_double(r.sv->sv_med) : std::string()});
}

void write_trace_csv(const DistrictTrace& trace, const std::filesystem::path& path) {
  std::vector<std::string> header{"k", "timestamp", "hour", "dt_h", "y_kwh", "r_kwh", "p_total_kw"};
  for (std::size_t i = 0; i < trace.num_buildings; ++i) {
    for (const char* c : kBuildingColumns) header.push_back("b" + std::to_string(i) + "_" + c);
  }
  std::string out = csv::join_row(header);
  const std::int64_t t0 = parse_iso8601(trace.calendar_start);
  const auto step = static_cast<std::int64_t>(std::llround(trace.dt_h * 3600.0));
  std::vector<std::string> row;
  for (std::size_t k = 0; k < trace.num_steps; ++k) {
    row.clear();
    row.push_back(std::to_string(k));
    row.push_back(format_iso8601(t0 + static_cast<std::int64_t>(k) * step));
    row.push_back(std::to_string(trace.num_buildings > 0 ? trace.disturbance(k, 0).hour_of_day : 0));
    row.push_back(csv::format_double(trace.dt_h));
    row.push_back(csv::format_double(trace.district_load[k]));
    row.push_back(csv::format_double(trace.reference[k]));
    row.push_back(csv::format_double(trace.battery_total_kw(k)));
    for (std::size_t i = 0; i < trace.num_buildings; ++i) {
      const auto& s = trace.state(k, i);
      const auto& a = trace.action(k, i);
      const auto& d = trace.disturbance(k, i);
      for (double v : {s.t_c, s.soc, s.y_kwh, a.u, a.p_batt_kw, d.t_out_c, d.base_load_kwh, d.pv_kwh}) {
        row.push_back(csv::format_double(v));
      }
    }
    out += csv::join_row(row);
  }
  csv::write_file(path, out);
}

DistrictTrace read_trace_csv(const std::filesystem::path& path) {
  const std::string name = path.filename().string();
  const csv::Table t = csv::read_file(path);
  const std::size_t c_ts = t.column("timestamp", name);
  const std::size_t c_hour = t.column("hour", name);
  const std::size_t c_dt = t.column("dt_h", name);
  const std::size_t c_y = t.column("y_kwh", name);
  const std::size_t c_r = t.column("r_kwh", name);
  std::size_t n = 0;
  while (std::find(t.header.begin(), t.header.end(), "b" + std::to_string(n) + "_t_c") != t.header.end()) ++n;
  if (n == 0) fail(ErrorCode::MissingColumn, name + ": no building columns");
  std::vector<std::array<std::size_t, 8>> cols(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 8; ++c) {
      cols[i][c] = t.column("b" + std::to_string(i) + "_" + kBuildingColumns[c], name);
    }
  }
  if (t.rows.empty()) fail(ErrorCode::EmptyTrace, name + " has no rows");

  DistrictTrace trace;
  trace.num_buildings = n;
  trace.num_steps = t.rows.size();
  trace.calendar_start = t.rows.front()[c_ts];
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& row = t.rows[k];
    const std::string ctx = name + " row " + std::to_string(k + 1);
    auto num = [&](std::size_t c) { return csv::parse_double(row[c], ctx); };
    if (k == 0) trace.dt_h = num(c_dt);
    trace.district_load.push_back(num(c_y));
    trace.reference.push_back(num(c_r));
    const int hour = static_cast<int>(num(c_hour));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = cols[i];
      trace.states.push_back({num(c[0]), num(c[1]), num(c[2])});
      trace.actions.push_back({num(c[3]), num(c[4])});
      trace.disturbances.push_back({num(c[5]), num(c[6]), num(c[7]), hour});
    }
  }
  return trace;
}

}  // namespace dflex
