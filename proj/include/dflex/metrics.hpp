#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dflex/types.hpp"

namespace dflex {

/// 100 * mean(y - r) / mean(r). Throws LengthMismatch or ZeroReferenceMean.
double nmbe(std::span<const double> y, std::span<const double> r);

/// 100 * sqrt(mean((y - r)^2)) / mean(r).
double cvrmse(std::span<const double> y, std::span<const double> r);

struct ComfortBand {
  double t_min_c = 20.0;
  double t_max_c = 24.0;
};

std::vector<ComfortBand> bands_of(const Scenario& scenario);

struct ComfortMetrics {
  std::vector<int> exceedance_hours;      // H_i: steps with v > 0
  std::vector<double> exceedance_pct;     // P_i
  double mean_exceedance_pct = 0.0;       // mean of P_i
  std::vector<double> kelvin_hours;       // K_i
  double mean_kelvin_hours = 0.0;
};

/// Throws EmptyTrace, RosterMismatch when bands do not match the trace.
ComfortMetrics comfort_metrics(const DistrictTrace& trace, const std::vector<ComfortBand>& bands);

struct SpatialVariability {
  std::vector<double> sigma;  // population std of y_i^ctrl - y_i^rbc across buildings, per step
  double sv_med = 0.0;
};

/// Throws RosterMismatch or LengthMismatch on misaligned traces.
SpatialVariability spatial_variability(const DistrictTrace& ctrl, const DistrictTrace& rbc);

double median(std::vector<double> values);

struct MetricReport {
  std::string controller;
  std::string period;  // "train" or "test"
  std::uint64_t seed = 0;
  double nmbe = 0.0;
  double cvrmse = 0.0;
  ComfortMetrics comfort;
  std::optional<SpatialVariability> sv;  // absent when no RBC trace is available
};

MetricReport evaluate(const DistrictTrace& trace, const std::vector<ComfortBand>& bands,
                      const DistrictTrace* rbc_trace, std::string controller, std::string period,
                      std::uint64_t seed);

nlohmann::json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

/// controller,period,seed,nmbe_pct,cvrmse_pct,exceed_pct,kelvin_hours,sv_med_kwh
std::string summary_csv_header();
std::string summary_csv_row(const MetricReport& report);

/// Wide per-step trace: district columns, then eight columns per building.
void write_trace_csv(const DistrictTrace& trace, const std::filesystem::path& path);
DistrictTrace read_trace_csv(const std::filesystem::path& path);

}  // namespace dflex
