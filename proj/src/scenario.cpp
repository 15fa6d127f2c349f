#include "dflex/scenario.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "dflex/calendar.hpp"
#include "dflex/csv.hpp"
#include "dflex/error.hpp"
#include "dflex/sim.hpp"

namespace dflex {

namespace fs = std::filesystem;

namespace {

struct RosterEntry {
  double floor_area_m2;
  double bess_kwh;
};

// Floor area and BESS capacity of the 25-building Vermont reference district.
constexpr std::array<RosterEntry, 25> kReferenceRoster = {{
    {306.7, 21.6}, {202.2, 10.5}, {157.0, 10.8}, {306.7, 16.2}, {306.7, 20.0},
    {113.4, 13.2}, {157.0, 16.0}, {157.0, 21.0}, {157.0, 13.5}, {113.4, 13.2},
    {202.2, 16.2}, {202.2, 20.0}, {247.3, 10.8}, {202.2, 10.0}, {202.2, 14.0},
    {247.3, 10.5}, {306.7, 8.0},  {202.2, 14.8}, {202.2, 20.0}, {82.2, 24.5},
    {157.0, 10.5}, {113.4, 10.0}, {157.0, 10.5}, {113.4, 10.5}, {113.4, 20.0},
}};

constexpr double kMinBess = 8.0;
constexpr double kMaxBess = 24.5;
constexpr double kDesignTempC = -25.0;

// Non-HVAC load shape by hour, mean 1.
constexpr std::array<double, 24> kBaseShape = {
    0.62, 0.56, 0.53, 0.52, 0.55, 0.68, 1.02, 1.42, 1.38, 1.05, 0.90, 0.88,
    0.92, 0.86, 0.84, 0.92, 1.12, 1.48, 1.66, 1.60, 1.44, 1.22, 0.96, 0.77};

std::string meta_path_name(const fs::path& dir) { return (dir / "meta.csv").string(); }

fs::path series_path(const fs::path& dir, int id) { return dir / ("b" + std::to_string(id) + ".csv"); }

double shape_mean() {
  double s = 0.0;
  for (double v : kBaseShape) s += v;
  return s / 24.0;
}

BuildingParams sample_building(int id, double floor_area, double bess, std::mt19937_64& rng,
                               double dt_h) {
  std::uniform_real_distribution<double> u_value(0.8, 1.3);   // W/m2K
  std::uniform_real_distribution<double> tau_h(50.0, 90.0);   // thermal time constant
  std::uniform_real_distribution<double> cop_dist(2.2, 3.0);
  const double ua = u_value(rng) * floor_area / 1000.0;       // kW/K
  const double tau = tau_h(rng);
  const double cop = cop_dist(rng);
  const double gains_kw = 0.25 + 0.0015 * floor_area;

  BuildingParams p;
  p.id = id;
  p.floor_area_m2 = floor_area;
  p.a = std::exp(-dt_h / tau);
  p.b = 1.0 - p.a;
  p.c = (1.0 - p.a) * cop / ua;
  p.d = (1.0 - p.a) * gains_kw / ua;
  p.p_hvac_kw = std::round(10.0 * 1.4 * ua * (21.0 - kDesignTempC) / cop) / 10.0;
  p.e_cap_kwh = bess;
  p.p_max_kw = std::round(10.0 * bess / 2.7) / 10.0;
  p.p_min_kw = -p.p_max_kw;
  p.soc_min = 0.1;
  p.soc_max = 0.9;
  p.t_min_c = 20.0;
  p.t_max_c = 24.0;
  return p;
}

}  // namespace

Scenario load_scenario(const fs::path& building_meta_path, const fs::path& timeseries_dir,
                       std::string label) {
  const std::string meta_name = building_meta_path.filename().string();
  const csv::Table meta = csv::read_file(building_meta_path);
  const char* meta_cols[] = {"id", "floor_area_m2", "bess_kwh", "p_hvac_kw", "a", "b", "c",
                             "d", "p_min_kw", "p_max_kw", "soc_min", "soc_max", "t_min_c",
                             "t_max_c"};
  std::array<std::size_t, 14> idx{};
  for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = meta.column(meta_cols[j], meta_name);
  if (meta.rows.empty()) fail(ErrorCode::EmptyDistrict, meta_name + " lists no buildings");

  Scenario scenario;
  scenario.label = std::move(label);
  for (std::size_t r = 0; r < meta.rows.size(); ++r) {
    const auto& row = meta.rows[r];
    const std::string ctx = meta_name + " row " + std::to_string(r + 1);
    auto num = [&](std::size_t j) { return csv::parse_double(row[idx[j]], ctx + " " + meta_cols[j]); };
    BuildingParams p;
    const double id = num(0);
    if (id != std::floor(id) || id < 0) fail(ErrorCode::InvariantViolation, ctx + ": id must be a nonnegative integer");
    p.id = static_cast<int>(id);
    p.floor_area_m2 = num(1);
    p.e_cap_kwh = num(2);
    p.p_hvac_kw = num(3);
    p.a = num(4);
    p.b = num(5);
    p.c = num(6);
    p.d = num(7);
    p.p_min_kw = num(8);
    p.p_max_kw = num(9);
    p.soc_min = num(10);
    p.soc_max = num(11);
    p.t_min_c = num(12);
    p.t_max_c = num(13);
    try {
      validate(p);
    } catch (const Error& e) {
      fail(ErrorCode::InvariantViolation, ctx + " (id " + std::to_string(p.id) + "): " + e.detail());
    }
    scenario.buildings.push_back(p);
    scenario.initial_states.push_back(default_initial_state(p));
  }

  std::vector<std::int64_t> reference_times;
  for (const auto& p : scenario.buildings) {
    const fs::path path = series_path(timeseries_dir, p.id);
    const std::string name = path.filename().string();
    const csv::Table table = csv::read_file(path);
    const std::size_t c_ts = table.column("timestamp", name);
    const std::size_t c_tout = table.column("t_out_c", name);
    const std::size_t c_base = table.column("base_load_kwh", name);
    const std::size_t c_pv = table.column("pv_kwh", name);

    std::vector<Disturbance> series;
    std::vector<std::int64_t> times;
    series.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const auto& row = table.rows[r];
      const std::string ctx = name + " row " + std::to_string(r + 1);
      Disturbance d;
      const std::int64_t t = parse_iso8601(row[c_ts]);
      times.push_back(t);
      d.hour_of_day = hour_of_day(t);
      d.t_out_c = csv::parse_double(row[c_tout], ctx + " t_out_c");
      d.base_load_kwh = csv::parse_double(row[c_base], ctx + " base_load_kwh");
      d.pv_kwh = csv::parse_double(row[c_pv], ctx + " pv_kwh");
      if (!std::isfinite(d.t_out_c)) fail(ErrorCode::InvariantViolation, ctx + ": t_out_c must be finite");
      if (!(d.base_load_kwh >= 0.0) || !std::isfinite(d.base_load_kwh)) {
        fail(ErrorCode::InvariantViolation, ctx + ": base_load_kwh must be >= 0");
      }
      if (!(d.pv_kwh >= 0.0) || !std::isfinite(d.pv_kwh)) {
        fail(ErrorCode::InvariantViolation, ctx + ": pv_kwh must be >= 0");
      }
      series.push_back(d);
    }
    if (series.empty()) fail(ErrorCode::RaggedSeries, name + " has no rows");

    if (reference_times.empty()) {
      reference_times = times;
      scenario.calendar.start = format_iso8601(times.front());
      scenario.calendar.dt_h = times.size() >= 2 ? static_cast<double>(times[1] - times[0]) / 3600.0 : 1.0;
      if (!(scenario.calendar.dt_h > 0.0)) fail(ErrorCode::InvariantViolation, name + ": timestamps must increase");
      const auto step = static_cast<std::int64_t>(std::llround(scenario.calendar.dt_h * 3600.0));
      for (std::size_t k = 0; k < times.size(); ++k) {
        if (times[k] != times.front() + static_cast<std::int64_t>(k) * step) {
          fail(ErrorCode::InvariantViolation, name + " row " + std::to_string(k + 1) + ": timestamp off the calendar");
        }
      }
    } else if (times.size() != reference_times.size()) {
      fail(ErrorCode::RaggedSeries, name + " has " + std::to_string(times.size()) +
                                        " rows, expected " + std::to_string(reference_times.size()));
    } else if (times != reference_times) {
      fail(ErrorCode::InvariantViolation, name + ": timestamps differ from the other series");
    }
    scenario.disturbances.push_back(std::move(series));
  }
  validate(scenario);
  return scenario;
}

Scenario load_scenario_dir(const fs::path& dir, std::string label) {
  return load_scenario(dir / "meta.csv", dir, std::move(label));
}

void write_scenario(const Scenario& scenario, const fs::path& dir) {
  validate(scenario);
  fs::create_directories(dir);
  std::string meta = std::string(kMetaHeader) + "\n";
  for (const auto& p : scenario.buildings) {
    meta += csv::join_row({std::to_string(p.id), csv::format_double(p.floor_area_m2),
                           csv::format_double(p.e_cap_kwh), csv::format_double(p.p_hvac_kw),
                           csv::format_double(p.a), csv::format_double(p.b),
                           csv::format_double(p.c), csv::format_double(p.d),
                           csv::format_double(p.p_min_kw), csv::format_double(p.p_max_kw),
                           csv::format_double(p.soc_min), csv::format_double(p.soc_max),
                           csv::format_double(p.t_min_c), csv::format_double(p.t_max_c)});
  }
  csv::write_file(meta_path_name(dir), meta);

  const std::int64_t t0 = parse_iso8601(scenario.calendar.start);
  const auto step = static_cast<std::int64_t>(std::llround(scenario.calendar.dt_h * 3600.0));
  for (std::size_t i = 0; i < scenario.num_buildings(); ++i) {
    std::string out = std::string(kSeriesHeader) + "\n";
    const auto& series = scenario.disturbances[i];
    for (std::size_t k = 0; k < series.size(); ++k) {
      out += csv::join_row({format_iso8601(t0 + static_cast<std::int64_t>(k) * step),
                            csv::format_double(series[k].t_out_c),
                            csv::format_double(series[k].base_load_kwh),
                            csv::format_double(series[k].pv_kwh)});
    }
    csv::write_file(series_path(dir, scenario.buildings[i].id), out);
  }
}

Scenario generate_synthetic_scenario(std::size_t n_buildings, std::size_t days, std::uint64_t seed,
                                     const SyntheticOptions& options) {
  if (n_buildings < 1) fail(ErrorCode::EmptyDistrict, "n_buildings must be >= 1");
  if (days < 1) fail(ErrorCode::LengthMismatch, "days must be >= 1");
  constexpr double dt = 1.0;
  const std::size_t steps = days * 24;

  Scenario scenario;
  scenario.label = options.label;
  scenario.calendar.start = format_iso8601(parse_iso8601(options.start));
  scenario.calendar.dt_h = dt;
  const int start_hour = hour_of_day(parse_iso8601(scenario.calendar.start));

  std::mt19937_64 roster_rng(options.roster_seed.value_or(seed) ^ 0x5eedb0a7d15c0ULL);
  std::uniform_real_distribution<double> bess_dist(kMinBess, kMaxBess);
  std::uniform_int_distribution<std::size_t> area_pick(0, kReferenceRoster.size() - 1);
  std::uniform_real_distribution<double> pv_jitter(0.85, 1.0);
  std::uniform_real_distribution<double> load_jitter(0.85, 1.15);
  std::vector<double> pv_peak_kw(n_buildings);
  std::vector<double> base_mean_kwh(n_buildings);
  for (std::size_t i = 0; i < n_buildings; ++i) {
    double area = 0.0;
    double bess = 0.0;
    if (i < kReferenceRoster.size()) {
      area = kReferenceRoster[i].floor_area_m2;
      bess = kReferenceRoster[i].bess_kwh;
    } else {
      area = kReferenceRoster[area_pick(roster_rng)].floor_area_m2;
      bess = std::round(10.0 * bess_dist(roster_rng)) / 10.0;
    }
    scenario.buildings.push_back(sample_building(static_cast<int>(i), area, bess, roster_rng, dt));
    scenario.initial_states.push_back(default_initial_state(scenario.buildings.back()));
    // 2..14 kWp grows with floor area.
    pv_peak_kw[i] = std::clamp((2.0 + 12.0 * (area - 82.2) / (306.7 - 82.2)) * pv_jitter(roster_rng), 2.0, 14.0);
    base_mean_kwh[i] = (0.35 + 0.004 * area) * load_jitter(roster_rng);
  }

  std::mt19937_64 rng(seed ^ 0x77ea7e5ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> clearness(0.1, 1.0);

  const double phi = std::exp(-dt / 48.0);
  const double innovation = options.t_out_synoptic_sd_c * std::sqrt(1.0 - phi * phi);
  double synoptic = options.t_out_synoptic_sd_c * normal(rng);
  std::vector<double> t_out(steps);
  std::vector<double> daily_clear(days + 1);
  for (auto& c : daily_clear) c = clearness(rng);
  const double shape_norm = shape_mean();
  scenario.disturbances.assign(n_buildings, std::vector<Disturbance>(steps));
  for (std::size_t k = 0; k < steps; ++k) {
    const int hour = static_cast<int>((start_hour + k) % 24);
    const std::size_t day = (start_hour + k) / 24;
    t_out[k] = options.t_out_mean_c +
               options.t_out_diurnal_amp_c * std::sin(2.0 * std::numbers::pi * (hour - 9.0) / 24.0) +
               synoptic + 0.4 * normal(rng);
    synoptic = phi * synoptic + innovation * normal(rng);
    const double solar = std::max(0.0, std::sin(std::numbers::pi * (hour + 0.5 - 7.5) / 9.0));
    for (std::size_t i = 0; i < n_buildings; ++i) {
      Disturbance& d = scenario.disturbances[i][k];
      d.hour_of_day = hour;
      d.t_out_c = t_out[k];
      d.base_load_kwh = base_mean_kwh[i] * kBaseShape[hour] / shape_norm * std::exp(0.12 * normal(rng));
      d.pv_kwh = solar > 0.0 ? 0.5 * pv_peak_kw[i] * daily_clear[day] * solar * dt : 0.0;
    }
  }
  validate(scenario);
  return scenario;
}

TrainTestScenarios generate_train_test(std::size_t n_buildings, std::size_t train_days,
                                       std::size_t test_days, std::uint64_t seed) {
  SyntheticOptions train_opts;
  train_opts.t_out_mean_c = -8.0;
  train_opts.start = "2025-01-01T00:00:00";
  train_opts.label = "train";
  train_opts.roster_seed = seed;
  SyntheticOptions test_opts = train_opts;
  test_opts.t_out_mean_c = -6.0;
  test_opts.start = "2025-02-01T00:00:00";
  test_opts.label = "test";
  return {generate_synthetic_scenario(n_buildings, train_days, 2 * seed + 1, train_opts),
          generate_synthetic_scenario(n_buildings, test_days, 2 * seed + 2, test_opts)};
}

DistrictTrace compute_baseline(const Scenario& scenario, const RbcConfig& rbc) {
  RbcController controller(baseline_config(rbc));
  ReferenceSignal zero{std::vector<double>(scenario.num_steps(), 0.0)};
  return run_episode(scenario, controller, zero, 0);
}

ReferenceSignal build_reference(const DistrictTrace& baseline) {
  if (baseline.district_load.empty()) fail(ErrorCode::EmptyTrace, "baseline trace is empty");
  // Sorted summation makes the mean independent of time ordering, bit for bit.
  std::vector<double> sorted = baseline.district_load;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double y : sorted) sum += y;
  const double mean = sum / static_cast<double>(baseline.district_load.size());
  return ReferenceSignal{std::vector<double>(baseline.district_load.size(), mean)};
}

}  // namespace dflex
