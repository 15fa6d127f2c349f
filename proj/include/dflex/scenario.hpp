#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "dflex/rbc.hpp"
#include "dflex/types.hpp"

namespace dflex {

inline constexpr const char* kMetaHeader =
    "id,floor_area_m2,bess_kwh,p_hvac_kw,a,b,c,d,p_min_kw,p_max_kw,soc_min,soc_max,t_min_c,t_max_c";
inline constexpr const char* kSeriesHeader = "timestamp,t_out_c,base_load_kwh,pv_kwh";

/// Reads `meta.csv`-style building metadata plus one `b{ID}.csv` per building
/// from `timeseries_dir`. Initial states default to mid-band / mid-SOC.
Scenario load_scenario(const std::filesystem::path& building_meta_path,
                       const std::filesystem::path& timeseries_dir, std::string label = {});

/// Loads `<dir>/meta.csv` and `<dir>/b{ID}.csv`.
Scenario load_scenario_dir(const std::filesystem::path& dir, std::string label = {});

/// Writes the directory layout read by load_scenario_dir.
void write_scenario(const Scenario& scenario, const std::filesystem::path& dir);

struct SyntheticOptions {
  double t_out_mean_c = -7.0;   // monthly mean outdoor temperature
  double t_out_diurnal_amp_c = 3.5;
  double t_out_synoptic_sd_c = 4.0;  // multi-day weather swings
  std::string start = "2025-01-01T00:00:00";
  std::string label = "synthetic";
  /// Seed for the building roster. Unset: derived from the weather seed, so
  /// train and test periods share a roster only if this is pinned.
  std::optional<std::uint64_t> roster_seed;
};

/// Cold-climate winter district. Building i < 25 takes floor area and BESS
/// capacity from the reference roster; further buildings are sampled.
Scenario generate_synthetic_scenario(std::size_t n_buildings, std::size_t days, std::uint64_t seed,
                                     const SyntheticOptions& options = {});

/// January-like and February-like periods over one shared roster.
struct TrainTestScenarios {
  Scenario train;
  Scenario test;
};
TrainTestScenarios generate_train_test(std::size_t n_buildings, std::size_t train_days,
                                       std::size_t test_days, std::uint64_t seed);

/// Thermostat HVAC with idle batteries (the RBC thermostat without its TOU schedule).
DistrictTrace compute_baseline(const Scenario& scenario, const RbcConfig& rbc = {});

/// Constant profile at the mean baseline district load.
ReferenceSignal build_reference(const DistrictTrace& baseline);

}  // namespace dflex
