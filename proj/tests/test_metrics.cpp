#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <random>
#include <vector>

#include "dflex/error.hpp"
#include "dflex/metrics.hpp"
#include "dflex/rbc.hpp"
#include "dflex/scenario.hpp"
#include "metrics_oracle.hpp"
#include "test_util.hpp"

using namespace dflex;

namespace {

DistrictTrace temperature_trace(const std::vector<double>& temps, double dt_h = 1.0) {
  DistrictTrace tr;
  tr.num_buildings = 1;
  tr.num_steps = temps.size();
  tr.dt_h = dt_h;
  for (double t : temps) {
    tr.states.push_back({t, 0.5, 1.0});
    tr.actions.push_back({});
    tr.disturbances.push_back({});
    tr.district_load.push_back(1.0);
    tr.reference.push_back(1.0);
  }
  return tr;
}

DistrictTrace load_trace(const std::vector<std::vector<double>>& y_by_step) {
  DistrictTrace tr;
  tr.num_buildings = y_by_step.front().size();
  tr.num_steps = y_by_step.size();
  for (const auto& row : y_by_step) {
    for (double y : row) {
      tr.states.push_back({22.0, 0.5, y});
      tr.actions.push_back({});
      tr.disturbances.push_back({});
    }
    tr.district_load.push_back(std::accumulate(row.begin(), row.end(), 0.0));
    tr.reference.push_back(1.0);
  }
  return tr;
}

}  // namespace

TEST_CASE("nmbe examples") {
  const std::vector<double> r3(3, 100.0);
  const std::vector<double> a{110, 100, 90};
  CHECK(nmbe(a, r3) == doctest::Approx(0.0));
  CHECK(nmbe(r3, r3) == 0.0);
  const std::vector<double> y2{120, 120};
  const std::vector<double> r2(2, 100.0);
  CHECK(nmbe(y2, r2) == doctest::Approx(20.0).epsilon(1e-14));
}

TEST_CASE("cvrmse examples") {
  const std::vector<double> r2(2, 100.0);
  const std::vector<double> y{110, 90};
  CHECK(cvrmse(y, r2) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(cvrmse(r2, r2) == 0.0);
  const std::vector<double> r{80, 120, 100};
  const std::vector<double> shifted{90, 130, 110};
  CHECK(cvrmse(shifted, r) == doctest::Approx(10.0).epsilon(1e-14));
}

TEST_CASE("tracking metric errors") {
  const std::vector<double> a{1, 2};
  const std::vector<double> b{1, 2, 3};
  const std::vector<double> zero{1, -1};
  CHECK(test::code_of([&] { nmbe(a, b); }) == ErrorCode::LengthMismatch);
  CHECK(test::code_of([&] { cvrmse(a, b); }) == ErrorCode::LengthMismatch);
  CHECK(test::code_of([&] { nmbe(a, zero); }) == ErrorCode::ZeroReferenceMean);
  CHECK(test::code_of([&] { cvrmse(a, zero); }) == ErrorCode::ZeroReferenceMean);
}

TEST_CASE("comfort metric examples") {
  const std::vector<ComfortBand> band{{20.0, 24.0}};
  const auto ok = comfort_metrics(temperature_trace(std::vector<double>(10, 22.0)), band);
  CHECK(ok.exceedance_hours[0] == 0);
  CHECK(ok.mean_exceedance_pct == 0.0);
  CHECK(ok.mean_kelvin_hours == 0.0);

  std::vector<double> temps(28, 22.0);
  for (int k = 0; k < 7; ++k) temps[static_cast<std::size_t>(3 * k)] = 19.0;
  const auto m = comfort_metrics(temperature_trace(temps), band);
  CHECK(m.exceedance_hours[0] == 7);
  CHECK(m.exceedance_pct[0] == doctest::Approx(25.0));
  CHECK(m.mean_kelvin_hours == doctest::Approx(7.0));

  const auto one = comfort_metrics(temperature_trace({25.5}), band);
  CHECK(one.kelvin_hours[0] == doctest::Approx(1.5));

  const auto half = comfort_metrics(temperature_trace({18.0, 22.0}, 0.5), band);
  CHECK(half.kelvin_hours[0] == doctest::Approx(1.0));
}

TEST_CASE("band edges are not violations") {
  const auto m = comfort_metrics(temperature_trace({20.0, 24.0}), {{20.0, 24.0}});
  CHECK(m.exceedance_hours[0] == 0);
}

TEST_CASE("comfort metric errors") {
  DistrictTrace empty;
  empty.num_buildings = 1;
  CHECK(test::code_of([&] { comfort_metrics(empty, {{20, 24}}); }) == ErrorCode::EmptyTrace);
  CHECK(test::code_of([&] { comfort_metrics(temperature_trace({22}), {}); }) ==
        ErrorCode::RosterMismatch);
}

TEST_CASE("spatial variability examples") {
  const auto rbc = load_trace({{1.0, 1.0}, {2.0, 3.0}});
  const auto same = spatial_variability(rbc, rbc);
  CHECK(same.sv_med == 0.0);
  CHECK(same.sigma == std::vector<double>{0.0, 0.0});

  const auto ctrl = load_trace({{2.0, 0.0}, {2.0, 3.0}});
  const auto sv = spatial_variability(ctrl, rbc);
  CHECK(sv.sigma[0] == doctest::Approx(1.0));
  CHECK(sv.sigma[1] == 0.0);

  CHECK(median({0.0, 2.0, 4.0}) == 2.0);
  CHECK(median({4.0, 0.0, 3.0, 1.0}) == 2.0);
}

TEST_CASE("spatial variability errors") {
  const auto a = load_trace({{1.0, 1.0}, {2.0, 3.0}});
  const auto b3 = load_trace({{1.0, 1.0, 1.0}, {2.0, 3.0, 1.0}});
  const auto short_b = load_trace({{1.0, 1.0}});
  CHECK(test::code_of([&] { spatial_variability(a, b3); }) == ErrorCode::RosterMismatch);
  CHECK(test::code_of([&] { spatial_variability(a, short_b); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("metrics match naive references on random traces") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> nn(1, 10);
  std::uniform_int_distribution<std::size_t> kk(1, 100);
  const std::vector<ComfortBand> band10(10, {20.0, 24.0});
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = nn(rng);
    const auto ctrl = test::random_trace(rng, n, kk(rng));
    const auto rbc = test::random_companion(rng, ctrl);
    const std::vector<ComfortBand> bands(band10.begin(), band10.begin() + static_cast<long>(n));
    const auto want = test::naive_metrics(ctrl, rbc, bands);
    const auto got = evaluate(ctrl, bands, &rbc, "x", "test", 0);
    CHECK(std::abs(got.nmbe - want.nmbe) <= 1e-10);
    CHECK(std::abs(got.cvrmse - want.cvrmse) <= 1e-10);
    CHECK(std::abs(got.comfort.mean_exceedance_pct - want.mean_exceed_pct) <= 1e-10);
    CHECK(std::abs(got.comfort.mean_kelvin_hours - want.mean_kelvin_hours) <= 1e-10);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(got.comfort.kelvin_hours[i] - want.kelvin_hours[i]) <= 1e-10);
      CHECK(std::abs(got.comfort.exceedance_pct[i] - want.exceed_pct[i]) <= 1e-10);
    }
    REQUIRE(got.sv);
    CHECK(got.sv->sigma.size() == ctrl.num_steps);
    for (std::size_t k = 0; k < ctrl.num_steps; ++k) {
      CHECK(std::abs(got.sv->sigma[k] - want.sigma[k]) <= 1e-10);
    }
    CHECK(std::abs(got.sv->sv_med - want.sv_med) <= 1e-10);
  }
}

TEST_CASE("tracking metrics are scale covariant and shift exactly") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(50.0, 150.0);
  std::uniform_real_distribution<double> alpha(0.01, 100.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> y(40), r(40);
    for (auto& v : y) v = u(rng);
    for (auto& v : r) v = u(rng);
    const double a = alpha(rng);
    std::vector<double> ys(y), rs(r), yc(y);
    for (auto& v : ys) v *= a;
    for (auto& v : rs) v *= a;
    CHECK(nmbe(ys, rs) == doctest::Approx(nmbe(y, r)).epsilon(1e-10));
    CHECK(cvrmse(ys, rs) == doctest::Approx(cvrmse(y, r)).epsilon(1e-10));
    const double c = u(rng) - 100.0;
    for (auto& v : yc) v += c;
    const double rmean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
    CHECK(nmbe(yc, r) - nmbe(y, r) == doctest::Approx(100.0 * c / rmean).epsilon(1e-9));
  }
}

TEST_CASE("building permutation leaves sigma unchanged") {
  std::mt19937_64 rng(8);
  const auto ctrl = test::random_trace(rng, 7, 30);
  const auto rbc = test::random_companion(rng, ctrl);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permute = [&](const DistrictTrace& t) {
    DistrictTrace o = t;
    for (std::size_t k = 0; k < t.num_steps; ++k) {
      for (std::size_t i = 0; i < 7; ++i) o.states[k * 7 + i] = t.states[k * 7 + perm[i]];
    }
    return o;
  };
  const auto a = spatial_variability(ctrl, rbc);
  const auto b = spatial_variability(permute(ctrl), permute(rbc));
  for (std::size_t k = 0; k < a.sigma.size(); ++k) {
    CHECK(b.sigma[k] == doctest::Approx(a.sigma[k]).epsilon(1e-12));
  }
}

TEST_CASE("metric report json round trip and summary row") {
  std::mt19937_64 rng(3);
  const auto ctrl = test::random_trace(rng, 3, 12);
  const auto rbc = test::random_companion(rng, ctrl);
  const std::vector<ComfortBand> bands(3, {20.0, 24.0});
  const auto rep = evaluate(ctrl, bands, &rbc, "mpc", "test", 42);
  const auto back = report_from_json(nlohmann::json::parse(to_json(rep).dump()));
  CHECK(back.controller == "mpc");
  CHECK(back.seed == 42);
  CHECK(back.nmbe == rep.nmbe);
  CHECK(back.comfort.kelvin_hours == rep.comfort.kelvin_hours);
  REQUIRE(back.sv);
  CHECK(back.sv->sv_med == rep.sv->sv_med);

  const auto no_sv = evaluate(ctrl, bands, nullptr, "rbc", "train", 1);
  CHECK_FALSE(report_from_json(to_json(no_sv)).sv);
  const std::string row = summary_csv_row(no_sv);
  CHECK(row.rfind("rbc,train,1,", 0) == 0);
  CHECK(row.substr(row.size() - 2) == ",\n");

  nlohmann::json bad = to_json(rep);
  bad.erase("nmbe_pct");
  CHECK(test::code_of([&] { report_from_json(bad); }) == ErrorCode::MissingArtifact);
}

TEST_CASE("trace csv round trip preserves every metric") {
  auto sc = generate_synthetic_scenario(3, 2, 4);
  RbcController rbc;
  auto ref = build_reference(compute_baseline(sc));
  const auto tr = run_episode(sc, rbc, ref, 0);
  const auto path = std::filesystem::temp_directory_path() / "dflex_trace_roundtrip.csv";
  write_trace_csv(tr, path);
  const auto back = read_trace_csv(path);
  std::filesystem::remove(path);
  REQUIRE(back.num_steps == tr.num_steps);
  REQUIRE(back.num_buildings == 3);
  CHECK(back.calendar_start == tr.calendar_start);
  CHECK(back.district_load == tr.district_load);
  const auto bands = bands_of(sc);
  const auto a = evaluate(tr, bands, &tr, "rbc", "test", 0);
  const auto b = evaluate(back, bands, &back, "rbc", "test", 0);
  CHECK(a.nmbe == b.nmbe);
  CHECK(a.cvrmse == b.cvrmse);
  CHECK(a.comfort.kelvin_hours == b.comfort.kelvin_hours);
  CHECK(a.comfort.exceedance_hours == b.comfort.exceedance_hours);
  for (std::size_t j = 0; j < tr.states.size(); ++j) {
    CHECK(back.states[j].t_c == tr.states[j].t_c);
    CHECK(back.actions[j].p_batt_kw == tr.actions[j].p_batt_kw);
    CHECK(back.disturbances[j].hour_of_day == tr.disturbances[j].hour_of_day);
  }
}
