#include "dflex/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "dflex/calendar.hpp"
#include "dflex/csv.hpp"
#include "dflex/error.hpp"
#include "dflex/hybrid.hpp"
#include "dflex/nn.hpp"
#include "dflex/scenario.hpp"
#include "dflex/sysid.hpp"

namespace dflex {

namespace fs = std::filesystem;

namespace {

// --- config parsing ---

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view value) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss{std::string(value)};
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& where, std::string_view value, const char* expected) {
  fail(ErrorCode::ConfigParse, where + ": '" + std::string(value) + "' is not " + expected);
}

double to_double(std::string_view v, const std::string& where) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out)) bad_value(where, v, "a number");
  return out;
}

template <class Int>
Int to_int(std::string_view v, const std::string& where) {
  Int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad_value(where, v, "an integer");
  return out;
}

bool to_bool(std::string_view v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(where, v, "a boolean");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

template <class Get>
Setter number(Get get) {
  return [get](ExperimentConfig& c, const std::string& v, const std::string& w) { get(c) = to_double(v, w); };
}

template <class T, class Get>
Setter integer(Get get) {
  return [get](ExperimentConfig& c, const std::string& v, const std::string& w) { get(c) = to_int<T>(v, w); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    t["scenario"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
      if (v != "synthetic" && v != "csv") bad_value(w, v, "'synthetic' or 'csv'");
      c.scenario = v;
    };
    t["scenario.train_dir"] = [](ExperimentConfig& c, const std::string& v, const std::string&) { c.train_dir = v; };
    t["scenario.test_dir"] = [](ExperimentConfig& c, const std::string& v, const std::string&) { c.test_dir = v; };
    t["synthetic.buildings"] = integer<std::size_t>([](ExperimentConfig& c) -> auto& { return c.buildings; });
    t["synthetic.train_days"] = integer<std::size_t>([](ExperimentConfig& c) -> auto& { return c.train_days; });
    t["synthetic.test_days"] = integer<std::size_t>([](ExperimentConfig& c) -> auto& { return c.test_days; });
    t["controllers"] = [](ExperimentConfig& c, const std::string& v, const std::string&) {
      c.controllers = split_list(v);
    };
    t["seeds"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
      c.seeds.clear();
      for (const auto& s : split_list(v)) c.seeds.push_back(to_int<std::uint64_t>(s, w));
    };
    t["evaluate_train"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
      c.evaluate_train = to_bool(v, w);
    };
    t["output"] = [](ExperimentConfig& c, const std::string& v, const std::string&) { c.output = v; };

    t["rbc.charge_start_hour"] = integer<int>([](ExperimentConfig& c) -> auto& { return c.rbc.charge_start_hour; });
    t["rbc.charge_end_hour"] = integer<int>([](ExperimentConfig& c) -> auto& { return c.rbc.charge_end_hour; });
    t["rbc.discharge_start_hour"] =
        integer<int>([](ExperimentConfig& c) -> auto& { return c.rbc.discharge_start_hour; });
    t["rbc.discharge_end_hour"] = integer<int>([](ExperimentConfig& c) -> auto& { return c.rbc.discharge_end_hour; });
    t["rbc.charge_rate"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
      c.rbc.charge_rate = to_double(v, w);
    };
    t["rbc.discharge_rate"] = [](ExperimentConfig& c, const std::string& v, const std::string& w) {
      c.rbc.discharge_rate = to_double(v, w);
    };
    t["rbc.hysteresis_low_c"] = number([](ExperimentConfig& c) -> auto& { return c.rbc.hysteresis_low_c; });
    t["rbc.hysteresis_high_c"] = number([](ExperimentConfig& c) -> auto& { return c.rbc.hysteresis_high_c; });

    t["mpc.horizon"] = integer<int>([](ExperimentConfig& c) -> auto& { return c.mpc.horizon; });
    t["mpc.w_track"] = number([](ExperimentConfig& c) -> auto& { return c.mpc.w_track; });
    t["mpc.w_comfort"] = number([](ExperimentConfig& c) -> auto& { return c.mpc.w_comfort; });
    t["mpc.w_slack"] = number([](ExperimentConfig& c) -> auto& { return c.mpc.w_slack; });
    t["mpc.w_ctrl"] = number([](ExperimentConfig& c) -> auto& { return c.mpc.w_ctrl; });
    t["mpc.eps_abs"] = number([](ExperimentConfig& c) -> auto& { return c.mpc.solver.eps_abs; });
    t["mpc.eps_rel"] = number([](ExperimentConfig& c) -> auto& { return c.mpc.solver.eps_rel; });
    t["mpc.max_iter"] = integer<int>([](ExperimentConfig& c) -> auto& { return c.mpc.solver.max_iter; });

    // Shared learner settings apply to both algorithms.
    auto both = [](auto field) {
      return [field](ExperimentConfig& c, const std::string& v, const std::string& w) {
        field(c.sac.rl, v, w);
        field(c.mappo.rl, v, w);
      };
    };
    auto rl_real = [&](double RlConfig::*m) {
      return both([m](RlConfig& r, const std::string& v, const std::string& w) { r.*m = to_double(v, w); });
    };
    t["rl.gamma"] = rl_real(&RlConfig::gamma);
    t["rl.alpha"] = rl_real(&RlConfig::alpha);
    t["rl.lambda"] = rl_real(&RlConfig::lambda);
    t["rl.clip"] = rl_real(&RlConfig::clip);
    t["rl.actor_lr"] = rl_real(&RlConfig::actor_lr);
    t["rl.critic_lr"] = rl_real(&RlConfig::critic_lr);
    t["rl.tau"] = rl_real(&RlConfig::tau);
    t["rl.batch"] = both([](RlConfig& r, const std::string& v, const std::string& w) { r.sac_batch = to_int<int>(v, w); });
    t["rl.replay_capacity"] = both([](RlConfig& r, const std::string& v, const std::string& w) {
      r.replay_capacity = to_int<std::size_t>(v, w);
    });
    t["rl.ppo_minibatch"] =
        both([](RlConfig& r, const std::string& v, const std::string& w) { r.ppo_minibatch = to_int<int>(v, w); });
    t["rl.ppo_epochs"] =
        both([](RlConfig& r, const std::string& v, const std::string& w) { r.ppo_epochs = to_int<int>(v, w); });
    t["rl.hidden"] = both([](RlConfig& r, const std::string& v, const std::string& w) {
      r.hidden.clear();
      for (const auto& s : split_list(v)) r.hidden.push_back(to_int<int>(s, w));
      if (r.hidden.empty()) bad_value(w, v, "a list of layer widths");
    });
    auto reward_real = [](double RewardConfig::*m) {
      return [m](ExperimentConfig& c, const std::string& v, const std::string& w) {
        c.sac.reward.*m = to_double(v, w);
        c.mappo.reward.*m = to_double(v, w);
      };
    };
    t["reward.w_track"] = reward_real(&RewardConfig::w_track);
    t["reward.w_comfort"] = reward_real(&RewardConfig::w_comfort);
    t["reward.delta_kwh"] = reward_real(&RewardConfig::delta_kwh);

    t["sac.episodes"] = integer<int>([](ExperimentConfig& c) -> auto& { return c.sac.episodes; });
    t["sac.episode_steps"] = integer<int>([](ExperimentConfig& c) -> auto& { return c.sac.episode_steps; });
    t["sac.updates_per_step"] = integer<int>([](ExperimentConfig& c) -> auto& { return c.sac.updates_per_step; });
    t["sac.reward_scale"] = number([](ExperimentConfig& c) -> auto& { return c.sac.reward_scale; });
    t["sac.checkpoint"] = [](ExperimentConfig& c, const std::string& v, const std::string&) {
      c.sac_checkpoint = fs::path(v);
    };
    t["mappo.iterations"] = integer<int>([](ExperimentConfig& c) -> auto& { return c.mappo.iterations; });
    t["mappo.episodes_per_iteration"] =
        integer<int>([](ExperimentConfig& c) -> auto& { return c.mappo.episodes_per_iteration; });
    t["mappo.episode_steps"] = integer<int>([](ExperimentConfig& c) -> auto& { return c.mappo.episode_steps; });
    t["mappo.init_log_std"] = number([](ExperimentConfig& c) -> auto& { return c.mappo.init_log_std; });
    t["mappo.reward_scale"] = number([](ExperimentConfig& c) -> auto& { return c.mappo.reward_scale; });
    return t;
  }();
  return table;
}

// --- pipeline helpers ---

struct Periods {
  Scenario train, test;
};

Periods build_scenarios(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.scenario == "csv") {
    return {load_scenario_dir(cfg.train_dir, "train"), load_scenario_dir(cfg.test_dir, "test")};
  }
  auto tt = generate_train_test(cfg.buildings, cfg.train_days, cfg.test_days, seed);
  return {std::move(tt.train), std::move(tt.test)};
}

bool wants(const ExperimentConfig& cfg, std::string_view name) {
  return std::find(cfg.controllers.begin(), cfg.controllers.end(), name) != cfg.controllers.end();
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string curve_csv(const std::vector<CurveRow>& curve) {
  std::string out = "episode,mean_reward,tracking_term,comfort_term\n";
  for (const auto& r : curve) {
    out += csv::join_row({std::to_string(r.episode), csv::format_double(r.mean_reward),
                          csv::format_double(r.tracking_term), csv::format_double(r.comfort_term)});
  }
  return out;
}

struct Evaluated {
  std::string controller;
  std::string period;
  DistrictTrace trace;
  MetricReport report;
};

// Long-format tables for external plotting.
void write_plot_tables(const std::vector<Evaluated>& runs, const std::map<std::string, const DistrictTrace*>& rbc,
                       const fs::path& dir) {
  std::string district = "controller,period,k,timestamp,y_kwh,r_kwh,p_total_kw\n";
  std::string exceed = "controller,period,building,exceedance_hours,exceedance_pct,kelvin_hours\n";
  std::string build = "controller,period,building,mean_load_kwh,mean_t_c,min_t_c,max_t_c,mean_soc,mean_u,mean_p_kw\n";
  std::string delta = "controller,period,k,building,delta_y_kwh\n";
  std::string sv = "controller,period,day,hour,sigma_kwh\n";
  for (const auto& run : runs) {
    const DistrictTrace& tr = run.trace;
    const std::int64_t t0 = parse_iso8601(tr.calendar_start);
    const auto step_s = static_cast<std::int64_t>(std::llround(tr.dt_h * 3600.0));
    for (std::size_t k = 0; k < tr.num_steps; ++k) {
      district += csv::join_row({run.controller, run.period, std::to_string(k),
                                 format_iso8601(t0 + static_cast<std::int64_t>(k) * step_s),
                                 csv::format_double(tr.district_load[k]), csv::format_double(tr.reference[k]),
                                 csv::format_double(tr.battery_total_kw(k))});
    }
    const auto& c = run.report.comfort;
    for (std::size_t i = 0; i < tr.num_buildings; ++i) {
      exceed += csv::join_row({run.controller, run.period, std::to_string(i), std::to_string(c.exceedance_hours[i]),
                               csv::format_double(c.exceedance_pct[i]), csv::format_double(c.kelvin_hours[i])});
      double load = 0, t = 0, tmin = 1e300, tmax = -1e300, soc = 0, u = 0, p = 0;
      for (std::size_t k = 0; k < tr.num_steps; ++k) {
        const auto& s = tr.state(k, i);
        load += s.y_kwh;
        t += s.t_c;
        tmin = std::min(tmin, s.t_c);
        tmax = std::max(tmax, s.t_c);
        soc += s.soc;
        u += tr.action(k, i).u;
        p += tr.action(k, i).p_batt_kw;
      }
      const auto kd = static_cast<double>(tr.num_steps);
      build += csv::join_row({run.controller, run.period, std::to_string(i), csv::format_double(load / kd),
                              csv::format_double(t / kd), csv::format_double(tmin), csv::format_double(tmax),
                              csv::format_double(soc / kd), csv::format_double(u / kd), csv::format_double(p / kd)});
    }
    const auto it = rbc.find(run.period);
    if (it != rbc.end() && run.report.sv) {
      const DistrictTrace& base = *it->second;
      for (std::size_t k = 0; k < tr.num_steps; ++k) {
        for (std::size_t i = 0; i < tr.num_buildings; ++i) {
          delta += csv::join_row({run.controller, run.period, std::to_string(k), std::to_string(i),
                                  csv::format_double(tr.state(k, i).y_kwh - base.state(k, i).y_kwh)});
        }
        const int hour = tr.num_buildings > 0 ? tr.disturbance(k, 0).hour_of_day : 0;
        const auto day = static_cast<std::size_t>(std::floor(static_cast<double>(k) * tr.dt_h / 24.0));
        sv += csv::join_row({run.controller, run.period, std::to_string(day), std::to_string(hour),
                             csv::format_double(run.report.sv->sigma[k])});
      }
    }
  }
  csv::write_file(dir / "plot_district.csv", district);
  csv::write_file(dir / "plot_exceedance.csv", exceed);
  csv::write_file(dir / "plot_buildings.csv", build);
  csv::write_file(dir / "plot_delta_heatmap.csv", delta);
  csv::write_file(dir / "plot_sv_heatmap.csv", sv);
}

std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

}  // namespace

// --- config ---

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
  ExperimentConfig cfg;
  std::stringstream ss{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const std::string where = std::string(source) + ":" + std::to_string(lineno);
    const auto eq = body.find('=');
    if (eq == std::string::npos) fail(ErrorCode::ConfigParse, where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) fail(ErrorCode::ConfigParse, where + ": unknown key '" + key + "'");
    if (value.empty()) fail(ErrorCode::ConfigParse, where + ": key '" + key + "' has no value");
    it->second(cfg, value, where + ": " + key);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::ConfigParse, path.string() + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.controllers.empty()) fail(ErrorCode::ConfigParse, "controllers: at least one controller is required");
  for (const auto& c : cfg.controllers) {
    if (std::find(kControllerNames.begin(), kControllerNames.end(), c) == kControllerNames.end()) {
      fail(ErrorCode::UnknownController, "'" + c + "' (expected rbc, mpc, sac, mappo or hybrid)");
    }
  }
  if (wants(cfg, "hybrid") && !wants(cfg, "sac") && !cfg.sac_checkpoint) {
    fail(ErrorCode::MissingDependency, "hybrid needs SAC policies: add sac to controllers or set sac.checkpoint");
  }
  if (cfg.seeds.empty()) fail(ErrorCode::ConfigParse, "seeds: at least one seed is required");
  if (cfg.scenario == "csv" && (cfg.train_dir.empty() || cfg.test_dir.empty())) {
    fail(ErrorCode::ConfigParse, "scenario.train_dir and scenario.test_dir are required for csv scenarios");
  }
  if (cfg.scenario == "synthetic" && (cfg.buildings < 1 || cfg.train_days < 2 || cfg.test_days < 1)) {
    fail(ErrorCode::ConfigParse, "synthetic: need at least one building, two train days and one test day");
  }
  if (cfg.output.empty()) fail(ErrorCode::ConfigParse, "output: must not be empty");
  try {
    validate(cfg.mpc);
    validate(cfg.sac.rl);
    validate(cfg.mappo.rl);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigParse, e.detail());
  }
}

fs::path artifact_dir(const ExperimentConfig& cfg) {
  const fs::path out(cfg.output);
  if (out.is_absolute()) return out;
  const char* root = std::getenv("DFLEX_ARTIFACT_ROOT");
  return (root && *root ? fs::path(root) : fs::path("artifacts")) / out;
}

// --- pipeline ---

ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& dir) {
  validate(cfg);
  fs::create_directories(dir);
  ExperimentResult result;
  result.dir = dir;

  for (const std::uint64_t seed : cfg.seeds) {
    const fs::path sd = dir / seed_dir_name(seed);
    fs::create_directories(sd);
    const Periods sc = build_scenarios(cfg, seed);
    const std::map<std::string, const Scenario*> scenarios{{"train", &sc.train}, {"test", &sc.test}};
    std::map<std::string, ReferenceSignal> refs;
    for (const auto& [period, s] : scenarios) refs[period] = build_reference(compute_baseline(*s, cfg.rbc));

    // RBC runs always: it anchors spatial variability and the RL observation statistics.
    std::map<std::string, DistrictTrace> rbc_traces;
    for (const auto& [period, s] : scenarios) {
      RbcController rbc(cfg.rbc);
      rbc_traces[period] = run_episode(*s, rbc, refs[period], seed);
    }
    const ObservationStats stats = fit_observation_stats(rbc_traces["train"]);

    std::optional<SacPolicies> sac;
    if (wants(cfg, "sac") || wants(cfg, "hybrid")) {
      if (cfg.sac_checkpoint) {
        sac = SacPolicies::from_checkpoint(nn::read_checkpoint(*cfg.sac_checkpoint));
      } else {
        SacTrainResult trained = train_sac(sc.train, refs["train"], stats, cfg.sac, seed);
        csv::write_file(sd / "curve_sac.csv", curve_csv(trained.curve));
        sac = std::move(trained.policies);
      }
      nn::write_checkpoint(sac->to_checkpoint(), sd / "sac.ckpt");
    }
    std::optional<MappoPolicies> mappo;
    if (wants(cfg, "mappo")) {
      MappoTrainResult trained = train_mappo(sc.train, refs["train"], stats, cfg.mappo, seed);
      csv::write_file(sd / "curve_mappo.csv", curve_csv(trained.curve));
      mappo = std::move(trained.policies);
      nn::write_checkpoint(mappo->to_checkpoint(), sd / "mappo.ckpt");
    }
    std::vector<ThermalFit> fits;
    if (wants(cfg, "mpc")) fits = identify_district(compute_baseline(sc.train, cfg.rbc), sc.train);

    std::vector<Evaluated> runs;
    std::vector<std::string> periods{"test"};
    if (cfg.evaluate_train) periods.insert(periods.begin(), "train");
    for (const auto& name : kControllerNames) {
      if (!wants(cfg, name)) continue;
      for (const auto& period : periods) {
        const Scenario& s = *scenarios.at(period);
        DistrictTrace tr;
        if (name == "rbc") {
          tr = rbc_traces[period];
        } else if (name == "mpc") {
          MpcController c(fits, cfg.mpc);
          tr = run_episode(s, c, refs[period], seed);
        } else if (name == "sac") {
          SacController c(*sac);
          tr = run_episode(s, c, refs[period], seed);
        } else if (name == "mappo") {
          MappoController c(*mappo);
          tr = run_episode(s, c, refs[period], seed);
        } else {
          HybridController c(*sac, cfg.mpc);
          tr = run_episode(s, c, refs[period], seed);
        }
        MetricReport rep = evaluate(tr, bands_of(s), &rbc_traces[period], name, period, seed);
        const std::string stem = name + "_" + period;
        write_trace_csv(tr, sd / ("trace_" + stem + ".csv"));
        csv::write_file(sd / ("metrics_" + stem + ".json"), to_json(rep).dump(2) + "\n");
        csv::write_file(sd / ("events_" + stem + ".log"), join_lines(tr.events));
        result.reports.push_back(rep);
        runs.push_back({name, period, std::move(tr), std::move(rep)});
      }
    }
    std::map<std::string, const DistrictTrace*> rbc_ptrs;
    for (const auto& [period, tr] : rbc_traces) rbc_ptrs[period] = &tr;
    write_plot_tables(runs, rbc_ptrs, sd);
  }

  std::string summary = summary_csv_header();
  for (const auto& r : result.reports) summary += summary_csv_row(r);
  csv::write_file(dir / "summary.csv", summary);

  nlohmann::json meta;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  meta["created_utc"] = format_iso8601(std::chrono::duration_cast<std::chrono::seconds>(now).count());
  meta["controllers"] = cfg.controllers;
  meta["seeds"] = cfg.seeds;
  meta["scenario"] = cfg.scenario;
  csv::write_file(dir / "metadata.json", meta.dump(2) + "\n");
  return result;
}

// --- report ---

std::string render_report(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::MissingArtifact, dir.string() + ": not an artifact directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.rfind("metrics_", 0) == 0 && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorCode::MissingArtifact, dir.string() + ": no metrics_*.json files");

  struct Acc {
    double nmbe = 0, cvrmse = 0, exceed = 0, kh = 0, sv = 0;
    int n = 0, n_sv = 0;
  };
  std::map<std::string, std::map<std::string, Acc>> acc;  // period -> controller
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MissingArtifact, f.string() + ": " + e.what());
    }
    MetricReport r;
    try {
      r = report_from_json(j);
    } catch (const Error& e) {
      fail(ErrorCode::MissingArtifact, f.string() + ": " + e.detail());
    }
    Acc& a = acc[r.period][r.controller];
    a.nmbe += r.nmbe;
    a.cvrmse += r.cvrmse;
    a.exceed += r.comfort.mean_exceedance_pct;
    a.kh += r.comfort.mean_kelvin_hours;
    ++a.n;
    if (r.sv) {
      a.sv += r.sv->sv_med;
      ++a.n_sv;
    }
  }

  std::ostringstream md;
  md << "# Experiment report\n";
  for (const char* period : {"train", "test"}) {
    const auto pit = acc.find(period);
    if (pit == acc.end()) continue;
    std::vector<std::string> order;
    for (const auto& name : kControllerNames) {
      if (pit->second.count(name)) order.push_back(name);
    }
    // Columns: |NMBE|, CVRMSE, exceedance, K.h, SV_med; lower is better for all.
    auto cell = [&](const std::string& c, int col) {
      const Acc& a = pit->second.at(c);
      switch (col) {
        case 0: return std::abs(a.nmbe / a.n);
        case 1: return a.cvrmse / a.n;
        case 2: return a.exceed / a.n;
        case 3: return a.kh / a.n;
        default: return a.n_sv ? a.sv / a.n_sv : std::nan("");
      }
    };
    double best[5];
    for (int col = 0; col < 5; ++col) {
      best[col] = std::numeric_limits<double>::infinity();
      for (const auto& c : order) {
        // RBC is the spatial-variability reference and scores zero by definition.
        if (col == 4 && c == "rbc") continue;
        const double v = cell(c, col);
        if (std::isfinite(v)) best[col] = std::min(best[col], v);
      }
    }
    md << "\n## " << (std::string(period) == "train" ? "Train" : "Test") << " period\n\n";
    md << "| Controller | Seeds | NMBE (%) | CVRMSE (%) | Exceed. (%) | K·h | SV_med (kWh) |\n";
    md << "|---|---|---|---|---|---|---|\n";
    for (const auto& c : order) {
      const Acc& a = pit->second.at(c);
      md << "| " << c << " | " << a.n;
      for (int col = 0; col < 5; ++col) {
        double v = cell(c, col);
        if (col == 0) v = a.nmbe / a.n;
        char buf[64];
        if (std::isnan(v)) {
          std::snprintf(buf, sizeof buf, "n/a");
        } else {
          std::snprintf(buf, sizeof buf, "%.2f", v);
        }
        const bool is_best = std::isfinite(cell(c, col)) && cell(c, col) == best[col] && !(col == 4 && c == "rbc");
        md << " | " << buf << (is_best ? " *" : "");
      }
      md << " |\n";
    }
  }
  md << "\n`*` best in column (smallest |NMBE|, CVRMSE, exceedance, K·h and SV_med). Values are means over seeds.\n";
  const std::string out = md.str();
  csv::write_file(dir / "report.md", out);
  return out;
}

}  // namespace dflex
