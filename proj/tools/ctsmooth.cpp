#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ctsmooth/io.hpp"
#include "ctsmooth/pipeline.hpp"
#include "ctsmooth/verify.hpp"

using namespace ctsmooth;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kDiverged = 3, kCheckFailed = 4 };

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string sensors;
  std::string alignment;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "YAML run config")->check(CLI::ExistingFile);
  cmd->add_option("--preset", c.preset, "scenario preset")->check(CLI::IsMember(preset_names()));
  cmd->add_option("--seed", c.seed, "scenario seed");
  cmd->add_option("--out", c.out, "output directory (created if missing)");
  cmd->add_option("--sensors", c.sensors, "li, lic, l2i or l2ic")->check(CLI::IsMember({"li", "lic", "l2i", "l2ic"}));
  cmd->add_option("--alignment", c.alignment, "APE alignment")->check(CLI::IsMember({"none", "yaw", "se3"}));
}

// preset < data-dir config < --config < flags
RunConfig resolve(const Common& c, const std::string& data_dir) {
  RunConfig rc;
  if (!c.preset.empty()) rc.scenario = preset(c.preset);
  if (!data_dir.empty()) rc = load_run_config((fs::path(data_dir) / "config.yaml").string(), rc);
  if (!c.config.empty()) rc = load_run_config(c.config, rc);
  if (c.seed) {
    if (!data_dir.empty() && *c.seed != rc.scenario.seed)
      throw ConfigError("--seed", 0, "scenario.seed", "conflicts with the seed the data was generated with");
    rc.scenario.seed = *c.seed;
  }
  if (!c.sensors.empty()) rc.sensors = parse_sensor_suite(c.sensors);
  if (!c.alignment.empty()) rc.alignment = parse_alignment(c.alignment);
  apply_sensor_suite(rc);
  return rc;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir, ec.message()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw IoError(fmt::format("cannot write '{}'", path.string()));
}

int cmd_simulate(const Common& c, std::optional<double> imu_offset_ms, std::optional<double> duration) {
  RunConfig rc = resolve(c, "");
  if (imu_offset_ms) rc.scenario.true_imu_offset = *imu_offset_ms * 1e-3;
  if (duration) rc.scenario.trajectory.duration = *duration;
  const GroundTruthScenario sc = make_scenario(rc.scenario);
  rc.scenario.num_lidars = sc.config.num_lidars;
  const MeasurementLog log = generate_measurements(sc);

  ensure_dir(c.out);
  write_text(fs::path(c.out) / "config.yaml", emit_run_config(rc));
  std::vector<std::string> files{"config.yaml"};
  for (auto& f : save_log(c.out, log)) files.push_back(f);
  write_trajectory_csv((fs::path(c.out) / "groundtruth.csv").string(), truth_samples(sc));
  files.push_back("groundtruth.csv");
  write_manifest(c.out, rc, files);

  std::size_t points = 0;
  for (const auto& s : log.lidar) points += s.size();
  fmt::print("simulated '{}' seed {} for {:g} s: {} imu, {} lidar points in {} streams, {} camera frames -> {}\n",
             rc.scenario.name, rc.scenario.seed, rc.scenario.trajectory.duration, log.imu.size(), points,
             log.lidar.size(), log.camera.size(), c.out);
  return kOk;
}

struct EstimateFlags {
  std::string data;
  bool calibrate = false;
  std::string calibrate_ms;  // empty: start from zero
  std::optional<double> calibration_start;
  bool seed_at_truth = false;
  std::optional<double> duration;
};

int cmd_estimate(const Common& c, const EstimateFlags& f) {
  RunConfig rc = resolve(c, f.data);
  if (f.seed_at_truth) rc.seed_at_truth = true;
  if (f.duration) {
    if (!f.data.empty()) throw ConfigError("--duration", 0, "scenario.duration", "cannot be changed with --data");
    rc.scenario.trajectory.duration = *f.duration;
  }
  const OffsetTruth truth{rc.scenario.true_imu_offset, rc.scenario.true_cam_offset};
  if (f.calibrate) {
    rc.smoother.estimate_imu_offset = true;
    rc.smoother.estimate_cam_offset = rc.smoother.use_camera;
    if (f.calibrate_ms.empty()) {
      rc.smoother.initial_imu_offset = 0.0;
      rc.smoother.initial_cam_offset = 0.0;
    } else {
      double ms = 0.0;
      try {
        ms = std::stod(f.calibrate_ms);
      } catch (const std::exception&) {
        throw ConfigError("--calibrate-timeoffset", 0, "smoother.initial_imu_offset", "expected milliseconds");
      }
      rc.smoother.initial_imu_offset = truth.imu - ms * 1e-3;
      rc.smoother.initial_cam_offset = truth.cam - ms * 1e-3;
    }
    if (f.calibration_start) rc.smoother.calibration_start = *f.calibration_start;
    for (double v : {rc.smoother.initial_imu_offset, rc.smoother.initial_cam_offset})
      if (std::abs(v) > rc.smoother.max_abs_offset)
        throw ConfigError("--calibrate-timeoffset", 0, "smoother.initial_imu_offset",
                          fmt::format("initial offset {:g} s exceeds max_abs_offset", v));
  } else if (!rc.seed_at_truth) {
    // Without calibration the offsets are taken as known.
    rc.smoother.initial_imu_offset = truth.imu;
    rc.smoother.initial_cam_offset = truth.cam;
  }

  const GroundTruthScenario sc = make_scenario(rc.scenario);
  MeasurementLog log;
  if (!f.data.empty()) {
    const auto bad = verify_manifest(f.data);
    if (!bad.empty()) throw IoError(fmt::format("checksum mismatch in '{}': {}", f.data, bad.front()));
    log = load_log(f.data, sc.config.num_lidars);
  } else {
    log = generate_measurements(sc);
  }

  const PipelineResult r = run_pipeline(sc, log, rc.smoother, rc.seed_at_truth);
  ensure_dir(c.out);
  write_trajectory_csv((fs::path(c.out) / "trajectory.csv").string(), r.estimate);
  write_diagnostics_csv((fs::path(c.out) / "diagnostics.csv").string(), r.diagnostics);
  write_text(fs::path(c.out) / "metrics.json", metrics_json(r, rc, truth));

  fmt::print("windows {}  ape[none] {:.3e}  ape[yaw] {:.3e}  ape[se3] {:.3e} m\n", r.windows, r.ape_none, r.ape_yaw,
             r.ape_se3);
  if (rc.smoother.estimate_imu_offset)
    fmt::print("imu offset {:.3f} ms (truth {:.3f}, error {:+.3f})\n", 1e3 * r.imu_offset, 1e3 * truth.imu,
               1e3 * (r.imu_offset - truth.imu));
  if (rc.smoother.estimate_cam_offset)
    fmt::print("cam offset {:.3f} ms (truth {:.3f}, error {:+.3f})\n", 1e3 * r.cam_offset, 1e3 * truth.cam,
               1e3 * (r.cam_offset - truth.cam));
  fmt::print("wall {:.2f} s for {:g} s of data (map {:.2f}, solve {:.2f}, marginalize {:.2f}, other {:.2f})\n",
             r.wall_time, rc.scenario.trajectory.duration, r.timings.update_local_map, r.timings.update_trajectory,
             r.timings.update_prior, r.timings.others);
  if (r.degenerate_windows > 0 || r.rank_deficient_windows > 0)
    fmt::print(stderr, "warning: {} LiDAR-degenerate windows, {} rank-deficient windows (see diagnostics.csv)\n",
               r.degenerate_windows, r.rank_deficient_windows);
  return kOk;
}

std::optional<FactorType> parse_factor(const std::string& name) {
  if (name.empty()) return std::nullopt;
  for (int t = 0; t < kNumFactorTypes; ++t)
    if (factor_type_name(FactorType(t)) == name) return FactorType(t);
  throw ConfigError("--corrupt", 0, "corrupt", fmt::format("unknown factor type '{}'", name));
}

int cmd_check_jacobians(std::uint64_t seed, int trials, const std::string& corrupt) {
  const auto bad = parse_factor(corrupt);
  if (trials == 0) {
    fmt::print(stderr, "warning: 0 trials requested; nothing checked\n");
    fmt::print("PASS (vacuous)\n");
    return kOk;
  }
  const JacobianSuiteReport rep = run_jacobian_suite(seed, trials, bad);
  for (const auto& s : rep.per_type) {
    const bool ok = s.failures == 0 && s.unevaluated == 0;
    fmt::print("{:<9} {:>5} trials  max rel {:.2e}  max abs {:.2e}  {}{}\n", factor_type_name(s.type), s.trials,
               s.max_rel_err, s.max_abs_err, ok ? "pass" : fmt::format("FAIL ({} failed", s.failures),
               ok ? "" : fmt::format(", {} unevaluated; worst block {})", s.unevaluated, s.worst_block));
  }
  fmt::print("{}\n", rep.pass() ? "PASS" : "FAIL");
  return rep.pass() ? kOk : kCheckFailed;
}

int cmd_check_marginalization(std::uint64_t seed, int chains, bool unconstrained) {
  const MarginalizationCheckReport rep = run_marginalization_check(seed, chains);
  fmt::print("hand case: H^ = {:.17g}, b^ = {:.17g} ({})\n", rep.hand_h, rep.hand_b,
             rep.hand_case_pass ? "exact" : "MISMATCH");
  fmt::print("{} chains: max |fixed-lag - batch| = {:.3e} (tol 1e-8)\n", rep.chains, rep.max_discrepancy);
  bool ok = rep.pass();
  if (unconstrained) {
    ChainOptions opt;
    opt.unconstrained_block = true;
    double worst = 0.0;
    int warnings = 0;
    for (int i = 0; i < std::max(chains, 1); ++i)
      worst = std::max(worst, linear_chain_discrepancy(seed + 1000 + i, opt, &warnings));
    fmt::print("unconstrained dropped blocks: {} singular warnings, max discrepancy {:.3e}\n", warnings, worst);
    ok = ok && worst <= 1e-8;
  }
  if (rep.singular_warnings > 0) fmt::print(stderr, "warning: {} singular marginalizations\n", rep.singular_warnings);
  fmt::print("{}\n", ok ? "PASS" : "FAIL");
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time LiDAR-inertial-camera fixed-lag smoother"};
  app.require_subcommand(1);

  Common sim_c, est_c;
  std::optional<double> sim_offset_ms, sim_duration;
  auto* sim = app.add_subcommand("simulate", "generate a scenario and write its measurement log");
  add_common(sim, sim_c);
  sim->add_option("--imu-offset", sim_offset_ms, "true IMU time offset (ms)");
  sim->add_option("--duration", sim_duration, "trajectory duration (s)")->check(CLI::Range(1.0, 3600.0));

  EstimateFlags ef;
  auto* est = app.add_subcommand("estimate", "run the smoother and write trajectory, metrics and diagnostics");
  add_common(est, est_c);
  est->add_option("--data", ef.data, "directory written by simulate (otherwise simulated in memory)")
      ->check(CLI::ExistingDirectory);
  auto* cal = est->add_option("--calibrate-timeoffset", ef.calibrate_ms,
                              "estimate time offsets; optional value: initial error (ms) w.r.t. truth");
  cal->expected(0, 1);
  est->add_option("--calibration-start", ef.calibration_start, "seconds of data before offsets are estimated")
      ->check(CLI::NonNegativeNumber);
  est->add_flag("--seed-at-truth", ef.seed_at_truth, "initialize every control point at ground truth");
  est->add_option("--duration", ef.duration, "trajectory duration (s)")->check(CLI::Range(1.0, 3600.0));

  std::uint64_t jac_seed = 1;
  int trials = 500;
  std::string corrupt;
  auto* jac = app.add_subcommand("check-jacobians", "finite-difference check of every factor Jacobian");
  jac->add_option("--seed", jac_seed, "RNG seed");
  jac->add_option("--trials", trials, "random configurations per factor type")->check(CLI::NonNegativeNumber);
  jac->add_option("--corrupt", corrupt)->group("");  // test hook

  std::uint64_t marg_seed = 1;
  int chains = 20;
  bool unconstrained = false;
  auto* marg = app.add_subcommand("check-marginalization", "fixed-lag vs batch on random linear-Gaussian chains");
  marg->add_option("--seed", marg_seed, "RNG seed");
  marg->add_option("--chains", chains, "random chains to compare")->check(CLI::NonNegativeNumber);
  marg->add_flag("--unconstrained", unconstrained, "also run chains with an unconstrained dropped block");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  ef.calibrate = cal->count() > 0;

  try {
    if (*sim) return cmd_simulate(sim_c, sim_offset_ms, sim_duration);
    if (*est) return cmd_estimate(est_c, ef);
    if (*jac) return cmd_check_jacobians(jac_seed, trials, corrupt);
    if (*marg) return cmd_check_marginalization(marg_seed, chains, unconstrained);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfig;
  } catch (const IoError& e) {
    fmt::print(stderr, "I/O error: {}\n", e.what());
    return kIo;
  } catch (const InitializationError& e) {
    fmt::print(stderr, "estimation failed during initialization: {}\n", e.what());
    return kDiverged;
  } catch (const EstimationError& e) {
    fmt::print(stderr, "estimation failed at window {}: {}\n", e.window(), e.what());
    return kDiverged;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kIo;
  }
  return kOk;
}
