// Acceptance suite: one line per criterion. Exit status is nonzero iff a hard criterion fails.
//   ctsmooth_acceptance [--only N]...

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "ctsmooth/pipeline.hpp"
#include "ctsmooth/spline.hpp"
#include "ctsmooth/verify.hpp"

using namespace ctsmooth;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double time_limit;  // s
  bool soft;
  std::function<Outcome()> run;
};

using Clock = std::chrono::steady_clock;

// Pinned thresholds.
constexpr double kJacRel = 1e-5, kJacAbs = 1e-8;
constexpr int kJacTrials = 500;
constexpr double kMargTol = 1e-8;
constexpr int kMargChains = 20;
constexpr double kZeroCost = 1e-8, kZeroApe = 1e-4;
constexpr double kNoisyApe = 0.02;  // pilot runs: 4.7e-4 m (30 s, seed 7)
constexpr double kOffsetErr = 3e-3, kCalibStart = 5.0, kConvergeWithin = 3.0;
constexpr double kPerPointResidual = 1e-9, kDistortionContrast = 1e-6;
constexpr double kContinuity = 1e-10, kDerivRel = 1e-5;
constexpr int kSplineSamples = 10000;

ScenarioConfig desk_viral(bool zero_noise, double duration = 30.0) {
  ScenarioConfig c = preset(zero_noise ? "desk-viral-zero" : "desk-viral");
  c.trajectory.duration = duration;
  return c;
}

Outcome jacobian_suite() {
  const JacobianSuiteReport rep = run_jacobian_suite(1, kJacTrials);
  double worst_rel = 0.0;
  std::string worst = "-";
  int failures = 0, checked = 0;
  for (const auto& s : rep.per_type) {
    failures += s.failures + s.unevaluated;
    checked += s.trials;
    if (s.max_rel_err >= worst_rel) {
      worst_rel = s.max_rel_err;
      worst = fmt::format("{}:{}", factor_type_name(s.type), s.worst_block);
    }
  }
  return {rep.pass() && rep.per_type.size() == 6,
          fmt::format("{} factor types x {} trials, {} failures; worst rel {:.2e} at {} (tol {:g} rel / {:g} abs)",
                      rep.per_type.size(), kJacTrials, failures, worst_rel, worst, kJacRel, kJacAbs)};
}

Outcome marginalization() {
  const MarginalizationCheckReport rep = run_marginalization_check(1, kMargChains);
  return {rep.pass(kMargTol) && rep.chains >= kMargChains,
          fmt::format("{} chains, max |fixed-lag - batch| {:.2e} (tol {:g}); hand case H^={:.17g} b^={:.17g}",
                      rep.chains, rep.max_discrepancy, kMargTol, rep.hand_h, rep.hand_b)};
}

Outcome zero_noise_fixed_point() {
  const GroundTruthScenario sc = make_scenario(desk_viral(true));
  const MeasurementLog log = generate_measurements(sc);
  SmootherConfig cfg;
  cfg.use_camera = true;
  const PipelineResult r = run_pipeline(sc, log, cfg, true);
  const double ape = std::max(r.ape_none, r.ape_se3);
  return {r.max_cost < kZeroCost && ape < kZeroApe,
          fmt::format("LIC seeded at truth, {} windows: max cost {:.2e} (< {:g}), APE {:.2e} m (< {:g})", r.windows,
                      r.max_cost, kZeroCost, ape, kZeroApe)};
}

Outcome noisy_li() {
  const GroundTruthScenario sc = make_scenario(desk_viral(false));
  const MeasurementLog log = generate_measurements(sc);
  const PipelineResult r = run_pipeline(sc, log, SmootherConfig{});
  return {r.ape_se3 < kNoisyApe,
          fmt::format("LI 30 s: APE(se3) {:.3e} m (< {:g}), {} windows, {} rank-deficient", r.ape_se3, kNoisyApe,
                      r.windows, r.rank_deficient_windows)};
}

Outcome time_offset_calibration() {
  const double check_at = kCalibStart + kConvergeWithin;
  bool all = true;
  std::string detail;
  for (const double ms : {-20.0, -10.0, -5.0, 5.0, 10.0, 20.0}) {
    ScenarioConfig c = desk_viral(false, check_at + 0.5);
    c.true_imu_offset = ms * 1e-3;
    const GroundTruthScenario sc = make_scenario(c);
    const MeasurementLog log = generate_measurements(sc);
    SmootherConfig cfg;
    cfg.use_camera = true;
    cfg.estimate_imu_offset = true;
    cfg.calibration_start = kCalibStart;
    cfg.initial_imu_offset = 0.0;
    double err = std::nan("");
    try {
      const PipelineResult r = run_pipeline(sc, log, cfg);
      for (const auto& d : r.diagnostics) {
        if (d.t_end >= check_at - 1e-9) {
          err = d.imu_offset - c.true_imu_offset;
          break;
        }
      }
    } catch (const std::exception&) {
    }
    const bool ok = std::abs(err) < kOffsetErr;
    all = all && ok;
    detail += fmt::format("{}{:+g}ms:{:+.2f}{}", detail.empty() ? "" : " ", ms, 1e3 * err, ok ? "" : "(!)");
  }
  return {all, fmt::format("error [ms] at t={:g} s, {:g} s after enabling: {} (|e| < {:g} ms)", check_at,
                           kConvergeWithin, detail, 1e3 * kOffsetErr)};
}

Outcome motion_distortion() {
  ScenarioConfig c = desk_viral(true);
  c.num_lidars = 2;
  const GroundTruthScenario sc = make_scenario(c);
  const double period = 1.0 / sc.config.lidar_rate;
  int moving = 0, still = 0, violations = 0;
  double worst_per_point = 0.0, weakest_contrast = HUGE_VAL;
  for (int stream = 0; stream < sc.config.num_lidars; ++stream) {
    const auto pts = generate_lidar(sc, stream);
    const Extrinsic& ext = sc.config.lidar_extrinsics[stream];
    std::size_t i = 0;
    while (i < pts.size()) {
      const int scan = static_cast<int>(std::floor(pts[i].t / period + 1e-9));
      const double t0 = scan * period;
      const Rotation r0 = sc.trajectory.rotation(t0);
      const Vec3 p0 = sc.trajectory.position(t0);
      double per_point = 0.0, single = 0.0, motion = 0.0;
      for (; i < pts.size() && pts[i].t < t0 + period - 1e-12; ++i) {
        const auto& m = pts[i];
        const PlaneCP& pl = sc.planes[m.plane_id];
        const Vec3 x = ext.apply(m.point);
        const Vec3 w = sc.trajectory.rotation(m.t) * x + sc.trajectory.position(m.t);
        const Vec3 w0 = r0 * x + p0;
        per_point = std::max(per_point, std::abs(pl.signed_distance(w)));
        single = std::max(single, std::abs(pl.signed_distance(w0)));
        motion = std::max(motion, (w - w0).norm());
      }
      worst_per_point = std::max(worst_per_point, per_point);
      if (per_point >= kPerPointResidual) ++violations;
      if (motion > kDistortionContrast) {
        ++moving;
        weakest_contrast = std::min(weakest_contrast, single);
        if (single <= kDistortionContrast) ++violations;
      } else {
        ++still;
      }
    }
  }
  return {violations == 0 && moving > 0,
          fmt::format("{} moving scans ({} stationary): per-point max {:.1e} m (< {:g}), scan-start min {:.2e} m "
                      "(> {:g}), {} violations",
                      moving, still, worst_per_point, kPerPointResidual, weakest_contrast, kDistortionContrast,
                      violations)};
}

Outcome spline_suite() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  int bad_lambda = 0, bad_c2 = 0, bad_const = 0, bad_fd = 0;
  double worst_c2 = 0.0, worst_fd = 0.0;
  for (int s = 0; s < kSplineSamples; ++s) {
    const int n = 8;
    const KnotGrid g{nd(rng), 0.02 + 0.18 * ud(rng), n};
    std::vector<Vec3> p;
    std::vector<Rotation> r;
    Vec3 cur(nd(rng), nd(rng), nd(rng));
    Rotation rc = exp_so3(Vec3(nd(rng), nd(rng), nd(rng)));
    for (int i = 0; i < n; ++i) {
      p.push_back(cur);
      r.push_back(rc);
      cur += 0.3 * Vec3(nd(rng), nd(rng), nd(rng));
      rc = rc * exp_so3(0.3 * Vec3(nd(rng), nd(rng), nd(rng)));
    }
    const R3Spline pos(g, p);
    const So3Spline rot(g, r);

    // lambda[0] == 1 at a random instant.
    const double t = g.min_time() + (g.max_time() - g.min_time()) * (0.02 + 0.96 * ud(rng));
    const BasisEval b = cumulative_basis(g, t);
    if (b.lambda[0] != 1.0 || b.dlambda[0] != 0.0 || b.d2lambda[0] != 0.0) ++bad_lambda;

    // C2 at a random interior knot.
    const int k = 1 + static_cast<int>(ud(rng) * (g.num_segments() - 1));
    const BasisEval left = cumulative_basis_at(g, k - 1, 1.0), right = cumulative_basis_at(g, k, 0.0);
    for (int order = 0; order < 3; ++order) {
      const Vec3 a = pos.evaluate(left, order), c = pos.evaluate(right, order);
      const double e = (a - c).norm() / std::max(1.0, c.norm());
      worst_c2 = std::max(worst_c2, e);
      if (e > kContinuity) ++bad_c2;
    }
    const RotationEval rl = rot.evaluate(left, false), rr = rot.evaluate(right, false);
    const double er = std::max(rminus(rl.rotation, rr.rotation).norm(),
                               (rl.omega - rr.omega).norm() / std::max(1.0, rr.omega.norm()));
    worst_c2 = std::max(worst_c2, er);
    if (er > kContinuity) ++bad_c2;

    // Constant control points: every derivative vanishes.
    const R3Spline pc(g, std::vector<Vec3>(n, cur));
    const So3Spline rcst(g, std::vector<Rotation>(n, rc));
    const RotationEval ec = rcst.evaluate(t, false);
    if (pc.velocity(t).norm() > 1e-12 || pc.acceleration(t).norm() > 1e-12 || ec.omega.norm() > 1e-12 ||
        ec.omega_dot.norm() > 1e-12)
      ++bad_const;

    // Derivatives vs 5-point central differences, away from knots.
    const double u = (t - g.t0) / g.dt;
    if (u - std::floor(u) < 0.05 || u - std::floor(u) > 0.95) continue;
    const double h = 1e-4 * g.dt;
    auto fd = [h](const std::function<Vec3(double)>& f, double x) {
      return ((8.0 * (f(x + h) - f(x - h)) - (f(x + 2 * h) - f(x - 2 * h))) / (12.0 * h)).eval();
    };
    auto check = [&](const Vec3& analytic, const Vec3& numeric) {
      const double e = (analytic - numeric).norm() / std::max(1.0, numeric.norm());
      worst_fd = std::max(worst_fd, e);
      if (e > kDerivRel) ++bad_fd;
    };
    check(pos.velocity(t), fd([&](double x) { return pos.position(x); }, t));
    check(pos.acceleration(t), fd([&](double x) { return pos.velocity(x); }, t));
    check(pos.jerk(t), fd([&](double x) { return pos.acceleration(x); }, t));
    const Rotation rt = rot.rotation(t);
    check(rot.body_angular_velocity(t), fd([&](double x) { return rminus(rot.rotation(x), rt); }, t));
    check(rot.body_angular_accel(t), fd([&](double x) { return rot.body_angular_velocity(x); }, t));
  }
  const bool ok = bad_lambda + bad_c2 + bad_const + bad_fd == 0;
  return {ok, fmt::format("{} samples: lambda0 {} bad, C2 worst {:.1e} (tol {:g}), constant {} bad, derivative vs FD "
                          "worst rel {:.1e} (tol {:g})",
                          kSplineSamples, bad_lambda, worst_c2, kContinuity, bad_const, worst_fd, kDerivRel)};
}

Outcome throughput() {
  const GroundTruthScenario sc = make_scenario(desk_viral(false));
  const MeasurementLog log = generate_measurements(sc);
  SmootherConfig cfg;
  cfg.use_camera = true;
  const PipelineResult r = run_pipeline(sc, log, cfg);
  const StageTimes& s = r.timings;
  return {r.wall_time < 30.0,
          fmt::format("LIC 30 s data in {:.2f} s wall (< 30): update local map {:.2f}, update trajectory {:.2f}, "
                      "update prior {:.2f}, others {:.2f}; APE(se3) {:.2e} m",
                      r.wall_time, s.update_local_map, s.update_trajectory, s.update_prior, s.others, r.ape_se3)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only.insert(std::atoi(argv[++i]));
    } else {
      fmt::print(stderr, "usage: {} [--only N]...\n", argv[0]);
      return 2;
    }
  }

  const std::vector<Criterion> criteria{
      {1, "jacobian-suite", 30.0, false, jacobian_suite},
      {2, "marginalization-batch-equivalence", 10.0, false, marginalization},
      {3, "zero-noise-fixed-point", 60.0, false, zero_noise_fixed_point},
      {4, "noisy-li-ape", 180.0, false, noisy_li},
      {5, "time-offset-calibration", 300.0, false, time_offset_calibration},
      {6, "motion-distortion", 5.0, false, motion_distortion},
      {7, "spline-continuity", 10.0, false, spline_suite},
      {8, "throughput", 1e9, true, throughput},
  };

  int hard_failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    const bool in_time = secs < c.time_limit;
    const bool pass = o.pass && in_time;
    const char* tag = pass ? "PASS" : (c.soft ? "WARN" : "FAIL");
    const std::string limit = c.soft ? "" : fmt::format(" (limit {:g} s)", c.time_limit);
    fmt::print("[{}] {} {}: {} | {:.2f} s{}\n", tag, c.id, c.name, o.detail, secs, limit);
    std::fflush(stdout);
    if (!pass && !c.soft) ++hard_failures;
  }
  return hard_failures == 0 ? 0 : 1;
}
