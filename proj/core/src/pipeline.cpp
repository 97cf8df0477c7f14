#include "ctsmooth/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace ctsmooth {

namespace {

BiasPair true_bias_at(const MeasurementLog& log, double tau, double imu_offset) {
  if (log.imu_true_bias.empty()) return {};
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log.imu.size(); ++i) {
    const double d = std::abs(log.imu[i].t + imu_offset - tau);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return log.imu_true_bias[best];
}

}  // namespace

SensorRig rig_from_scenario(const GroundTruthScenario& sc) {
  return SensorRig{sc.config.lidar_extrinsics, sc.config.camera_extrinsic, sc.planes};
}

StateSeeder truth_seeder(const GroundTruthScenario& sc, const MeasurementLog& log) {
  StateSeeder s;
  const TrueTrajectory& tr = sc.trajectory;
  s.initial = [&sc, &log, &tr](EstimatorState& st) {
    if (std::abs(st.grid().t0 - tr.pos.grid().t0) > 1e-12 || std::abs(st.grid().dt - tr.pos.grid().dt) > 1e-12)
      throw std::invalid_argument("truth seeding needs the estimator grid to match the ground-truth grid");
    for (int i = 0; i < st.num_control_points(); ++i) {
      st.rot.ctrl(i) = tr.rot.ctrl(i);
      st.pos.ctrl(i) = tr.pos.ctrl(i);
    }
    st.offsets.imu = sc.config.true_imu_offset;
    st.offsets.cam = sc.config.true_cam_offset;
    st.biases[0] = true_bias_at(log, st.grid().t0, st.offsets.imu);
  };
  s.extend = [&sc, &log, &tr](EstimatorState& st, int first, int count) {
    if (first + count > static_cast<int>(tr.pos.ctrl().size()))
      throw std::out_of_range("truth seeding ran past the ground-truth spline");
    for (int i = first; i < first + count; ++i) {
      st.rot.ctrl(i) = tr.rot.ctrl(i);
      st.pos.ctrl(i) = tr.pos.ctrl(i);
    }
    const int k = st.biases.rbegin()->first;
    st.biases[k] = true_bias_at(log, st.grid().knot_time(first - 3), st.offsets.imu);
  };
  return s;
}

std::vector<PoseSample> truth_samples(const GroundTruthScenario& sc, double rate) {
  return sample_trajectory(sc.trajectory.rot, sc.trajectory.pos, 0.0, sc.trajectory.duration, 1.0 / rate);
}

PipelineResult run_pipeline(const GroundTruthScenario& sc, const MeasurementLog& log, const SmootherConfig& config,
                            bool seed_at_truth) {
  const auto start = std::chrono::steady_clock::now();
  FixedLagSmoother smoother(config, rig_from_scenario(sc));
  if (seed_at_truth) smoother.set_seeder(truth_seeder(sc, log));
  for (const auto& m : log.imu) smoother.feed_imu(m);
  for (const auto& stream : log.lidar)
    for (const auto& p : stream) smoother.feed_lidar(p);
  for (const auto& f : log.camera) smoother.feed_image(ImageFrame{f.t, f.obs});
  smoother.finish();
  smoother.run();

  PipelineResult res;
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  res.diagnostics = smoother.diagnostics();
  res.timings = smoother.timings();
  res.windows = static_cast<int>(res.diagnostics.size());
  res.imu_offset = smoother.state().offsets.imu;
  res.cam_offset = smoother.state().offsets.cam;
  for (const auto& d : res.diagnostics) {
    res.max_cost = std::max(res.max_cost, d.cost_after);
    if (d.lidar_degenerate) ++res.degenerate_windows;
    if (d.rank_defect > 0) ++res.rank_deficient_windows;
  }
  if (!res.diagnostics.empty()) res.final_cost = res.diagnostics.back().cost_after;

  const EstimatorState& st = smoother.state();
  const double t_end = smoother.trajectory_end();
  for (const auto& s : truth_samples(sc)) {
    if (s.t < smoother.trajectory_begin() || s.t >= t_end) continue;
    res.truth.push_back(s);
    res.estimate.push_back(PoseSample{s.t, st.rot.rotation(s.t), st.pos.position(s.t)});
  }
  if (res.estimate.size() >= 2) {
    res.ape_none = ape_rmse(res.estimate, res.truth, Alignment::kNone);
    res.ape_yaw = ape_rmse(res.estimate, res.truth, Alignment::kYawTranslation);
    res.ape_se3 = ape_rmse(res.estimate, res.truth, Alignment::kSE3);
  }
  return res;
}

}  // namespace ctsmooth
