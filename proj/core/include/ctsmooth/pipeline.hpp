#pragma once

#include <vector>

#include "ctsmooth/sim.hpp"
#include "ctsmooth/smoother.hpp"

namespace ctsmooth {

SensorRig rig_from_scenario(const GroundTruthScenario& scenario);

/// Seeds the smoother with ground-truth control points, biases and offsets (grids must match).
StateSeeder truth_seeder(const GroundTruthScenario& scenario, const MeasurementLog& log);

/// Ground-truth pose samples at a fixed rate over [0, duration).
std::vector<PoseSample> truth_samples(const GroundTruthScenario& scenario, double rate = 100.0);

struct PipelineResult {
  std::vector<PoseSample> estimate;  // sampled at the truth stamps inside the estimated range
  std::vector<PoseSample> truth;
  double ape_none = 0.0;
  double ape_yaw = 0.0;
  double ape_se3 = 0.0;
  double imu_offset = 0.0;
  double cam_offset = 0.0;
  double final_cost = 0.0;  // last window, after optimization
  double max_cost = 0.0;    // largest post-optimization window cost
  int windows = 0;
  int degenerate_windows = 0;
  int rank_deficient_windows = 0;
  double wall_time = 0.0;
  std::vector<WindowDiagnostics> diagnostics;
  StageTimes timings;
};

/**
 * Feeds a measurement log through the smoother and evaluates against truth.
 * Throws InitializationError or EstimationError on estimator failure.
 */
PipelineResult run_pipeline(const GroundTruthScenario& scenario, const MeasurementLog& log,
                            const SmootherConfig& config, bool seed_at_truth = false);

}  // namespace ctsmooth
