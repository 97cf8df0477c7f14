#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctsmooth/factors.hpp"
#include "ctsmooth/lie.hpp"
#include "ctsmooth/spline.hpp"

namespace ctsmooth {

enum class TrajectoryKind { kRest, kLine, kCircle, kRandomSmooth };
TrajectoryKind parse_trajectory_kind(const std::string& name);
std::string to_string(TrajectoryKind kind);

struct TrajectoryParams {
  TrajectoryKind kind = TrajectoryKind::kRandomSmooth;
  double duration = 30.0;  // s
  double knot_dt = 0.03;   // s, same grid as the estimator by default
  Vec3 start_position = Vec3::Zero();
  double start_roll = 0.03;    // rad
  double start_pitch = -0.02;  // rad
  Vec3 velocity = Vec3(0.5, 0.0, 0.0);  // line
  double radius = 2.0;                  // circle, m
  double angular_rate = 0.5;            // circle, rad/s
  double rest_duration = 1.0;           // random-smooth: stationary prefix, s
  double position_amplitude = 2.0;      // random-smooth, m
  double yaw_amplitude = 1.5;           // random-smooth, rad
  double tilt_amplitude = 0.15;         // random-smooth, rad
  double max_angular_rate = 3.0;        // rad/s
  double max_acceleration = 10.0;       // m/s^2
};

struct TrueTrajectory {
  So3Spline rot;
  R3Spline pos;
  double duration = 0.0;

  Rotation rotation(double t) const { return rot.rotation(t); }
  Vec3 position(double t) const { return pos.position(t); }
};

/// Control point j is sampled at time (j - 1) dt, which is where the uniform cubic spline passes its value.
TrueTrajectory generate_trajectory(const TrajectoryParams& params, std::uint64_t seed);

/// Camera optical axis along IMU +x, image x along IMU -y, image y along IMU -z.
Extrinsic default_camera_extrinsic();
Extrinsic default_lidar_extrinsic(int stream);

struct SensorNoise {
  double gyro = 1e-3;             // rad/s per sample
  double accel = 1e-2;            // m/s^2 per sample
  double gyro_bias_walk = 1e-4;   // rad/s/sqrt(s)
  double accel_bias_walk = 1e-3;  // m/s^2/sqrt(s)
  double lidar = 5e-3;            // m, per axis
  double pixel = 1e-3;            // normalized image units
  Vec3 gyro_bias0 = Vec3(0.003, -0.002, 0.001);
  Vec3 accel_bias0 = Vec3(0.02, -0.03, 0.01);
};

struct ScenarioConfig {
  std::string name = "desk-viral";
  std::uint64_t seed = 7;
  TrajectoryParams trajectory;
  double room_half_extent = 5.0;
  bool single_plane = false;  // degenerate map (floor only)
  int num_landmarks = 200;
  double imu_rate = 200.0;
  double lidar_rate = 10.0;
  int points_per_scan = 300;
  int num_lidars = 1;
  double lidar_max_elevation = 1.0;  // rad
  double camera_rate = 20.0;
  double camera_half_fov = 0.7853981633974483;  // rad
  double camera_max_range = 15.0;
  SensorNoise noise;
  bool zero_noise = false;  // also zeroes the initial biases
  double true_imu_offset = 0.0;  // s
  double true_cam_offset = 0.0;  // s
  std::vector<Extrinsic> lidar_extrinsics;  // one per stream; defaults filled by make_scenario
  Extrinsic camera_extrinsic = default_camera_extrinsic();
};

struct GroundTruthScenario {
  ScenarioConfig config;
  TrueTrajectory trajectory;
  std::vector<PlaneCP> planes;
  std::vector<Vec3> landmarks;
};

struct CameraFrame {
  double t = 0.0;  // raw stamp
  std::vector<VisualObs> obs;
  std::vector<int> landmark_ids;  // ground truth, parallel to obs
};

struct MeasurementLog {
  std::vector<ImuMeas> imu;
  std::vector<BiasPair> imu_true_bias;  // parallel to imu
  std::vector<std::vector<LidarPointMeas>> lidar;  // per stream
  std::vector<CameraFrame> camera;
};

GroundTruthScenario make_scenario(const ScenarioConfig& config);
/// Deterministic given the scenario seed; each stream uses its own sub-seed.
MeasurementLog generate_measurements(const GroundTruthScenario& scenario);

std::vector<ImuMeas> generate_imu(const GroundTruthScenario& scenario, std::vector<BiasPair>* true_bias = nullptr);
std::vector<LidarPointMeas> generate_lidar(const GroundTruthScenario& scenario, int stream);
std::vector<CameraFrame> generate_visual(const GroundTruthScenario& scenario);

/// Scenario presets: desk-viral, desk-viral-zero, rest, line, circle, planar (floor only).
ScenarioConfig preset(const std::string& name);
std::vector<std::string> preset_names();

struct PoseSample {
  double t = 0.0;
  Rotation rotation;
  Vec3 position = Vec3::Zero();
};

enum class Alignment { kNone, kYawTranslation, kSE3 };
Alignment parse_alignment(const std::string& name);
std::string to_string(Alignment a);

/// Translational RMSE after alignment; samples are matched by stamp (|dt| < 1e-9).
double ape_rmse(const std::vector<PoseSample>& estimate, const std::vector<PoseSample>& truth, Alignment alignment);

std::vector<PoseSample> sample_trajectory(const So3Spline& rot, const R3Spline& pos, double t_begin, double t_end,
                                          double step);

}  // namespace ctsmooth
