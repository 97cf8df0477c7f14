#pragma once

#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctsmooth/factors.hpp"
#include "ctsmooth/keyframes.hpp"
#include "ctsmooth/marginalization.hpp"
#include "ctsmooth/solver.hpp"
#include "ctsmooth/state.hpp"

namespace ctsmooth {

/// Thread-safe measurement buffer; producers push, the smoother drains at window boundaries.
template <typename T>
class MsgCache {
 public:
  void push(T msg) {
    std::lock_guard<std::mutex> lock(mutex_);
    buffer_.push_back(std::move(msg));
  }
  /// Removes and returns all messages whose key (stamp) is below limit.
  template <typename KeyFn>
  std::vector<T> pop_before(double limit, KeyFn key) {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<T> out;
    while (!buffer_.empty() && key(buffer_.front()) < limit) {
      out.push_back(std::move(buffer_.front()));
      buffer_.pop_front();
    }
    return out;
  }
  /// Stamp of the newest message, or nullopt if empty.
  template <typename KeyFn>
  std::optional<double> newest(KeyFn key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    if (buffer_.empty()) return std::nullopt;
    return key(buffer_.back());
  }
  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return buffer_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::deque<T> buffer_;
};

struct ImageFrame {
  double t = 0.0;  // raw camera stamp
  std::vector<VisualObs> obs;
};

struct SmootherConfig {
  double t0 = 0.0;        // spline start on the LiDAR clock
  double knot_dt = 0.03;  // s
  int eta = 4;            // knots per temporal window
  ImuNoise imu_noise;
  double lidar_sigma = 5e-3;   // m
  double pixel_sigma = 1e-3;   // normalized
  double velocity_sigma = 0.05;  // m/s, initialization factor
  double lidar_huber = 0.0;    // whitened units; 0 disables
  double visual_huber = 0.0;
  double association_gate = 0.3;  // m
  int association_passes = 2;
  int lidar_stride = 1;  // use every n-th point
  bool use_lidar = true;
  std::vector<int> lidar_streams{0};
  bool use_camera = false;
  KeyframeConfig keyframes;
  SolverConfig solver;
  SolverConfig init_solver;  // extension mini-problem

  double static_duration = 0.5;     // s of stationary IMU for initialization
  double static_accel_std = 0.1;    // m/s^2, motion threshold
  double static_gyro_std = 0.05;    // rad/s
  double init_rot_sigma = 1e-2;     // rad
  double init_pos_sigma = 1e-2;     // m
  double init_gyro_bias_sigma = 1e-3;
  double init_accel_bias_sigma = 5e-2;

  double initial_imu_offset = 0.0;  // s
  double initial_cam_offset = 0.0;  // s
  bool estimate_imu_offset = false;
  bool estimate_cam_offset = false;
  double calibration_start = 5.0;  // s after t0
  double offset_prior_sigma = 0.05;  // s, added once when calibration starts
  double max_abs_offset = 0.05;      // s
  double offset_margin = 0.01;       // s, intake headroom while an offset is estimated
};

/// Sensor extrinsics and the plane map used for LiDAR association.
struct SensorRig {
  std::vector<Extrinsic> lidar;  // per stream, LiDAR -> IMU
  Extrinsic camera;              // camera -> IMU
  std::vector<PlaneCP> planes;
};

struct StageTimes {
  double update_local_map = 0.0;   // association, keyframes, triangulation
  double update_trajectory = 0.0;  // extension and window solves
  double update_prior = 0.0;       // marginalization
  double others = 0.0;
  double total() const { return update_local_map + update_trajectory + update_prior + others; }
};

struct WindowDiagnostics {
  int window = 0;
  double t_begin = 0.0;
  double t_end = 0.0;
  double cost_before = 0.0;
  double cost_after = 0.0;
  int iterations = 0;
  std::string termination;
  FactorCounts counts;
  double imu_offset = 0.0;
  double cam_offset = 0.0;
  int marginalized_dim = 0;
  int prior_dim = 0;
  int rank_defect = 0;
  bool marginalization_singular = false;
  bool lidar_degenerate = false;
  double lidar_min_eig_ratio = 0.0;
  int keyframes = 0;
  int landmarks = 0;
  int active_ctrl = 0;
};

class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EstimationError : public std::runtime_error {
 public:
  EstimationError(int window, const std::string& what, bool diverged);
  int window() const { return window_; }
  bool diverged() const { return diverged_; }

 private:
  int window_;
  bool diverged_;
};

struct StaticInitResult {
  Rotation rotation;
  BiasPair bias;
  double accel_std = 0.0;
  double gyro_std = 0.0;
};

/**
 * Gravity alignment from stationary IMU data: the mean specific force is
 * rotated onto -g (yaw fixed to zero) and the gyro bias is the mean rate.
 * Throws InitializationError when the variance indicates motion.
 */
StaticInitResult static_initialize(const std::vector<ImuMeas>& imu, double accel_std_max = 0.1,
                                   double gyro_std_max = 0.05);

/// Smallest/largest eigenvalue ratio of the 6x6 pose information of point-to-plane matches.
double lidar_degeneracy_ratio(const std::vector<Vec3>& world_points, const std::vector<Vec3>& normals,
                              const Vec3& center);

/// Optional override for state initialization (e.g. seeding at ground truth).
struct StateSeeder {
  /// Called once with the (pre-created) control points; may set biases and offsets.
  std::function<void(EstimatorState&)> initial;
  /// Called after new control points [first, first + count) are appended.
  std::function<void(EstimatorState&, int first, int count)> extend;
};

class FixedLagSmoother {
 public:
  FixedLagSmoother(SmootherConfig config, SensorRig rig);

  void feed_imu(const ImuMeas& m);
  void feed_lidar(const LidarPointMeas& m);
  void feed_image(ImageFrame f);
  /// Marks the end of input; remaining complete windows may then be processed.
  void finish();

  /// Processes the next temporal window; false if data for it is not available yet.
  bool step();
  /// Runs step() until it returns false.
  int run();

  void set_seeder(StateSeeder seeder) { seeder_ = std::move(seeder); }
  void set_timeoffset_calibration(bool imu, bool cam, double start_delay);
  void remove_prior() { state_.prior = MarginalPrior{}; }

  bool initialized() const { return initialized_; }
  int window_index() const { return window_; }
  double window_end(int window) const;
  const EstimatorState& state() const { return state_; }
  EstimatorState& mutable_state() { return state_; }
  const SmootherConfig& config() const { return config_; }
  const KeyframeWindow& keyframes() const { return keyframes_; }
  const std::vector<WindowDiagnostics>& diagnostics() const { return diagnostics_; }
  const StageTimes& timings() const { return times_; }
  /// Evaluable time range of the estimated trajectory.
  double trajectory_begin() const { return config_.t0; }
  double trajectory_end() const;

  /// Control-point indices optimized in the given window.
  std::pair<int, int> active_ctrl_range(int window) const;

 private:
  bool try_initialize();
  void extend_window();
  void ingest_images(double t_end);
  void keyframe_update(const ImageFrame& frame);
  void remove_keyframe(const Keyframe& kf);
  void triangulate_new_landmarks();
  std::vector<FactorPtr> build_lidar_factors(std::vector<Vec3>* world_points, std::vector<Vec3>* normals) const;
  std::vector<FactorPtr> build_visual_factors() const;
  StateLayout window_layout(const std::vector<FactorPtr>& visual) const;
  bool offsets_active() const;
  void marginalize_temporal(const std::vector<FactorPtr>& consumed, WindowDiagnostics& diag);

  SmootherConfig config_;
  SensorRig rig_;
  StateSeeder seeder_;
  EstimatorState state_;
  KeyframeWindow keyframes_;
  bool initialized_ = false;
  bool finished_ = false;
  bool offset_prior_added_ = false;
  int window_ = 0;  // next window to process
  int next_frame_id_ = 0;

  MsgCache<ImuMeas> imu_cache_;
  MsgCache<LidarPointMeas> lidar_cache_;
  MsgCache<ImageFrame> image_cache_;
  std::vector<ImuMeas> imu_;  // drained IMU history (needed for forward integration)
  std::size_t imu_cursor_ = 0;
  std::vector<LidarPointMeas> window_points_;
  std::vector<ImuMeas> window_imu_;
  std::vector<ImuMeas> window_tail_imu_;  // inside the intake margins: marginalization only

  std::vector<WindowDiagnostics> diagnostics_;
  StageTimes times_;
};

}  // namespace ctsmooth
