#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctsmooth/pipeline.hpp"
#include "ctsmooth/sim.hpp"
#include "ctsmooth/smoother.hpp"

namespace ctsmooth {

/// Invalid configuration; line is 1-based (0 when the problem has no source location).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& key, const std::string& message);
  int line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  int line_;
  std::string key_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SensorSuite { kLI, kLIC, kL2I, kL2IC };
SensorSuite parse_sensor_suite(const std::string& name);
std::string to_string(SensorSuite s);

struct RunConfig {
  ScenarioConfig scenario = preset("desk-viral");
  SmootherConfig smoother;
  SensorSuite sensors = SensorSuite::kLI;
  Alignment alignment = Alignment::kSE3;
  bool seed_at_truth = false;
};

/// Sets the camera / LiDAR stream selection of the smoother and makes sure the scenario has enough LiDARs.
void apply_sensor_suite(RunConfig& config);

/// Copies the simulated noise levels into the estimator's noise model.
void match_noise_model(RunConfig& config);

/**
 * Parses a YAML run config on top of base. Sections: scenario, sensors.{imu,lidar,camera},
 * smoother, solver, run. Unknown keys and out-of-range values raise ConfigError.
 */
RunConfig parse_run_config(const std::string& text, const std::string& source = "<string>",
                           const RunConfig& base = RunConfig{});
RunConfig load_run_config(const std::string& path, const RunConfig& base = RunConfig{});
/// Round-trips through parse_run_config.
std::string emit_run_config(const RunConfig& config);

// Measurement log CSVs, one file per stream, all numbers printed with 17 significant digits.
void write_imu_csv(const std::string& path, const std::vector<ImuMeas>& imu);
std::vector<ImuMeas> read_imu_csv(const std::string& path);
void write_imu_bias_csv(const std::string& path, const std::vector<ImuMeas>& imu, const std::vector<BiasPair>& bias);
std::vector<BiasPair> read_imu_bias_csv(const std::string& path);
void write_lidar_csv(const std::string& path, const std::vector<LidarPointMeas>& points);
std::vector<LidarPointMeas> read_lidar_csv(const std::string& path);
void write_camera_csv(const std::string& path, const std::vector<CameraFrame>& frames);
std::vector<CameraFrame> read_camera_csv(const std::string& path);
/// Columns t,px,py,pz,qw,qx,qy,qz.
void write_trajectory_csv(const std::string& path, const std::vector<PoseSample>& samples);
std::vector<PoseSample> read_trajectory_csv(const std::string& path);
void write_diagnostics_csv(const std::string& path, const std::vector<WindowDiagnostics>& diagnostics);

/// File names used inside a data directory; returns the paths written, relative to dir.
std::vector<std::string> save_log(const std::string& dir, const MeasurementLog& log);
MeasurementLog load_log(const std::string& dir, int num_lidars);

std::string sha256_file(const std::string& path);
/// manifest.json with the seed and the SHA-256 of every listed file (paths relative to dir).
void write_manifest(const std::string& dir, const RunConfig& config, const std::vector<std::string>& files);
/// Files whose checksum differs from manifest.json (missing files included); empty if all match.
std::vector<std::string> verify_manifest(const std::string& dir);

struct OffsetTruth {
  double imu = 0.0;
  double cam = 0.0;
};
/// Metrics JSON: ape_rmse per alignment, offsets and their errors, wall time and stage timings.
std::string metrics_json(const PipelineResult& result, const RunConfig& config, const OffsetTruth& truth);

}  // namespace ctsmooth
