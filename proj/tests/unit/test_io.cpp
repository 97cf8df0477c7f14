#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "ctsmooth/io.hpp"

using namespace ctsmooth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ctsmooth_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ConfigError config_error(const std::string& text) {
  try {
    parse_run_config(text, "test.yaml");
  } catch (const ConfigError& e) {
    return e;
  }
  ADD_FAILURE() << "no ConfigError for:\n" << text;
  return ConfigError("", 0, "", "");
}

MeasurementLog small_log(int lidars = 1) {
  ScenarioConfig c = preset("desk-viral");
  c.trajectory.duration = 2.0;
  c.num_lidars = lidars;
  return generate_measurements(make_scenario(c));
}

}  // namespace

TEST(Config, EmptyDocumentKeepsDefaults) {
  const RunConfig c = parse_run_config("");
  EXPECT_EQ(c.scenario.name, "desk-viral");
  EXPECT_EQ(c.smoother.eta, 4);
  EXPECT_EQ(c.sensors, SensorSuite::kLI);
}

TEST(Config, ZeroRateIsRejectedWithLineAndKey) {
  const ConfigError e = config_error("scenario:\n  seed: 3\nsensors:\n  lidar:\n    rate: 0\n");
  EXPECT_EQ(e.line(), 5);
  EXPECT_EQ(e.key(), "sensors.lidar.rate");
  EXPECT_NE(std::string(e.what()).find("sensors.lidar.rate"), std::string::npos);
}

TEST(Config, UnknownKeyIsRejected) {
  const ConfigError e = config_error("smoother:\n  eta: 4\n  etaa: 5\n");
  EXPECT_EQ(e.line(), 3);
  EXPECT_EQ(e.key(), "smoother.etaa");
}

TEST(Config, TypeErrorsNameTheKey) {
  EXPECT_EQ(config_error("solver:\n  max_iterations: lots\n").key(), "solver.max_iterations");
  EXPECT_EQ(config_error("scenario:\n  trajectory:\n    start_position: [1, 2]\n").key(),
            "scenario.trajectory.start_position");
  EXPECT_EQ(config_error("run:\n  sensors: lidar-only\n").key(), "run.sensors");
  EXPECT_EQ(config_error("scenario: 3\n").key(), "scenario");
}

TEST(Config, SyntaxErrorCarriesLine) {
  const ConfigError e = config_error("scenario:\n  seed: [1,\n");
  EXPECT_GT(e.line(), 0);
}

TEST(Config, PresetIsAppliedBeforeOverrides) {
  const RunConfig c = parse_run_config("scenario:\n  seed: 11\n  preset: circle\n  duration: 4\n");
  EXPECT_EQ(c.scenario.trajectory.kind, TrajectoryKind::kCircle);
  EXPECT_EQ(c.scenario.seed, 11u);
  EXPECT_DOUBLE_EQ(c.scenario.trajectory.duration, 4.0);
}

TEST(Config, SensorNoiseFlowsIntoEstimatorModel) {
  const RunConfig c = parse_run_config("sensors:\n  lidar:\n    noise: 0.02\n  imu:\n    gyro_noise: 0.004\n");
  EXPECT_DOUBLE_EQ(c.smoother.lidar_sigma, 0.02);
  EXPECT_DOUBLE_EQ(c.smoother.imu_noise.gyro, 0.004);
  const RunConfig d = parse_run_config("sensors:\n  lidar:\n    noise: 0.02\nsmoother:\n  lidar_sigma: 0.01\n");
  EXPECT_DOUBLE_EQ(d.smoother.lidar_sigma, 0.01);
}

TEST(Config, SensorSuiteSelectsStreams) {
  const RunConfig c = parse_run_config("run:\n  sensors: l2ic\n");
  EXPECT_TRUE(c.smoother.use_camera);
  EXPECT_EQ(c.smoother.lidar_streams, (std::vector<int>{0, 1}));
  EXPECT_GE(c.scenario.num_lidars, 2);
}

TEST(Config, EmitRoundTrips) {
  RunConfig c;
  c.scenario = preset("line");
  c.scenario.seed = 42;
  c.scenario.true_imu_offset = -0.0125;
  c.scenario.trajectory.start_position = Vec3(0.1, 1.0 / 3.0, -2.0);
  c.smoother.eta = 5;
  c.smoother.estimate_imu_offset = true;
  c.smoother.solver.max_iterations = 17;
  c.sensors = SensorSuite::kLIC;
  c.alignment = Alignment::kYawTranslation;
  apply_sensor_suite(c);
  const std::string text = emit_run_config(c);
  const RunConfig d = parse_run_config(text);
  EXPECT_EQ(emit_run_config(d), text);
  EXPECT_EQ(d.scenario.seed, 42u);
  EXPECT_EQ(d.scenario.trajectory.kind, TrajectoryKind::kLine);
  EXPECT_EQ(d.scenario.true_imu_offset, -0.0125);
  EXPECT_EQ(d.scenario.trajectory.start_position.y(), 1.0 / 3.0);
  EXPECT_EQ(d.smoother.eta, 5);
  EXPECT_TRUE(d.smoother.estimate_imu_offset);
  EXPECT_EQ(d.smoother.solver.max_iterations, 17);
  EXPECT_EQ(d.sensors, SensorSuite::kLIC);
  EXPECT_EQ(d.alignment, Alignment::kYawTranslation);
}

TEST(Csv, LogRoundTripIsExact) {
  const MeasurementLog log = small_log(2);
  const fs::path dir = scratch("log");
  const auto files = save_log(dir.string(), log);
  EXPECT_EQ(files.size(), 5u);  // imu, bias, 2 lidar, camera
  const MeasurementLog back = load_log(dir.string(), 2);

  ASSERT_EQ(back.imu.size(), log.imu.size());
  for (std::size_t i = 0; i < log.imu.size(); ++i) {
    EXPECT_EQ(back.imu[i].t, log.imu[i].t);
    EXPECT_EQ(back.imu[i].gyro, log.imu[i].gyro);
    EXPECT_EQ(back.imu[i].accel, log.imu[i].accel);
    EXPECT_EQ(back.imu_true_bias[i].accel, log.imu_true_bias[i].accel);
  }
  ASSERT_EQ(back.lidar.size(), 2u);
  for (int s = 0; s < 2; ++s) {
    ASSERT_EQ(back.lidar[s].size(), log.lidar[s].size());
    for (std::size_t i = 0; i < log.lidar[s].size(); ++i) {
      EXPECT_EQ(back.lidar[s][i].t, log.lidar[s][i].t);
      EXPECT_EQ(back.lidar[s][i].point, log.lidar[s][i].point);
      EXPECT_EQ(back.lidar[s][i].plane_id, log.lidar[s][i].plane_id);
      EXPECT_EQ(back.lidar[s][i].stream, s);
    }
  }
  // Frames without observations carry no rows.
  std::size_t nonempty = 0;
  for (const auto& f : log.camera) nonempty += !f.obs.empty();
  ASSERT_EQ(back.camera.size(), nonempty);
  std::size_t j = 0;
  for (const auto& f : log.camera) {
    if (f.obs.empty()) continue;
    const auto& g = back.camera[j++];
    EXPECT_EQ(g.t, f.t);
    ASSERT_EQ(g.obs.size(), f.obs.size());
    for (std::size_t k = 0; k < f.obs.size(); ++k) {
      EXPECT_EQ(g.obs[k].track_id, f.obs[k].track_id);
      EXPECT_EQ(g.obs[k].obs, f.obs[k].obs);
      EXPECT_EQ(g.landmark_ids[k], f.landmark_ids[k]);
    }
  }
}

TEST(Csv, TrajectoryRoundTrip) {
  std::vector<PoseSample> s;
  for (int i = 0; i < 20; ++i)
    s.push_back(PoseSample{0.01 * i, exp_so3(Vec3(0.1 * i, -0.05, 0.3)), Vec3(i, 0.5 * i, -1.0 / 7.0)});
  const fs::path p = scratch("traj") / "trajectory.csv";
  write_trajectory_csv(p.string(), s);
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,px,py,pz,qw,qx,qy,qz");
  const auto back = read_trajectory_csv(p.string());
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].t, s[i].t);
    EXPECT_EQ(back[i].position, s[i].position);
    EXPECT_LT(log_so3(back[i].rotation.inverse() * s[i].rotation).norm(), 1e-14);
  }
}

TEST(Csv, MalformedInputIsAnIoError) {
  const fs::path dir = scratch("bad");
  {
    std::ofstream f(dir / "imu.csv");
    f << "t,gx,gy,gz,ax,ay,az\n0,1,2,3,4,5\n";
  }
  EXPECT_THROW(read_imu_csv((dir / "imu.csv").string()), IoError);
  {
    std::ofstream f(dir / "imu.csv");
    f << "time,gx\n";
  }
  EXPECT_THROW(read_imu_csv((dir / "imu.csv").string()), IoError);
  {
    std::ofstream f(dir / "imu.csv");
    f << "t,gx,gy,gz,ax,ay,az\n0,1,2,x,4,5,6\n";
  }
  EXPECT_THROW(read_imu_csv((dir / "imu.csv").string()), IoError);
  EXPECT_THROW(read_imu_csv((dir / "missing.csv").string()), IoError);
}

TEST(Manifest, Sha256OfKnownString) {
  const fs::path p = scratch("sha") / "abc.txt";
  {
    std::ofstream f(p, std::ios::binary);
    f << "abc";
  }
  EXPECT_EQ(sha256_file(p.string()), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, DetectsTampering) {
  const fs::path dir = scratch("manifest");
  const auto files = save_log(dir.string(), small_log());
  write_manifest(dir.string(), RunConfig{}, files);
  EXPECT_TRUE(verify_manifest(dir.string()).empty());
  {
    std::ofstream f(dir / "imu.csv", std::ios::app);
    f << "\n";
  }
  const auto bad = verify_manifest(dir.string());
  ASSERT_EQ(bad.size(), 1u);
  EXPECT_EQ(bad[0], "imu.csv");
}

TEST(Manifest, SimulationIsByteDeterministic) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  save_log(a.string(), small_log());
  save_log(b.string(), small_log());
  for (const char* f : {"imu.csv", "lidar_0.csv", "camera.csv"})
    EXPECT_EQ(sha256_file((a / f).string()), sha256_file((b / f).string())) << f;
}

TEST(Metrics, JsonHasFixedKeys) {
  PipelineResult r;
  r.ape_se3 = 0.01;
  r.imu_offset = 0.012;
  RunConfig c;
  c.smoother.estimate_imu_offset = true;
  const std::string js = metrics_json(r, c, OffsetTruth{0.01, 0.0});
  for (const char* key : {"\"ape_rmse\"", "\"none\"", "\"se3\"", "\"offsets\"", "\"error\"", "\"wall_time_s\"",
                          "\"stage_timings_s\"", "\"update_local_map\"", "\"update_trajectory\"", "\"update_prior\""})
    EXPECT_NE(js.find(key), std::string::npos) << key;
  const auto j = nlohmann::json::parse(js);
  EXPECT_NEAR(j["offsets"]["imu"]["error"].get<double>(), 0.002, 1e-15);
  EXPECT_EQ(j["ape_rmse"]["se3"].get<double>(), 0.01);
}
