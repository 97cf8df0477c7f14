#include "ctsmooth/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <type_traits>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <json.hpp>

namespace ctsmooth {

ConfigError::ConfigError(const std::string& source, int line, const std::string& key, const std::string& message)
    : std::runtime_error(line > 0 ? fmt::format("{}:{}: {}: {}", source, line, key, message)
                                  : fmt::format("{}: {}: {}", source, key, message)),
      line_(line),
      key_(key) {}

SensorSuite parse_sensor_suite(const std::string& name) {
  if (name == "li") return SensorSuite::kLI;
  if (name == "lic") return SensorSuite::kLIC;
  if (name == "l2i") return SensorSuite::kL2I;
  if (name == "l2ic") return SensorSuite::kL2IC;
  throw std::invalid_argument(fmt::format("unknown sensor suite '{}' (li, lic, l2i, l2ic)", name));
}

std::string to_string(SensorSuite s) {
  switch (s) {
    case SensorSuite::kLI: return "li";
    case SensorSuite::kLIC: return "lic";
    case SensorSuite::kL2I: return "l2i";
    case SensorSuite::kL2IC: return "l2ic";
  }
  return "?";
}

void apply_sensor_suite(RunConfig& c) {
  const bool camera = c.sensors == SensorSuite::kLIC || c.sensors == SensorSuite::kL2IC;
  const bool two = c.sensors == SensorSuite::kL2I || c.sensors == SensorSuite::kL2IC;
  c.smoother.use_camera = camera;
  c.smoother.use_lidar = true;
  c.smoother.lidar_streams = two ? std::vector<int>{0, 1} : std::vector<int>{0};
  c.scenario.num_lidars = std::max(c.scenario.num_lidars, two ? 2 : 1);
}

void match_noise_model(RunConfig& c) {
  const SensorNoise& n = c.scenario.noise;
  auto take = [](double v, double& dst) {
    if (v > 0.0) dst = v;
  };
  take(n.gyro, c.smoother.imu_noise.gyro);
  take(n.accel, c.smoother.imu_noise.accel);
  take(n.gyro_bias_walk, c.smoother.imu_noise.gyro_bias_walk);
  take(n.accel_bias_walk, c.smoother.imu_noise.accel_bias_walk);
  take(n.lidar, c.smoother.lidar_sigma);
  take(n.pixel, c.smoother.pixel_sigma);
}

namespace {

// Map node with key bookkeeping so that leftovers can be reported as unknown.
class Section {
 public:
  Section(YAML::Node node, std::string path, const std::string& source)
      : node_(std::move(node)), path_(std::move(path)), source_(source) {
    if (node_ && !node_.IsNull() && !node_.IsMap())
      throw ConfigError(source_, node_.Mark().line + 1, path_.empty() ? "<root>" : path_, "expected a mapping");
  }

  bool has(const std::string& key) const { return node_.IsMap() && node_[key]; }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    const int line = has(key) ? node_[key].Mark().line + 1 : (node_ ? node_.Mark().line + 1 : 0);
    throw ConfigError(source_, line, full(key), message);
  }

  template <typename T>
  bool read(const std::string& key, T& out, const char* what) {
    if (!has(key)) return false;
    seen_.insert(key);
    const YAML::Node v = node_[key];
    if (!v.IsScalar()) fail(key, fmt::format("expected {}", what));
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      fail(key, fmt::format("expected {}, got '{}'", what, v.Scalar()));
    }
    return true;
  }

  void text(const std::string& key, std::string& out) { read(key, out, "a string"); }
  void flag(const std::string& key, bool& out) { read(key, out, "a boolean"); }

  void number(const std::string& key, double& out, double lo = -HUGE_VAL, double hi = HUGE_VAL,
              bool open_lo = false) {
    double v = out;
    if (!read(key, v, "a number")) return;
    if (!std::isfinite(v)) fail(key, "must be finite");
    if (open_lo ? !(v > lo) : !(v >= lo)) fail(key, fmt::format("must be {} {:g}, got {:g}", open_lo ? ">" : ">=", lo, v));
    if (v > hi) fail(key, fmt::format("must be <= {:g}, got {:g}", hi, v));
    out = v;
  }
  void positive(const std::string& key, double& out) { number(key, out, 0.0, HUGE_VAL, true); }
  void nonneg(const std::string& key, double& out) { number(key, out, 0.0); }

  void integer(const std::string& key, int& out, int lo, int hi = std::numeric_limits<int>::max()) {
    int v = out;
    if (!read(key, v, "an integer")) return;
    if (v < lo || v > hi) fail(key, fmt::format("must be in [{}, {}], got {}", lo, hi, v));
    out = v;
  }

  void vec3(const std::string& key, Vec3& out) {
    if (!has(key)) return;
    seen_.insert(key);
    const YAML::Node v = node_[key];
    if (!v.IsSequence() || v.size() != 3) fail(key, "expected a sequence of 3 numbers");
    for (int i = 0; i < 3; ++i) {
      try {
        out[i] = v[i].as<double>();
      } catch (const YAML::Exception&) {
        fail(key, "expected a sequence of 3 numbers");
      }
    }
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    return Section(has(key) ? node_[key] : YAML::Node(), full(key), source_);
  }

  void done() const {
    if (!node_.IsMap()) return;
    for (const auto& kv : node_) {
      const std::string k = kv.first.as<std::string>();
      if (!seen_.count(k)) throw ConfigError(source_, kv.first.Mark().line + 1, full(k), "unknown key");
    }
  }

 private:
  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  YAML::Node node_;
  std::string path_;
  const std::string& source_;
  std::set<std::string> seen_;
};

template <typename Fn>
void parse_enum(Section& s, const std::string& key, Fn fn) {
  std::string v;
  if (!s.has(key)) return;
  s.text(key, v);
  try {
    fn(v);
  } catch (const std::invalid_argument& e) {
    s.fail(key, e.what());
  }
}

void parse_scenario(Section s, ScenarioConfig& c) {
  if (s.has("preset")) {
    parse_enum(s, "preset", [&](const std::string& v) { c = preset(v); });
  }
  s.text("name", c.name);
  s.read("seed", c.seed, "an unsigned integer");
  s.number("duration", c.trajectory.duration, 1.0);
  s.positive("room_half_extent", c.room_half_extent);
  s.flag("single_plane", c.single_plane);
  s.integer("num_landmarks", c.num_landmarks, 0);
  s.flag("zero_noise", c.zero_noise);
  s.number("true_imu_offset", c.true_imu_offset, -0.5, 0.5);
  s.number("true_cam_offset", c.true_cam_offset, -0.5, 0.5);

  Section t = s.sub("trajectory");
  TrajectoryParams& p = c.trajectory;
  parse_enum(t, "kind", [&](const std::string& v) { p.kind = parse_trajectory_kind(v); });
  t.positive("knot_dt", p.knot_dt);
  t.vec3("start_position", p.start_position);
  t.number("start_roll", p.start_roll, -1.5, 1.5);
  t.number("start_pitch", p.start_pitch, -1.5, 1.5);
  t.vec3("velocity", p.velocity);
  t.positive("radius", p.radius);
  t.number("angular_rate", p.angular_rate);
  t.nonneg("rest_duration", p.rest_duration);
  t.nonneg("position_amplitude", p.position_amplitude);
  t.nonneg("yaw_amplitude", p.yaw_amplitude);
  t.nonneg("tilt_amplitude", p.tilt_amplitude);
  t.positive("max_angular_rate", p.max_angular_rate);
  t.positive("max_acceleration", p.max_acceleration);
  t.done();
  s.done();
}

void parse_sensors(Section s, ScenarioConfig& c) {
  Section imu = s.sub("imu");
  imu.positive("rate", c.imu_rate);
  imu.nonneg("gyro_noise", c.noise.gyro);
  imu.nonneg("accel_noise", c.noise.accel);
  imu.nonneg("gyro_bias_walk", c.noise.gyro_bias_walk);
  imu.nonneg("accel_bias_walk", c.noise.accel_bias_walk);
  imu.vec3("gyro_bias0", c.noise.gyro_bias0);
  imu.vec3("accel_bias0", c.noise.accel_bias0);
  imu.done();

  Section lidar = s.sub("lidar");
  lidar.positive("rate", c.lidar_rate);
  lidar.integer("points_per_scan", c.points_per_scan, 1);
  lidar.integer("count", c.num_lidars, 1, 8);
  lidar.nonneg("noise", c.noise.lidar);
  lidar.number("max_elevation", c.lidar_max_elevation, 0.0, 1.5707963267948966, true);
  lidar.done();

  Section cam = s.sub("camera");
  cam.positive("rate", c.camera_rate);
  cam.nonneg("pixel_noise", c.noise.pixel);
  cam.number("half_fov", c.camera_half_fov, 0.0, 1.5, true);
  cam.positive("max_range", c.camera_max_range);
  cam.done();
  s.done();
}

void parse_solver(Section s, SolverConfig& c) {
  s.integer("max_iterations", c.max_iterations, 0);
  s.positive("initial_damping", c.initial_damping);
  s.number("damping_up", c.damping_up, 1.0, HUGE_VAL, true);
  s.number("damping_down", c.damping_down, 0.0, 1.0, true);
  s.nonneg("relative_cost_tol", c.relative_cost_tol);
  s.nonneg("gradient_tol", c.gradient_tol);
  s.nonneg("parameter_tol", c.parameter_tol);
  s.positive("rank_tol", c.rank_tol);
  s.flag("check_rank", c.check_rank);
  s.done();
}

void parse_smoother(Section s, SmootherConfig& c) {
  s.positive("knot_dt", c.knot_dt);
  s.integer("eta", c.eta, 1, 100);
  s.positive("lidar_sigma", c.lidar_sigma);
  s.positive("pixel_sigma", c.pixel_sigma);
  s.positive("velocity_sigma", c.velocity_sigma);
  s.nonneg("lidar_huber", c.lidar_huber);
  s.nonneg("visual_huber", c.visual_huber);
  s.positive("association_gate", c.association_gate);
  s.integer("association_passes", c.association_passes, 1, 10);
  s.integer("lidar_stride", c.lidar_stride, 1);
  s.positive("static_duration", c.static_duration);
  s.positive("static_accel_std", c.static_accel_std);
  s.positive("static_gyro_std", c.static_gyro_std);
  s.positive("init_rot_sigma", c.init_rot_sigma);
  s.positive("init_pos_sigma", c.init_pos_sigma);
  s.positive("init_gyro_bias_sigma", c.init_gyro_bias_sigma);
  s.positive("init_accel_bias_sigma", c.init_accel_bias_sigma);
  s.flag("estimate_imu_offset", c.estimate_imu_offset);
  s.flag("estimate_cam_offset", c.estimate_cam_offset);
  s.nonneg("calibration_start", c.calibration_start);
  s.positive("offset_prior_sigma", c.offset_prior_sigma);
  s.positive("max_abs_offset", c.max_abs_offset);
  s.number("initial_imu_offset", c.initial_imu_offset, -c.max_abs_offset, c.max_abs_offset);
  s.number("initial_cam_offset", c.initial_cam_offset, -c.max_abs_offset, c.max_abs_offset);
  s.nonneg("offset_margin", c.offset_margin);

  Section n = s.sub("imu_noise");
  n.positive("gyro", c.imu_noise.gyro);
  n.positive("accel", c.imu_noise.accel);
  n.positive("gyro_bias_walk", c.imu_noise.gyro_bias_walk);
  n.positive("accel_bias_walk", c.imu_noise.accel_bias_walk);
  n.done();

  Section k = s.sub("keyframes");
  k.integer("capacity", c.keyframes.capacity, 2, 1000);
  k.nonneg("min_parallax", c.keyframes.min_parallax);
  k.integer("min_tracked", c.keyframes.min_tracked, 0);
  k.nonneg("min_ray_angle", c.keyframes.min_ray_angle);
  k.positive("depth_min", c.keyframes.depth_min);
  k.positive("depth_max", c.keyframes.depth_max);
  k.positive("reproj_max", c.keyframes.reproj_max);
  k.done();
  if (c.keyframes.depth_max <= c.keyframes.depth_min) k.fail("depth_max", "must exceed depth_min");
  s.done();
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source, const RunConfig& base) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source, e.mark.line + 1, "<syntax>", e.msg);
  }
  RunConfig c = base;
  Section top(root, "", source);
  if (top.has("scenario")) parse_scenario(top.sub("scenario"), c.scenario);
  if (top.has("sensors")) {
    parse_sensors(top.sub("sensors"), c.scenario);
    match_noise_model(c);
  }
  if (top.has("smoother")) parse_smoother(top.sub("smoother"), c.smoother);
  if (top.has("solver")) parse_solver(top.sub("solver"), c.smoother.solver);
  if (top.has("run")) {
    Section r = top.sub("run");
    parse_enum(r, "sensors", [&](const std::string& v) { c.sensors = parse_sensor_suite(v); });
    parse_enum(r, "alignment", [&](const std::string& v) { c.alignment = parse_alignment(v); });
    r.flag("seed_at_truth", c.seed_at_truth);
    r.done();
  }
  top.done();
  if (c.smoother.knot_dt != c.scenario.trajectory.knot_dt && c.seed_at_truth)
    throw ConfigError(source, 0, "run.seed_at_truth", "needs smoother.knot_dt == scenario.trajectory.knot_dt");
  apply_sensor_suite(c);
  return c;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open config '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path, base);
}

namespace {

// Shortest representation that parses back to the same double.
std::string num(double v) { return fmt::format("{}", v); }

void emit_vec3(YAML::Emitter& e, const char* key, const Vec3& v) {
  e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq << num(v.x()) << num(v.y()) << num(v.z())
    << YAML::EndSeq;
}

template <typename T>
void kv(YAML::Emitter& e, const char* key, const T& v) {
  if constexpr (std::is_floating_point_v<T>)
    e << YAML::Key << key << YAML::Value << num(v);
  else
    e << YAML::Key << key << YAML::Value << v;
}

}  // namespace

std::string emit_run_config(const RunConfig& c) {
  YAML::Emitter e;
  e << YAML::BeginMap;

  const ScenarioConfig& s = c.scenario;
  const TrajectoryParams& p = s.trajectory;
  e << YAML::Key << "scenario" << YAML::Value << YAML::BeginMap;
  kv(e, "name", s.name);
  kv(e, "seed", s.seed);
  kv(e, "duration", p.duration);
  kv(e, "room_half_extent", s.room_half_extent);
  kv(e, "single_plane", s.single_plane);
  kv(e, "num_landmarks", s.num_landmarks);
  kv(e, "zero_noise", s.zero_noise);
  kv(e, "true_imu_offset", s.true_imu_offset);
  kv(e, "true_cam_offset", s.true_cam_offset);
  e << YAML::Key << "trajectory" << YAML::Value << YAML::BeginMap;
  kv(e, "kind", to_string(p.kind));
  kv(e, "knot_dt", p.knot_dt);
  emit_vec3(e, "start_position", p.start_position);
  kv(e, "start_roll", p.start_roll);
  kv(e, "start_pitch", p.start_pitch);
  emit_vec3(e, "velocity", p.velocity);
  kv(e, "radius", p.radius);
  kv(e, "angular_rate", p.angular_rate);
  kv(e, "rest_duration", p.rest_duration);
  kv(e, "position_amplitude", p.position_amplitude);
  kv(e, "yaw_amplitude", p.yaw_amplitude);
  kv(e, "tilt_amplitude", p.tilt_amplitude);
  kv(e, "max_angular_rate", p.max_angular_rate);
  kv(e, "max_acceleration", p.max_acceleration);
  e << YAML::EndMap << YAML::EndMap;

  e << YAML::Key << "sensors" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "imu" << YAML::Value << YAML::BeginMap;
  kv(e, "rate", s.imu_rate);
  kv(e, "gyro_noise", s.noise.gyro);
  kv(e, "accel_noise", s.noise.accel);
  kv(e, "gyro_bias_walk", s.noise.gyro_bias_walk);
  kv(e, "accel_bias_walk", s.noise.accel_bias_walk);
  emit_vec3(e, "gyro_bias0", s.noise.gyro_bias0);
  emit_vec3(e, "accel_bias0", s.noise.accel_bias0);
  e << YAML::EndMap;
  e << YAML::Key << "lidar" << YAML::Value << YAML::BeginMap;
  kv(e, "rate", s.lidar_rate);
  kv(e, "points_per_scan", s.points_per_scan);
  kv(e, "count", s.num_lidars);
  kv(e, "noise", s.noise.lidar);
  kv(e, "max_elevation", s.lidar_max_elevation);
  e << YAML::EndMap;
  e << YAML::Key << "camera" << YAML::Value << YAML::BeginMap;
  kv(e, "rate", s.camera_rate);
  kv(e, "pixel_noise", s.noise.pixel);
  kv(e, "half_fov", s.camera_half_fov);
  kv(e, "max_range", s.camera_max_range);
  e << YAML::EndMap << YAML::EndMap;

  const SmootherConfig& m = c.smoother;
  e << YAML::Key << "smoother" << YAML::Value << YAML::BeginMap;
  kv(e, "knot_dt", m.knot_dt);
  kv(e, "eta", m.eta);
  kv(e, "lidar_sigma", m.lidar_sigma);
  kv(e, "pixel_sigma", m.pixel_sigma);
  kv(e, "velocity_sigma", m.velocity_sigma);
  kv(e, "lidar_huber", m.lidar_huber);
  kv(e, "visual_huber", m.visual_huber);
  kv(e, "association_gate", m.association_gate);
  kv(e, "association_passes", m.association_passes);
  kv(e, "lidar_stride", m.lidar_stride);
  kv(e, "static_duration", m.static_duration);
  kv(e, "static_accel_std", m.static_accel_std);
  kv(e, "static_gyro_std", m.static_gyro_std);
  kv(e, "init_rot_sigma", m.init_rot_sigma);
  kv(e, "init_pos_sigma", m.init_pos_sigma);
  kv(e, "init_gyro_bias_sigma", m.init_gyro_bias_sigma);
  kv(e, "init_accel_bias_sigma", m.init_accel_bias_sigma);
  kv(e, "estimate_imu_offset", m.estimate_imu_offset);
  kv(e, "estimate_cam_offset", m.estimate_cam_offset);
  kv(e, "calibration_start", m.calibration_start);
  kv(e, "offset_prior_sigma", m.offset_prior_sigma);
  kv(e, "max_abs_offset", m.max_abs_offset);
  kv(e, "initial_imu_offset", m.initial_imu_offset);
  kv(e, "initial_cam_offset", m.initial_cam_offset);
  kv(e, "offset_margin", m.offset_margin);
  e << YAML::Key << "imu_noise" << YAML::Value << YAML::BeginMap;
  kv(e, "gyro", m.imu_noise.gyro);
  kv(e, "accel", m.imu_noise.accel);
  kv(e, "gyro_bias_walk", m.imu_noise.gyro_bias_walk);
  kv(e, "accel_bias_walk", m.imu_noise.accel_bias_walk);
  e << YAML::EndMap;
  e << YAML::Key << "keyframes" << YAML::Value << YAML::BeginMap;
  kv(e, "capacity", m.keyframes.capacity);
  kv(e, "min_parallax", m.keyframes.min_parallax);
  kv(e, "min_tracked", m.keyframes.min_tracked);
  kv(e, "min_ray_angle", m.keyframes.min_ray_angle);
  kv(e, "depth_min", m.keyframes.depth_min);
  kv(e, "depth_max", m.keyframes.depth_max);
  kv(e, "reproj_max", m.keyframes.reproj_max);
  e << YAML::EndMap << YAML::EndMap;

  const SolverConfig& v = m.solver;
  e << YAML::Key << "solver" << YAML::Value << YAML::BeginMap;
  kv(e, "max_iterations", v.max_iterations);
  kv(e, "initial_damping", v.initial_damping);
  kv(e, "damping_up", v.damping_up);
  kv(e, "damping_down", v.damping_down);
  kv(e, "relative_cost_tol", v.relative_cost_tol);
  kv(e, "gradient_tol", v.gradient_tol);
  kv(e, "parameter_tol", v.parameter_tol);
  kv(e, "rank_tol", v.rank_tol);
  kv(e, "check_rank", v.check_rank);
  e << YAML::EndMap;

  e << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
  kv(e, "sensors", to_string(c.sensors));
  kv(e, "alignment", to_string(c.alignment));
  kv(e, "seed_at_truth", c.seed_at_truth);
  e << YAML::EndMap;

  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

// ---- CSV --------------------------------------------------------------------------------------

namespace {

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const char* header) : path_(path), f_(std::fopen(path.c_str(), "w")) {
    if (!f_) throw IoError(fmt::format("cannot write '{}'", path));
    fmt::print(f_, "{}\n", header);
  }
  ~CsvWriter() {
    if (f_) std::fclose(f_);
  }
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  template <typename... Args>
  void row(fmt::format_string<Args...> f, Args&&... args) {
    fmt::print(f_, f, std::forward<Args>(args)...);
    std::fputc('\n', f_);
  }
  void close() {
    const bool bad = std::ferror(f_) != 0;
    const bool err = std::fclose(f_) != 0;
    f_ = nullptr;
    if (bad || err) throw IoError(fmt::format("error writing '{}'", path_));
  }

 private:
  std::string path_;
  std::FILE* f_;
};

std::vector<std::vector<std::string>> read_csv(const std::string& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path));
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw IoError(fmt::format("{}:1: expected header '{}'", path, header));
  const std::size_t ncols = std::count(header.begin(), header.end(), ',') + 1;
  std::vector<std::vector<std::string>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != ncols)
      throw IoError(fmt::format("{}:{}: expected {} columns, got {}", path, lineno, ncols, cells.size()));
    rows.push_back(std::move(cells));
  }
  return rows;
}

double to_double(const std::string& s, const std::string& path, std::size_t row) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw IoError(fmt::format("{}:{}: not a number: '{}'", path, row + 2, s));
  return v;
}

int to_int(const std::string& s, const std::string& path, std::size_t row) {
  const double v = to_double(s, path, row);
  if (v != std::floor(v)) throw IoError(fmt::format("{}:{}: not an integer: '{}'", path, row + 2, s));
  return static_cast<int>(v);
}

constexpr const char* kImuHeader = "t,gx,gy,gz,ax,ay,az";
constexpr const char* kBiasHeader = "t,bgx,bgy,bgz,bax,bay,baz";
constexpr const char* kLidarHeader = "t,x,y,z,plane_id,stream";
constexpr const char* kCameraHeader = "t,track_id,u,v,landmark_id";
constexpr const char* kTrajectoryHeader = "t,px,py,pz,qw,qx,qy,qz";

}  // namespace

void write_imu_csv(const std::string& path, const std::vector<ImuMeas>& imu) {
  CsvWriter w(path, kImuHeader);
  for (const auto& m : imu)
    w.row("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", m.t, m.gyro.x(), m.gyro.y(), m.gyro.z(),
          m.accel.x(), m.accel.y(), m.accel.z());
  w.close();
}

std::vector<ImuMeas> read_imu_csv(const std::string& path) {
  std::vector<ImuMeas> out;
  const auto rows = read_csv(path, kImuHeader);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double v[7];
    for (int j = 0; j < 7; ++j) v[j] = to_double(rows[i][j], path, i);
    out.push_back(ImuMeas{v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
  }
  return out;
}

void write_imu_bias_csv(const std::string& path, const std::vector<ImuMeas>& imu, const std::vector<BiasPair>& bias) {
  if (imu.size() != bias.size()) throw std::invalid_argument("imu and bias streams differ in length");
  CsvWriter w(path, kBiasHeader);
  for (std::size_t i = 0; i < imu.size(); ++i) {
    const BiasPair& b = bias[i];
    w.row("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", imu[i].t, b.gyro.x(), b.gyro.y(), b.gyro.z(),
          b.accel.x(), b.accel.y(), b.accel.z());
  }
  w.close();
}

std::vector<BiasPair> read_imu_bias_csv(const std::string& path) {
  std::vector<BiasPair> out;
  const auto rows = read_csv(path, kBiasHeader);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double v[7];
    for (int j = 0; j < 7; ++j) v[j] = to_double(rows[i][j], path, i);
    out.push_back(BiasPair{Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
  }
  return out;
}

void write_lidar_csv(const std::string& path, const std::vector<LidarPointMeas>& points) {
  CsvWriter w(path, kLidarHeader);
  for (const auto& p : points)
    w.row("{:.17g},{:.17g},{:.17g},{:.17g},{},{}", p.t, p.point.x(), p.point.y(), p.point.z(), p.plane_id, p.stream);
  w.close();
}

std::vector<LidarPointMeas> read_lidar_csv(const std::string& path) {
  std::vector<LidarPointMeas> out;
  const auto rows = read_csv(path, kLidarHeader);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    LidarPointMeas p;
    p.t = to_double(rows[i][0], path, i);
    p.point = Vec3(to_double(rows[i][1], path, i), to_double(rows[i][2], path, i), to_double(rows[i][3], path, i));
    p.plane_id = to_int(rows[i][4], path, i);
    p.stream = to_int(rows[i][5], path, i);
    out.push_back(p);
  }
  return out;
}

void write_camera_csv(const std::string& path, const std::vector<CameraFrame>& frames) {
  CsvWriter w(path, kCameraHeader);
  for (const auto& f : frames) {
    for (std::size_t i = 0; i < f.obs.size(); ++i) {
      const int lm = i < f.landmark_ids.size() ? f.landmark_ids[i] : -1;
      w.row("{:.17g},{},{:.17g},{:.17g},{}", f.t, f.obs[i].track_id, f.obs[i].obs.x(), f.obs[i].obs.y(), lm);
    }
  }
  w.close();
}

std::vector<CameraFrame> read_camera_csv(const std::string& path) {
  std::vector<CameraFrame> out;
  const auto rows = read_csv(path, kCameraHeader);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double t = to_double(rows[i][0], path, i);
    if (out.empty() || out.back().t != t) {
      if (!out.empty() && t < out.back().t) throw IoError(fmt::format("{}:{}: stamps not monotone", path, i + 2));
      out.push_back(CameraFrame{t, {}, {}});
    }
    VisualObs o;
    o.t = t;
    o.track_id = to_int(rows[i][1], path, i);
    o.obs = Vec2(to_double(rows[i][2], path, i), to_double(rows[i][3], path, i));
    out.back().obs.push_back(o);
    out.back().landmark_ids.push_back(to_int(rows[i][4], path, i));
  }
  return out;
}

void write_trajectory_csv(const std::string& path, const std::vector<PoseSample>& samples) {
  CsvWriter w(path, kTrajectoryHeader);
  for (const auto& s : samples) {
    const Eigen::Quaterniond q = s.rotation.quaternion();
    w.row("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", s.t, s.position.x(), s.position.y(),
          s.position.z(), q.w(), q.x(), q.y(), q.z());
  }
  w.close();
}

std::vector<PoseSample> read_trajectory_csv(const std::string& path) {
  std::vector<PoseSample> out;
  const auto rows = read_csv(path, kTrajectoryHeader);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double v[8];
    for (int j = 0; j < 8; ++j) v[j] = to_double(rows[i][j], path, i);
    out.push_back(PoseSample{v[0], Rotation::from_quaternion(Eigen::Quaterniond(v[4], v[5], v[6], v[7])),
                             Vec3(v[1], v[2], v[3])});
  }
  return out;
}

void write_diagnostics_csv(const std::string& path, const std::vector<WindowDiagnostics>& diags) {
  std::string header =
      "window,t_begin,t_end,cost_before,cost_after,iterations,termination,imu_offset,cam_offset,"
      "marginalized_dim,prior_dim,rank_defect,marginalization_singular,lidar_degenerate,lidar_min_eig_ratio,"
      "keyframes,landmarks,active_ctrl";
  for (int t = 0; t < kNumFactorTypes; ++t) header += fmt::format(",used_{}", factor_type_name(FactorType(t)));
  header += ",skipped";
  CsvWriter w(path, header.c_str());
  for (const auto& d : diags) {
    std::string used;
    for (int t = 0; t < kNumFactorTypes; ++t) used += fmt::format(",{}", d.counts.used[t]);
    w.row("{},{:.17g},{:.17g},{:.17g},{:.17g},{},{},{:.17g},{:.17g},{},{},{},{},{},{:.6g},{},{},{}{},{}", d.window,
          d.t_begin, d.t_end, d.cost_before, d.cost_after, d.iterations, d.termination, d.imu_offset, d.cam_offset,
          d.marginalized_dim, d.prior_dim, d.rank_defect, int(d.marginalization_singular), int(d.lidar_degenerate),
          d.lidar_min_eig_ratio, d.keyframes, d.landmarks, d.active_ctrl, used, d.counts.total_skipped());
  }
  w.close();
}

std::vector<std::string> save_log(const std::string& dir, const MeasurementLog& log) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir, ec.message()));
  std::vector<std::string> files;
  auto at = [&](const std::string& name) {
    files.push_back(name);
    return (fs::path(dir) / name).string();
  };
  write_imu_csv(at("imu.csv"), log.imu);
  if (!log.imu_true_bias.empty()) write_imu_bias_csv(at("imu_bias.csv"), log.imu, log.imu_true_bias);
  for (std::size_t s = 0; s < log.lidar.size(); ++s) write_lidar_csv(at(fmt::format("lidar_{}.csv", s)), log.lidar[s]);
  write_camera_csv(at("camera.csv"), log.camera);
  return files;
}

MeasurementLog load_log(const std::string& dir, int num_lidars) {
  namespace fs = std::filesystem;
  MeasurementLog log;
  const fs::path d(dir);
  log.imu = read_imu_csv((d / "imu.csv").string());
  if (fs::exists(d / "imu_bias.csv")) {
    log.imu_true_bias = read_imu_bias_csv((d / "imu_bias.csv").string());
    if (log.imu_true_bias.size() != log.imu.size()) throw IoError("imu_bias.csv does not match imu.csv");
  }
  for (int s = 0; s < num_lidars; ++s) log.lidar.push_back(read_lidar_csv((d / fmt::format("lidar_{}.csv", s)).string()));
  if (fs::exists(d / "camera.csv")) log.camera = read_camera_csv((d / "camera.csv").string());
  return log;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path));
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("SHA-256 unavailable");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

void write_manifest(const std::string& dir, const RunConfig& config, const std::vector<std::string>& files) {
  nlohmann::ordered_json j;
  j["scenario"] = config.scenario.name;
  j["seed"] = config.scenario.seed;
  j["sensors"] = to_string(config.sensors);
  j["duration"] = config.scenario.trajectory.duration;
  j["true_imu_offset"] = config.scenario.true_imu_offset;
  j["true_cam_offset"] = config.scenario.true_cam_offset;
  nlohmann::ordered_json sums = nlohmann::ordered_json::object();
  for (const auto& f : files) sums[f] = sha256_file((std::filesystem::path(dir) / f).string());
  j["sha256"] = sums;
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path));
  out << j.dump(2) << "\n";
}

std::vector<std::string> verify_manifest(const std::string& dir) {
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(fmt::format("{}: {}", path, e.what()));
  }
  std::vector<std::string> bad;
  const nlohmann::json sums = j.value("sha256", nlohmann::json::object());
  for (const auto& [name, sum] : sums.items()) {
    const auto file = std::filesystem::path(dir) / name;
    if (!std::filesystem::exists(file) || sha256_file(file.string()) != sum.get<std::string>()) bad.push_back(name);
  }
  return bad;
}

std::string metrics_json(const PipelineResult& r, const RunConfig& c, const OffsetTruth& truth) {
  nlohmann::ordered_json j;
  j["scenario"] = c.scenario.name;
  j["seed"] = c.scenario.seed;
  j["sensors"] = to_string(c.sensors);
  j["alignment"] = to_string(c.alignment);
  j["ape_rmse"] = {{"none", r.ape_none}, {"yaw", r.ape_yaw}, {"se3", r.ape_se3}};
  const double selected = c.alignment == Alignment::kNone            ? r.ape_none
                          : c.alignment == Alignment::kYawTranslation ? r.ape_yaw
                                                                      : r.ape_se3;
  j["ape_rmse_selected"] = selected;
  j["offsets"] = {
      {"imu",
       {{"estimate", r.imu_offset}, {"truth", truth.imu}, {"error", r.imu_offset - truth.imu},
        {"estimated", c.smoother.estimate_imu_offset}}},
      {"cam",
       {{"estimate", r.cam_offset}, {"truth", truth.cam}, {"error", r.cam_offset - truth.cam},
        {"estimated", c.smoother.estimate_cam_offset}}},
  };
  j["wall_time_s"] = r.wall_time;
  j["data_duration_s"] = c.scenario.trajectory.duration;
  j["stage_timings_s"] = {{"update_local_map", r.timings.update_local_map},
                          {"update_trajectory", r.timings.update_trajectory},
                          {"update_prior", r.timings.update_prior},
                          {"others", r.timings.others},
                          {"total", r.timings.total()}};
  j["windows"] = r.windows;
  j["degenerate_windows"] = r.degenerate_windows;
  j["rank_deficient_windows"] = r.rank_deficient_windows;
  j["final_cost"] = r.final_cost;
  j["max_cost"] = r.max_cost;
  return j.dump(2) + "\n";
}

}  // namespace ctsmooth
