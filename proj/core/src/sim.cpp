#include "ctsmooth/sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

#include <Eigen/SVD>
#include <fmt/format.h>

namespace ctsmooth {

namespace {

using Rng = std::mt19937_64;

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  return Rng(seq);
}

Vec3 gauss3(Rng& rng, double sigma) {
  if (sigma <= 0.0) return Vec3::Zero();
  std::normal_distribution<double> n(0.0, sigma);
  const double x = n(rng), y = n(rng), z = n(rng);
  return {x, y, z};
}

Rotation rpy(double roll, double pitch, double yaw) {
  return exp_so3(Vec3(0, 0, yaw)) * exp_so3(Vec3(0, pitch, 0)) * exp_so3(Vec3(roll, 0, 0));
}

// Quintic smoothstep: 0 before a, 1 after a + w, zero first and second derivative at both ends.
double ramp(double t, double a, double w) {
  const double s = std::clamp((t - a) / w, 0.0, 1.0);
  return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}

struct Sinusoid {
  double amp, freq, phase;
};

double eval_sum(const std::vector<Sinusoid>& terms, double t) {
  double v = 0.0;
  for (const auto& s : terms) v += s.amp * std::sin(2.0 * std::numbers::pi * s.freq * t + s.phase);
  return v;
}

std::vector<Sinusoid> random_terms(Rng& rng, double amplitude, int count) {
  std::uniform_real_distribution<double> f(0.05, 0.3), ph(0.0, 2.0 * std::numbers::pi), w(0.5, 1.0);
  std::vector<Sinusoid> out(count);
  double total = 0.0;
  for (auto& s : out) {
    s.amp = w(rng);
    s.freq = f(rng);
    s.phase = ph(rng);
    total += s.amp;
  }
  for (auto& s : out) s.amp *= amplitude / total;
  return out;
}

int num_ctrl_for(double duration, double dt) { return static_cast<int>(std::ceil(duration / dt)) + 4; }

struct Bounds {
  double omega = 0.0;
  double accel = 0.0;
};

Bounds kinematic_bounds(const TrueTrajectory& tr) {
  Bounds b;
  for (double t = 0.0; t < tr.duration; t += 0.005) {
    b.omega = std::max(b.omega, tr.rot.body_angular_velocity(t).norm());
    b.accel = std::max(b.accel, tr.pos.acceleration(t).norm());
  }
  return b;
}

TrueTrajectory random_smooth(const TrajectoryParams& p, std::uint64_t seed) {
  const KnotGrid grid{0.0, p.knot_dt, num_ctrl_for(p.duration, p.knot_dt)};
  double scale = 1.0;
  for (int attempt = 0; attempt < 30; ++attempt) {
    Rng rng = make_rng(seed, 0x7a11);
    std::array<std::vector<Sinusoid>, 3> pos_terms{random_terms(rng, scale * p.position_amplitude, 3),
                                                   random_terms(rng, scale * p.position_amplitude, 3),
                                                   random_terms(rng, 0.4 * scale * p.position_amplitude, 2)};
    std::vector<Sinusoid> yaw = random_terms(rng, scale * p.yaw_amplitude, 3);
    std::vector<Sinusoid> roll = random_terms(rng, scale * p.tilt_amplitude, 2);
    std::vector<Sinusoid> pitch = random_terms(rng, scale * p.tilt_amplitude, 2);
    // Shift phases so every term starts at zero when the ramp begins.
    const double t_on = p.rest_duration;
    auto anchor = [t_on](std::vector<Sinusoid>& terms) {
      for (auto& s : terms) s.phase = -2.0 * std::numbers::pi * s.freq * t_on;
    };
    for (auto& terms : pos_terms) anchor(terms);
    anchor(yaw);
    anchor(roll);
    anchor(pitch);

    std::vector<Rotation> rc;
    std::vector<Vec3> pc;
    for (int j = 0; j < grid.num_knots; ++j) {
      const double t = (j - 1) * p.knot_dt;
      const double s = ramp(t, t_on, 2.0);
      Vec3 pos = p.start_position;
      for (int a = 0; a < 3; ++a) pos[a] += s * eval_sum(pos_terms[a], t);
      pc.push_back(pos);
      rc.push_back(rpy(p.start_roll + s * eval_sum(roll, t), p.start_pitch + s * eval_sum(pitch, t),
                       s * eval_sum(yaw, t)));
    }
    TrueTrajectory tr{So3Spline(grid, rc), R3Spline(grid, pc), p.duration};
    const Bounds b = kinematic_bounds(tr);
    if (b.omega < p.max_angular_rate && b.accel < p.max_acceleration) return tr;
    scale *= 0.8;
  }
  throw std::invalid_argument("random-smooth trajectory could not satisfy the kinematic bounds");
}

}  // namespace

TrajectoryKind parse_trajectory_kind(const std::string& name) {
  if (name == "rest") return TrajectoryKind::kRest;
  if (name == "line") return TrajectoryKind::kLine;
  if (name == "circle") return TrajectoryKind::kCircle;
  if (name == "random-smooth") return TrajectoryKind::kRandomSmooth;
  throw std::invalid_argument(fmt::format("unknown trajectory kind '{}'", name));
}

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kRest: return "rest";
    case TrajectoryKind::kLine: return "line";
    case TrajectoryKind::kCircle: return "circle";
    case TrajectoryKind::kRandomSmooth: return "random-smooth";
  }
  return "?";
}

TrueTrajectory generate_trajectory(const TrajectoryParams& p, std::uint64_t seed) {
  if (!(p.duration >= 1.0)) throw std::invalid_argument("trajectory duration must be >= 1 s");
  if (!(p.knot_dt > 0.0)) throw std::invalid_argument("trajectory knot_dt must be > 0");
  const KnotGrid grid{0.0, p.knot_dt, num_ctrl_for(p.duration, p.knot_dt)};
  const Rotation r0 = rpy(p.start_roll, p.start_pitch, 0.0);
  std::vector<Rotation> rc;
  std::vector<Vec3> pc;
  switch (p.kind) {
    case TrajectoryKind::kRest:
      rc.assign(grid.num_knots, r0);
      pc.assign(grid.num_knots, p.start_position);
      break;
    case TrajectoryKind::kLine:
      for (int j = 0; j < grid.num_knots; ++j) {
        rc.push_back(r0);
        pc.push_back(p.start_position + (j - 1) * p.knot_dt * p.velocity);
      }
      break;
    case TrajectoryKind::kCircle: {
      if (!(p.radius > 0.0)) throw std::invalid_argument("circle radius must be > 0");
      // The spline value at a knot averages neighboring control points, which
      // shrinks a sampled circle; inflate the control radius to compensate.
      const double w = p.angular_rate * p.knot_dt;
      const double rho = p.radius * 6.0 / (4.0 + 2.0 * std::cos(w));
      for (int j = 0; j < grid.num_knots; ++j) {
        const double th = p.angular_rate * (j - 1) * p.knot_dt;
        rc.push_back(exp_so3(Vec3(0, 0, th + std::numbers::pi / 2.0)));
        pc.push_back(p.start_position + rho * Vec3(std::cos(th), std::sin(th), 0.0));
      }
      break;
    }
    case TrajectoryKind::kRandomSmooth:
      return random_smooth(p, seed);
  }
  return TrueTrajectory{So3Spline(grid, rc), R3Spline(grid, pc), p.duration};
}

Extrinsic default_camera_extrinsic() {
  Mat3 r;
  r.col(0) = Vec3(0, -1, 0);
  r.col(1) = Vec3(0, 0, -1);
  r.col(2) = Vec3(1, 0, 0);
  return Extrinsic{Rotation::from_orthonormal(r), Vec3(0.1, 0.0, 0.05)};
}

Extrinsic default_lidar_extrinsic(int stream) {
  if (stream == 0) return Extrinsic{exp_so3(Vec3(0.01, -0.02, 0.015)), Vec3(0.0, 0.0, 0.1)};
  const double yaw = std::numbers::pi / 2.0 * stream;
  return Extrinsic{exp_so3(Vec3(0, 0, yaw)) * exp_so3(Vec3(-0.015, 0.01, 0.0)), Vec3(0.05, 0.05 * stream, 0.12)};
}

GroundTruthScenario make_scenario(const ScenarioConfig& in) {
  ScenarioConfig cfg = in;
  if (cfg.imu_rate <= 0.0) throw std::invalid_argument("imu_rate must be > 0");
  if (cfg.lidar_rate <= 0.0) throw std::invalid_argument("lidar_rate must be > 0");
  if (cfg.camera_rate <= 0.0) throw std::invalid_argument("camera_rate must be > 0");
  if (cfg.points_per_scan <= 0) throw std::invalid_argument("points_per_scan must be > 0");
  if (cfg.num_lidars < 0) throw std::invalid_argument("num_lidars must be >= 0");
  if (cfg.zero_noise) {
    SensorNoise z;
    z.gyro = z.accel = z.gyro_bias_walk = z.accel_bias_walk = z.lidar = z.pixel = 0.0;
    z.gyro_bias0.setZero();
    z.accel_bias0.setZero();
    cfg.noise = z;
  }
  while (static_cast<int>(cfg.lidar_extrinsics.size()) < cfg.num_lidars)
    cfg.lidar_extrinsics.push_back(default_lidar_extrinsic(static_cast<int>(cfg.lidar_extrinsics.size())));

  GroundTruthScenario sc;
  sc.config = cfg;
  sc.trajectory = generate_trajectory(cfg.trajectory, cfg.seed);

  const double h = cfg.room_half_extent;
  if (cfg.single_plane) {
    sc.planes.push_back(PlaneCP{Vec3(0, 0, h)});
  } else {
    for (int a = 0; a < 3; ++a) {
      for (double s : {1.0, -1.0}) {
        Vec3 n = Vec3::Zero();
        n[a] = s;
        sc.planes.push_back(PlaneCP{h * n});
      }
    }
  }

  Rng rng = make_rng(cfg.seed, 0x1a4d);
  std::uniform_int_distribution<int> wall(0, 5);
  std::uniform_real_distribution<double> along(-0.9 * h, 0.9 * h), inset(0.05, 0.5);
  for (int i = 0; i < cfg.num_landmarks; ++i) {
    const int w = wall(rng);
    const int axis = w / 2;
    const double sign = (w % 2 == 0) ? 1.0 : -1.0;
    Vec3 x;
    for (int a = 0; a < 3; ++a) x[a] = along(rng);
    x[axis] = sign * (h - inset(rng));
    sc.landmarks.push_back(x);
  }
  return sc;
}

std::vector<ImuMeas> generate_imu(const GroundTruthScenario& sc, std::vector<BiasPair>* true_bias) {
  const ScenarioConfig& cfg = sc.config;
  const TrueTrajectory& tr = sc.trajectory;
  Rng rng = make_rng(cfg.seed, 0x1);
  const double step = 1.0 / cfg.imu_rate;
  BiasPair bias{cfg.noise.gyro_bias0, cfg.noise.accel_bias0};
  std::vector<ImuMeas> out;
  if (true_bias) true_bias->clear();
  for (long k = 0;; ++k) {
    const double tau = k * step;
    if (tau >= tr.duration) break;
    if (k > 0) {
      bias.gyro += gauss3(rng, cfg.noise.gyro_bias_walk * std::sqrt(step));
      bias.accel += gauss3(rng, cfg.noise.accel_bias_walk * std::sqrt(step));
    }
    const RotationEval re = tr.rot.evaluate(tau, false);
    const Vec3 acc = tr.pos.acceleration(tau);
    ImuMeas m;
    m.t = tau - cfg.true_imu_offset;
    m.gyro = re.omega + bias.gyro + gauss3(rng, cfg.noise.gyro);
    m.accel = re.rotation.matrix().transpose() * (acc - kGravity) + bias.accel + gauss3(rng, cfg.noise.accel);
    out.push_back(m);
    if (true_bias) true_bias->push_back(bias);
  }
  return out;
}

std::vector<LidarPointMeas> generate_lidar(const GroundTruthScenario& sc, int stream) {
  const ScenarioConfig& cfg = sc.config;
  if (stream < 0 || stream >= static_cast<int>(cfg.lidar_extrinsics.size()))
    throw std::out_of_range(fmt::format("lidar stream {} not configured", stream));
  const TrueTrajectory& tr = sc.trajectory;
  const Extrinsic& ext = cfg.lidar_extrinsics[stream];
  Rng rng = make_rng(cfg.seed, 0x100 + stream);
  std::uniform_real_distribution<double> elev(-cfg.lidar_max_elevation, cfg.lidar_max_elevation);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double scan_period = 1.0 / cfg.lidar_rate;
  const int n = cfg.points_per_scan;
  std::vector<LidarPointMeas> out;
  for (long s = 0;; ++s) {
    const double t_scan = s * scan_period;
    if (t_scan >= tr.duration) break;
    const double ph = phase(rng);
    for (int j = 0; j < n; ++j) {
      const double t = t_scan + scan_period * j / n;
      const double el = elev(rng);
      const Vec3 noise = gauss3(rng, cfg.noise.lidar);
      if (t >= tr.duration) break;
      const double az = ph + 2.0 * std::numbers::pi * j / n;
      const Vec3 d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const Rotation r_gi = tr.rotation(t);
      const Vec3 o = r_gi * ext.translation + tr.position(t);
      const Vec3 dir = r_gi * (ext.rotation * d);
      double best = std::numeric_limits<double>::infinity();
      int best_id = -1;
      for (int k = 0; k < static_cast<int>(sc.planes.size()); ++k) {
        const Vec3 nrm = sc.planes[k].normal();
        const double den = nrm.dot(dir);
        if (den <= 1e-9) continue;
        const double range = (sc.planes[k].distance() - nrm.dot(o)) / den;
        if (range > 0.0 && range < best) {
          best = range;
          best_id = k;
        }
      }
      if (best_id < 0 || best > 100.0) continue;
      LidarPointMeas m;
      m.t = t;
      m.point = best * d + noise;
      m.plane_id = best_id;
      m.stream = stream;
      out.push_back(m);
    }
  }
  return out;
}

std::vector<CameraFrame> generate_visual(const GroundTruthScenario& sc) {
  const ScenarioConfig& cfg = sc.config;
  const TrueTrajectory& tr = sc.trajectory;
  const Extrinsic& ext = cfg.camera_extrinsic;
  Rng rng = make_rng(cfg.seed, 0x2);
  std::normal_distribution<double> px(0.0, 1.0);
  const double tan_fov = std::tan(cfg.camera_half_fov);
  const double step = 1.0 / cfg.camera_rate;
  const int nl = static_cast<int>(sc.landmarks.size());

  std::vector<CameraFrame> frames;
  std::vector<int> active_track(nl, -1);
  std::map<int, int> track_len;
  int next_track = 0;
  for (long k = 0;; ++k) {
    const double tau = k * step;
    if (tau >= tr.duration) break;
    CameraFrame f;
    f.t = tau - cfg.true_cam_offset;
    const Rotation r_gi = tr.rotation(tau);
    const Mat3 r_gc = r_gi.matrix() * ext.rotation.matrix();
    const Vec3 p_gc = r_gi * ext.translation + tr.position(tau);
    for (int i = 0; i < nl; ++i) {
      const Vec3 pc = r_gc.transpose() * (sc.landmarks[i] - p_gc);
      const double nx = cfg.noise.pixel > 0.0 ? px(rng) * cfg.noise.pixel : 0.0;
      const double ny = cfg.noise.pixel > 0.0 ? px(rng) * cfg.noise.pixel : 0.0;
      const bool visible = pc.z() > 0.2 && pc.norm() < cfg.camera_max_range && std::abs(pc.x()) < tan_fov * pc.z() &&
                           std::abs(pc.y()) < tan_fov * pc.z();
      if (!visible) {
        active_track[i] = -1;
        continue;
      }
      if (active_track[i] < 0) active_track[i] = next_track++;
      const int id = active_track[i];
      ++track_len[id];
      VisualObs o;
      o.t = f.t;
      o.track_id = id;
      o.obs = Vec2(pc.x() / pc.z() + nx, pc.y() / pc.z() + ny);
      f.obs.push_back(o);
      f.landmark_ids.push_back(i);
    }
    frames.push_back(std::move(f));
  }
  // Single-frame sightings cannot be tracked.
  for (auto& f : frames) {
    CameraFrame g;
    g.t = f.t;
    for (std::size_t j = 0; j < f.obs.size(); ++j) {
      if (track_len[f.obs[j].track_id] >= 2) {
        g.obs.push_back(f.obs[j]);
        g.landmark_ids.push_back(f.landmark_ids[j]);
      }
    }
    f = std::move(g);
  }
  return frames;
}

MeasurementLog generate_measurements(const GroundTruthScenario& sc) {
  MeasurementLog log;
  log.imu = generate_imu(sc, &log.imu_true_bias);
  for (int s = 0; s < static_cast<int>(sc.config.lidar_extrinsics.size()); ++s) log.lidar.push_back(generate_lidar(sc, s));
  log.camera = generate_visual(sc);
  return log;
}

ScenarioConfig preset(const std::string& name) {
  ScenarioConfig c;
  c.name = name;
  if (name == "desk-viral") return c;
  if (name == "desk-viral-zero") {
    c.zero_noise = true;
    return c;
  }
  if (name == "rest" || name == "line" || name == "circle") {
    c.trajectory.kind = parse_trajectory_kind(name);
    c.trajectory.duration = 10.0;
    return c;
  }
  if (name == "planar") {
    c.single_plane = true;
    c.trajectory.duration = 5.0;
    return c;
  }
  throw std::invalid_argument(fmt::format("unknown preset '{}'", name));
}

std::vector<std::string> preset_names() { return {"desk-viral", "desk-viral-zero", "rest", "line", "circle", "planar"}; }

Alignment parse_alignment(const std::string& name) {
  if (name == "none") return Alignment::kNone;
  if (name == "yaw" || name == "yaw+translation") return Alignment::kYawTranslation;
  if (name == "se3") return Alignment::kSE3;
  throw std::invalid_argument(fmt::format("unknown alignment '{}'", name));
}

std::string to_string(Alignment a) {
  switch (a) {
    case Alignment::kNone: return "none";
    case Alignment::kYawTranslation: return "yaw";
    case Alignment::kSE3: return "se3";
  }
  return "?";
}

double ape_rmse(const std::vector<PoseSample>& estimate, const std::vector<PoseSample>& truth, Alignment alignment) {
  std::vector<Vec3> e, g;
  std::size_t j = 0;
  for (const auto& s : estimate) {
    while (j < truth.size() && truth[j].t < s.t - 1e-9) ++j;
    if (j < truth.size() && std::abs(truth[j].t - s.t) < 1e-9) {
      e.push_back(s.position);
      g.push_back(truth[j].position);
    }
  }
  const int n = static_cast<int>(e.size());
  if (n < 2) throw std::invalid_argument("ape_rmse needs at least 2 stamp-matched samples");

  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  if (alignment != Alignment::kNone) {
    Vec3 me = Vec3::Zero(), mg = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
      me += e[i];
      mg += g[i];
    }
    me /= n;
    mg /= n;
    if (alignment == Alignment::kSE3) {
      Mat3 cov = Mat3::Zero();
      for (int i = 0; i < n; ++i) cov += (g[i] - mg) * (e[i] - me).transpose();
      Eigen::JacobiSVD<Mat3> svd(cov / n, Eigen::ComputeFullU | Eigen::ComputeFullV);
      Mat3 s = Mat3::Identity();
      if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
      r = svd.matrixU() * s * svd.matrixV().transpose();
    } else {
      double sn = 0.0, cs = 0.0;
      for (int i = 0; i < n; ++i) {
        const Vec3 a = e[i] - me, b = g[i] - mg;
        sn += a.x() * b.y() - a.y() * b.x();
        cs += a.x() * b.x() + a.y() * b.y();
      }
      r = exp_so3(Vec3(0, 0, std::atan2(sn, cs))).matrix();
    }
    t = mg - r * me;
  }
  double sq = 0.0;
  for (int i = 0; i < n; ++i) sq += (g[i] - (r * e[i] + t)).squaredNorm();
  return std::sqrt(sq / n);
}

std::vector<PoseSample> sample_trajectory(const So3Spline& rot, const R3Spline& pos, double t_begin, double t_end,
                                          double step) {
  std::vector<PoseSample> out;
  for (long k = 0;; ++k) {
    const double t = t_begin + k * step;
    if (t >= t_end) break;
    if (!rot.grid().contains(t) || !pos.grid().contains(t)) continue;
    out.push_back(PoseSample{t, rot.rotation(t), pos.position(t)});
  }
  return out;
}

}  // namespace ctsmooth
