#include "ctsmooth/smoother.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

namespace ctsmooth {

namespace {

class Stopwatch {
 public:
  explicit Stopwatch(double& sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() { sink_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  double& sink_;
  std::chrono::steady_clock::time_point start_;
};

void append(std::vector<FactorPtr>& dst, const std::vector<FactorPtr>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

bool state_finite(const EstimatorState& s, int first, int last) {
  for (int i = first; i <= last && i < s.num_control_points(); ++i) {
    if (!s.pos.ctrl(i).allFinite() || !s.rot.ctrl(i).matrix().allFinite()) return false;
  }
  return true;
}

}  // namespace

EstimationError::EstimationError(int window, const std::string& what, bool diverged)
    : std::runtime_error(fmt::format("window {}: {}", window, what)), window_(window), diverged_(diverged) {}

StaticInitResult static_initialize(const std::vector<ImuMeas>& imu, double accel_std_max, double gyro_std_max) {
  if (imu.size() < 2) throw InitializationError("static initialization needs IMU data");
  Vec3 am = Vec3::Zero(), gm = Vec3::Zero();
  for (const auto& m : imu) {
    am += m.accel;
    gm += m.gyro;
  }
  const double n = static_cast<double>(imu.size());
  am /= n;
  gm /= n;
  Vec3 av = Vec3::Zero(), gv = Vec3::Zero();
  for (const auto& m : imu) {
    av += (m.accel - am).cwiseAbs2();
    gv += (m.gyro - gm).cwiseAbs2();
  }
  StaticInitResult out;
  out.accel_std = std::sqrt(av.sum() / n);
  out.gyro_std = std::sqrt(gv.sum() / n);
  if (out.accel_std > accel_std_max || out.gyro_std > gyro_std_max) {
    throw InitializationError(fmt::format("motion detected during static initialization (accel std {:.4f}, gyro std {:.4f})",
                                          out.accel_std, out.gyro_std));
  }
  if (am.norm() < 1e-6) throw InitializationError("no specific force in static initialization data");
  // At rest a_m = -R^T g, so R^T e_z is the unit vector opposite to the mean reading.
  const Vec3 u = -am.normalized();
  const double roll = std::atan2(u.y(), u.z());
  const double pitch = std::atan2(-u.x(), std::hypot(u.y(), u.z()));
  out.rotation = exp_so3(Vec3(0, pitch, 0)) * exp_so3(Vec3(roll, 0, 0));
  out.bias.gyro = gm;
  out.bias.accel = am + out.rotation.matrix().transpose() * kGravity;
  return out;
}

double lidar_degeneracy_ratio(const std::vector<Vec3>& world_points, const std::vector<Vec3>& normals,
                              const Vec3& center) {
  Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
  for (std::size_t i = 0; i < world_points.size(); ++i) {
    Eigen::Matrix<double, 6, 1> j;
    j.head<3>() = normals[i];
    j.tail<3>() = (world_points[i] - center).cross(normals[i]);
    h += j * j.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(h);
  const double hi = es.eigenvalues().maxCoeff();
  if (!(hi > 0.0)) return 0.0;
  return std::max(0.0, es.eigenvalues().minCoeff()) / hi;
}

FixedLagSmoother::FixedLagSmoother(SmootherConfig config, SensorRig rig)
    : config_(std::move(config)), rig_(std::move(rig)), keyframes_(config_.keyframes) {
  if (config_.eta < 1) throw std::invalid_argument("eta must be >= 1");
  if (!(config_.knot_dt > 0.0)) throw std::invalid_argument("knot_dt must be > 0");
  if (config_.use_lidar) {
    for (int s : config_.lidar_streams) {
      if (s < 0 || s >= static_cast<int>(rig_.lidar.size()))
        throw std::invalid_argument(fmt::format("no extrinsic for lidar stream {}", s));
    }
    if (rig_.planes.empty()) throw std::invalid_argument("lidar enabled but the plane map is empty");
  }
  if (config_.init_solver.max_iterations == SolverConfig{}.max_iterations) config_.init_solver.max_iterations = 20;
  config_.init_solver.check_rank = false;
}

void FixedLagSmoother::feed_imu(const ImuMeas& m) { imu_cache_.push(m); }

void FixedLagSmoother::feed_lidar(const LidarPointMeas& m) {
  if (!config_.use_lidar) return;
  if (std::find(config_.lidar_streams.begin(), config_.lidar_streams.end(), m.stream) == config_.lidar_streams.end())
    return;
  lidar_cache_.push(m);
}

void FixedLagSmoother::feed_image(ImageFrame f) {
  if (config_.use_camera) image_cache_.push(std::move(f));
}

void FixedLagSmoother::finish() { finished_ = true; }

void FixedLagSmoother::set_timeoffset_calibration(bool imu, bool cam, double start_delay) {
  config_.estimate_imu_offset = imu;
  config_.estimate_cam_offset = cam;
  config_.calibration_start = start_delay;
  state_.offsets.estimate_imu = imu;
  state_.offsets.estimate_cam = cam;
}

double FixedLagSmoother::window_end(int window) const {
  return config_.t0 + (window + 1) * config_.eta * config_.knot_dt;
}

double FixedLagSmoother::trajectory_end() const { return window_ > 0 ? window_end(window_ - 1) : config_.t0; }

std::pair<int, int> FixedLagSmoother::active_ctrl_range(int window) const {
  return {window * config_.eta, window * config_.eta + config_.eta + kSplineOrder - 2};
}

bool FixedLagSmoother::offsets_active() const {
  const double t_begin = window_end(window_) - config_.eta * config_.knot_dt;
  return (config_.estimate_imu_offset || config_.estimate_cam_offset) &&
         t_begin - config_.t0 >= config_.calibration_start - 1e-9;
}

bool FixedLagSmoother::try_initialize() {
  auto drained = imu_cache_.pop_before(std::numeric_limits<double>::infinity(), [](const ImuMeas& m) { return m.t; });
  imu_.insert(imu_.end(), drained.begin(), drained.end());
  const double off = config_.initial_imu_offset;
  const double t_end = config_.t0 + config_.static_duration;
  if (imu_.empty() || imu_.back().t + off < t_end) {
    if (finished_ && !imu_.empty()) throw InitializationError("not enough IMU data for static initialization");
    return false;
  }
  std::vector<ImuMeas> prefix;
  for (const auto& m : imu_) {
    const double tau = m.t + off;
    if (tau >= config_.t0 && tau <= t_end) prefix.push_back(m);
  }
  const StaticInitResult init = static_initialize(prefix, config_.static_accel_std, config_.static_gyro_std);

  const KnotGrid grid{config_.t0, config_.knot_dt, kSplineOrder - 1};
  state_ = EstimatorState(grid, init.rotation, Vec3::Zero(), kSplineOrder - 1);
  state_.biases[0] = init.bias;
  state_.offsets.imu = config_.initial_imu_offset;
  state_.offsets.cam = config_.initial_cam_offset;
  state_.offsets.estimate_imu = config_.estimate_imu_offset;
  state_.offsets.estimate_cam = config_.estimate_cam_offset;
  state_.offsets.max_abs = config_.max_abs_offset;
  if (seeder_.initial) seeder_.initial(state_);

  MarginalPrior& prior = state_.prior;
  std::vector<double> sig;
  for (int i = 0; i < kSplineOrder - 1; ++i) {
    prior.keys.push_back(rot_key(i));
    sig.push_back(config_.init_rot_sigma);
    prior.keys.push_back(pos_key(i));
    sig.push_back(config_.init_pos_sigma);
  }
  prior.keys.push_back(gyro_bias_key(0));
  sig.push_back(config_.init_gyro_bias_sigma);
  prior.keys.push_back(accel_bias_key(0));
  sig.push_back(config_.init_accel_bias_sigma);
  const int n = 3 * static_cast<int>(prior.keys.size());
  prior.sqrt_info = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < prior.keys.size(); ++k) {
    prior.dims.push_back(3);
    prior.linearization.push_back(state_.value(prior.keys[k]));
    for (int d = 0; d < 3; ++d) prior.sqrt_info(3 * k + d, 3 * k + d) = 1.0 / sig[k];
  }
  prior.r0 = Eigen::VectorXd::Zero(n);

  // Drop IMU samples before the spline start.
  while (imu_cursor_ < imu_.size() && imu_[imu_cursor_].t + state_.offsets.imu < config_.t0) ++imu_cursor_;
  initialized_ = true;
  return true;
}

void FixedLagSmoother::extend_window() {
  const int k = window_;
  const int first = state_.num_control_points();
  const Rotation r_last = state_.rot.ctrl(first - 1);
  const Vec3 p_last = state_.pos.ctrl(first - 1);
  for (int j = 0; j < config_.eta; ++j) state_.append_control_point(r_last, p_last);
  if (k > 0) state_.biases[k] = state_.biases.at(k - 1);

  if (seeder_.extend) {
    seeder_.extend(state_, first, config_.eta);
    return;
  }
  if (window_imu_.empty()) return;

  const double t_begin = window_end(k) - config_.eta * config_.knot_dt;
  const double t_end = window_end(k);
  std::vector<FactorPtr> factors;
  for (const auto& m : window_imu_) factors.push_back(std::make_shared<ImuFactor>(m, k, config_.imu_noise));
  try {
    const RotationEval r0 = state_.rot.evaluate(t_begin, false);
    const Vec3 v0 = state_.pos.velocity(t_begin);
    const Vec3 v_hat = forward_integrate_imu(window_imu_, t_begin, t_end - 1e-9, r0.rotation, v0, state_.biases.at(k),
                                             kGravity, state_.offsets.imu);
    factors.push_back(std::make_shared<VelocityFactor>(t_end - 1e-9, v_hat, config_.velocity_sigma));
  } catch (const std::invalid_argument&) {
    // No samples inside the interval: IMU factors alone.
  }
  StateLayout layout;
  for (int i = first; i < state_.num_control_points(); ++i) {
    layout.add(state_, rot_key(i));
    layout.add(state_, pos_key(i));
  }
  solve_lm(factors, state_, layout, config_.init_solver);
}

void FixedLagSmoother::ingest_images(double t_end) {
  const double off = state_.offsets.cam + (config_.estimate_cam_offset ? config_.offset_margin : 0.0);
  auto frames = image_cache_.pop_before(t_end - off, [](const ImageFrame& f) { return f.t; });
  for (const auto& f : frames) {
    if (f.t + state_.offsets.cam < config_.t0) continue;
    keyframe_update(f);
  }
}

void FixedLagSmoother::keyframe_update(const ImageFrame& frame) {
  Keyframe kf;
  kf.id = next_frame_id_++;
  kf.stamp = frame.t;
  for (const auto& o : frame.obs) kf.obs[o.track_id] = o.obs;
  const SlideResult res = keyframes_.push(std::move(kf));
  if (res.removed) remove_keyframe(*res.removed);
  triangulate_new_landmarks();
}

void FixedLagSmoother::remove_keyframe(const Keyframe& kf) {
  const KnotGrid& grid = state_.grid();
  for (const auto& [id, obs] : kf.obs) {
    auto it = state_.landmarks.find(id);
    if (it == state_.landmarks.end()) continue;
    const auto observers = keyframes_.observers(id);
    if (observers.size() < 2) {
      state_.landmarks.erase(it);
      continue;
    }
    if (it->second.anchor_frame != kf.id) continue;
    const Keyframe* next = observers.front();
    const double tau_old = kf.stamp + state_.offsets.cam;
    const double tau_new = next->stamp + state_.offsets.cam;
    if (!grid.contains(tau_old) || !grid.contains(tau_new)) {
      state_.landmarks.erase(it);
      continue;
    }
    const auto moved = transfer_anchor(it->second, camera_pose(state_, tau_old, rig_.camera),
                                       camera_pose(state_, tau_new, rig_.camera), next->id, next->stamp);
    if (moved) {
      it->second = *moved;
    } else {
      state_.landmarks.erase(it);
    }
  }
}

void FixedLagSmoother::triangulate_new_landmarks() {
  std::set<int> candidates;
  for (const auto& f : keyframes_.frames())
    for (const auto& [id, obs] : f.obs)
      if (!state_.landmarks.contains(id)) candidates.insert(id);
  const KnotGrid& grid = state_.grid();
  for (int id : candidates) {
    const auto observers = keyframes_.observers(id);
    if (observers.size() < 2) continue;
    std::vector<TriangulationView> views;
    for (const Keyframe* f : observers) {
      const double tau = f->stamp + state_.offsets.cam;
      if (!grid.contains(tau)) break;
      views.push_back({camera_pose(state_, tau, rig_.camera), f->obs.at(id)});
    }
    if (views.size() != observers.size()) continue;
    const TriangulationResult r = triangulate_landmark(views, 0, config_.keyframes);
    if (!r.ok) continue;
    const Keyframe* a = observers.front();
    state_.landmarks[id] = LandmarkInvDepth{id, a->id, a->stamp, a->obs.at(id), r.inv_depth};
  }
}

std::vector<FactorPtr> FixedLagSmoother::build_lidar_factors(std::vector<Vec3>* world_points,
                                                             std::vector<Vec3>* normals) const {
  std::vector<FactorPtr> out;
  const KnotGrid& grid = state_.grid();
  const int stride = std::max(1, config_.lidar_stride);
  for (std::size_t i = 0; i < window_points_.size(); i += stride) {
    const LidarPointMeas& m = window_points_[i];
    if (!grid.contains(m.t)) continue;
    const Extrinsic& ext = rig_.lidar.at(m.stream);
    const BasisEval basis = cumulative_basis(grid, m.t);
    const Vec3 w = state_.rot.evaluate(basis, false).rotation * ext.apply(m.point) + state_.pos.evaluate(basis, 0);
    int best = -1;
    double best_d = config_.association_gate;
    for (int k = 0; k < static_cast<int>(rig_.planes.size()); ++k) {
      const double d = std::abs(rig_.planes[k].signed_distance(w));
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best < 0) continue;
    auto f = std::make_shared<LidarFactor>(m, rig_.planes[best], ext, config_.lidar_sigma);
    f->huber_delta = config_.lidar_huber;
    out.push_back(f);
    if (world_points) {
      world_points->push_back(w);
      normals->push_back(rig_.planes[best].normal());
    }
  }
  return out;
}

std::vector<FactorPtr> FixedLagSmoother::build_visual_factors() const {
  std::vector<FactorPtr> out;
  for (const auto& [id, lm] : state_.landmarks) {
    for (const Keyframe* f : keyframes_.observers(id)) {
      if (f->id == lm.anchor_frame) continue;
      auto vf = std::make_shared<VisualFactor>(id, f->stamp, f->obs.at(id), rig_.camera, config_.pixel_sigma);
      vf->huber_delta = config_.visual_huber;
      out.push_back(vf);
    }
  }
  return out;
}

StateLayout FixedLagSmoother::window_layout(const std::vector<FactorPtr>& visual) const {
  StateLayout layout;
  const auto [lo, hi] = active_ctrl_range(window_);
  for (int i = lo; i <= hi; ++i) {
    layout.add(state_, rot_key(i));
    layout.add(state_, pos_key(i));
  }
  for (int b : {window_ - 1, window_}) {
    if (!state_.biases.contains(b)) continue;
    layout.add(state_, gyro_bias_key(b));
    layout.add(state_, accel_bias_key(b));
  }
  for (const auto& f : visual) {
    const auto* vf = static_cast<const VisualFactor*>(f.get());
    layout.add(state_, inv_depth_key(vf->landmark_id()));
  }
  if (offsets_active()) {
    if (config_.estimate_imu_offset) layout.add(state_, imu_offset_key());
    if (config_.estimate_cam_offset) layout.add(state_, cam_offset_key());
  }
  return layout;
}

void FixedLagSmoother::marginalize_temporal(const std::vector<FactorPtr>& consumed, WindowDiagnostics& diag) {
  const int k = window_;
  const auto [lo, hi] = active_ctrl_range(k);
  std::vector<Key> keep, drop;
  for (int i = lo + config_.eta; i <= hi; ++i) {
    keep.push_back(rot_key(i));
    keep.push_back(pos_key(i));
  }
  keep.push_back(gyro_bias_key(k));
  keep.push_back(accel_bias_key(k));
  if (offsets_active()) {
    if (config_.estimate_imu_offset) keep.push_back(imu_offset_key());
    if (config_.estimate_cam_offset) keep.push_back(cam_offset_key());
  }
  for (int i = lo; i < lo + config_.eta; ++i) {
    drop.push_back(rot_key(i));
    drop.push_back(pos_key(i));
  }
  if (k > 0) {
    drop.push_back(gyro_bias_key(k - 1));
    drop.push_back(accel_bias_key(k - 1));
  }
  MarginalizationResult res = marginalize(consumed, state_, keep, drop);
  state_.prior = std::move(res.prior);
  diag.marginalized_dim = res.dropped_dim;
  diag.prior_dim = res.kept_dim;
  diag.marginalization_singular = res.singular;
}

bool FixedLagSmoother::step() {
  const auto start = std::chrono::steady_clock::now();
  const double staged_before = times_.update_local_map + times_.update_trajectory + times_.update_prior;
  if (!initialized_ && !try_initialize()) return false;

  auto drained = imu_cache_.pop_before(std::numeric_limits<double>::infinity(), [](const ImuMeas& m) { return m.t; });
  imu_.insert(imu_.end(), drained.begin(), drained.end());
  const int k = window_;
  const double t_begin = window_end(k) - config_.eta * config_.knot_dt;
  const double t_end = window_end(k);
  if (imu_.empty() || imu_.back().t + state_.offsets.imu < t_end) return false;
  if (config_.use_lidar && !finished_) {
    const auto newest = lidar_cache_.newest([](const LidarPointMeas& m) { return m.t; });
    if (!newest || *newest < t_end) return false;
  }
  if (config_.use_camera && !finished_) {
    const auto newest = image_cache_.newest([](const ImageFrame& f) { return f.t; });
    if (!newest || *newest + state_.offsets.cam < t_end) return false;
  }

  WindowDiagnostics diag;
  diag.window = k;
  diag.t_begin = t_begin;
  diag.t_end = t_end;

  window_imu_.clear();
  window_tail_imu_.clear();
  // Keep headroom so a moving offset cannot push samples past the spline end, or (while it is
  // estimated) back onto the segment tied to an already eliminated control point. Samples in the
  // headroom skip the solve and only enter the marginalization.
  const double imu_margin = config_.estimate_imu_offset ? config_.offset_margin : 0.0;
  const double low_margin = offsets_active() && config_.estimate_imu_offset ? config_.offset_margin : 0.0;
  while (imu_cursor_ < imu_.size() && imu_[imu_cursor_].t + state_.offsets.imu < t_end) {
    const double tau = imu_[imu_cursor_].t + state_.offsets.imu;
    if (tau + imu_margin >= t_end || (tau >= t_begin && tau < t_begin + low_margin)) {
      window_tail_imu_.push_back(imu_[imu_cursor_]);
    } else if (tau >= t_begin) {
      window_imu_.push_back(imu_[imu_cursor_]);
    }
    ++imu_cursor_;
  }
  window_points_ = lidar_cache_.pop_before(t_end, [](const LidarPointMeas& m) { return m.t; });
  window_points_.erase(std::remove_if(window_points_.begin(), window_points_.end(),
                                      [t_begin](const LidarPointMeas& m) { return m.t < t_begin; }),
                       window_points_.end());

  {
    Stopwatch sw(times_.update_trajectory);
    extend_window();
  }
  {
    Stopwatch sw(times_.update_local_map);
    ingest_images(t_end);
  }

  std::vector<FactorPtr> core;
  for (const auto& m : window_imu_) core.push_back(std::make_shared<ImuFactor>(m, k, config_.imu_noise));
  if (k > 0) core.push_back(std::make_shared<BiasFactor>(k - 1, k, config_.imu_noise, config_.eta * config_.knot_dt));
  core.push_back(std::make_shared<PriorFactor>());
  if (offsets_active() && !offset_prior_added_) {
    // Weak anchor for the offsets the first time they enter the problem.
    auto add_prior = [&](const Key& key, double value) {
      core.push_back(std::make_shared<LinearFactor>(
          std::vector<Key>{key}, std::vector<Eigen::MatrixXd>{Eigen::MatrixXd::Identity(1, 1)},
          Eigen::VectorXd::Constant(1, value), Eigen::VectorXd::Constant(1, 1.0 / config_.offset_prior_sigma)));
    };
    if (config_.estimate_imu_offset) add_prior(imu_offset_key(), state_.offsets.imu);
    if (config_.estimate_cam_offset) add_prior(cam_offset_key(), state_.offsets.cam);
    offset_prior_added_ = true;
  }

  std::vector<FactorPtr> visual;
  if (config_.use_camera) {
    Stopwatch sw(times_.update_local_map);
    visual = build_visual_factors();
  }
  const StateLayout layout = window_layout(visual);

  std::vector<FactorPtr> lidar;
  std::vector<Vec3> world_points, normals;
  SolverReport report;
  const int passes = std::max(1, config_.association_passes);
  for (int pass = 0; pass < passes; ++pass) {
    if (config_.use_lidar) {
      Stopwatch sw(times_.update_local_map);
      world_points.clear();
      normals.clear();
      lidar = build_lidar_factors(&world_points, &normals);
    }
    std::vector<FactorPtr> all = core;
    append(all, lidar);
    append(all, visual);
    Stopwatch sw(times_.update_trajectory);
    try {
      report = solve_lm(all, state_, layout, config_.solver);
    } catch (const NonFiniteFactorError& e) {
      throw EstimationError(k, e.what(), true);
    }
    if (pass == 0) diag.cost_before = report.initial_cost;
    diag.iterations += report.iterations;
  }
  diag.cost_after = report.final_cost;
  diag.termination = to_string(report.termination);
  diag.counts = report.counts;
  diag.rank_defect = report.rank_defect;
  const auto [lo, hi] = active_ctrl_range(k);
  if (!std::isfinite(report.final_cost) || !state_finite(state_, lo, hi))
    throw EstimationError(k, "non-finite state after optimization", true);

  if (config_.use_lidar) {
    const Vec3 center = state_.pos.position(0.5 * (t_begin + t_end));
    diag.lidar_min_eig_ratio = lidar_degeneracy_ratio(world_points, normals, center);
    diag.lidar_degenerate = diag.lidar_min_eig_ratio < 1e-6;
  }

  {
    Stopwatch sw(times_.update_prior);
    std::vector<FactorPtr> consumed = core;
    for (const auto& m : window_tail_imu_) consumed.push_back(std::make_shared<ImuFactor>(m, k, config_.imu_noise));
    append(consumed, lidar);
    marginalize_temporal(consumed, diag);
  }

  diag.imu_offset = state_.offsets.imu;
  diag.cam_offset = state_.offsets.cam;
  diag.keyframes = keyframes_.size();
  diag.landmarks = static_cast<int>(state_.landmarks.size());
  diag.active_ctrl = hi - lo + 1;
  diagnostics_.push_back(diag);
  ++window_;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double staged = times_.update_local_map + times_.update_trajectory + times_.update_prior - staged_before;
  times_.others += std::max(0.0, wall - staged);
  return true;
}

int FixedLagSmoother::run() {
  int n = 0;
  while (step()) ++n;
  return n;
}

}  // namespace ctsmooth
