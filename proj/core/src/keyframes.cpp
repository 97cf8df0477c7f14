#include "ctsmooth/keyframes.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

namespace ctsmooth {

double mean_parallax(const Keyframe& a, const Keyframe& b, int* common) {
  double sum = 0.0;
  int n = 0;
  for (const auto& [id, obs] : a.obs) {
    const auto it = b.obs.find(id);
    if (it == b.obs.end()) continue;
    sum += (obs - it->second).norm();
    ++n;
  }
  if (common) *common = n;
  return n > 0 ? sum / n : 0.0;
}

SlideResult KeyframeWindow::push(Keyframe frame) {
  frames_.push_back(std::move(frame));
  SlideResult out;
  const int n = size();
  if (n < 3) return out;
  const Keyframe& second = frames_[n - 2];
  const Keyframe& third = frames_[n - 3];
  int common = 0;
  const double parallax = mean_parallax(second, third, &common);
  const bool keyframe = parallax >= config_.min_parallax || common < config_.min_tracked;
  if (!keyframe) {
    out.action = SlideResult::Action::kDiscardSecondNewest;
    out.removed = second;
    frames_.erase(frames_.end() - 2);
  } else if (n > config_.capacity) {
    out.action = SlideResult::Action::kDropOldest;
    out.removed = frames_.front();
    frames_.pop_front();
  }
  return out;
}

const Keyframe* KeyframeWindow::find(int id) const {
  for (const auto& f : frames_)
    if (f.id == id) return &f;
  return nullptr;
}

std::vector<const Keyframe*> KeyframeWindow::observers(int track_id) const {
  std::vector<const Keyframe*> out;
  for (const auto& f : frames_)
    if (f.obs.count(track_id)) out.push_back(&f);
  return out;
}

TriangulationResult triangulate_landmark(const std::vector<TriangulationView>& views, int anchor,
                                         const KeyframeConfig& config) {
  TriangulationResult res;
  const int n = static_cast<int>(views.size());
  if (n < 2 || anchor < 0 || anchor >= n) return res;

  // Each view contributes two rows of [obs;1] x (R^T (X - p)) = 0 in homogeneous X.
  Eigen::MatrixXd a(2 * n, 4);
  for (int i = 0; i < n; ++i) {
    const Mat3 rt = views[i].pose.r_gc.transpose();
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = rt;
    p.col(3) = -rt * views[i].pose.p_gc;
    const Vec2& o = views[i].obs;
    a.row(2 * i) = o.x() * p.row(2) - p.row(0);
    a.row(2 * i + 1) = o.y() * p.row(2) - p.row(1);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h[3]) < 1e-12) return res;
  res.world = h.head<3>() / h[3];

  const Vec3 anchor_ray = views[anchor].pose.r_gc * Vec3(views[anchor].obs.x(), views[anchor].obs.y(), 1.0);
  double reproj = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec3 pc = views[i].pose.r_gc.transpose() * (res.world - views[i].pose.p_gc);
    if (pc.z() <= 0.0) return res;
    reproj += (pc.head<2>() / pc.z() - views[i].obs).norm();
    const Vec3 ray = views[i].pose.r_gc * Vec3(views[i].obs.x(), views[i].obs.y(), 1.0);
    const double c = ray.dot(anchor_ray) / (ray.norm() * anchor_ray.norm());
    res.max_ray_angle = std::max(res.max_ray_angle, std::acos(std::clamp(c, -1.0, 1.0)));
  }
  res.mean_reproj = reproj / n;
  res.depth = (views[anchor].pose.r_gc.transpose() * (res.world - views[anchor].pose.p_gc)).z();
  if (res.max_ray_angle < config.min_ray_angle) return res;
  if (res.depth < config.depth_min || res.depth > config.depth_max) return res;
  if (res.mean_reproj > config.reproj_max) return res;
  res.inv_depth = 1.0 / res.depth;
  res.ok = true;
  return res;
}

Vec3 landmark_world(const LandmarkInvDepth& lm, const CameraPose& anchor) {
  return anchor.r_gc * (Vec3(lm.anchor_obs.x(), lm.anchor_obs.y(), 1.0) / lm.inv_depth) + anchor.p_gc;
}

std::optional<LandmarkInvDepth> transfer_anchor(const LandmarkInvDepth& lm, const CameraPose& old_anchor,
                                                const CameraPose& new_anchor, int new_frame, double new_stamp) {
  const Vec3 x = landmark_world(lm, old_anchor);
  const Vec3 pc = new_anchor.r_gc.transpose() * (x - new_anchor.p_gc);
  if (pc.z() < VisualFactor::kDepthMin) return std::nullopt;
  LandmarkInvDepth out = lm;
  out.anchor_frame = new_frame;
  out.anchor_stamp = new_stamp;
  out.anchor_obs = pc.head<2>() / pc.z();
  out.inv_depth = 1.0 / pc.z();
  return out;
}

}  // namespace ctsmooth
