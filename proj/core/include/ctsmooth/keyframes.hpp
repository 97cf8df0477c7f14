#pragma once

#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "ctsmooth/factors.hpp"
#include "ctsmooth/state.hpp"

namespace ctsmooth {

struct KeyframeConfig {
  int capacity = 10;
  double min_parallax = 0.02;  // mean displacement, normalized image units
  int min_tracked = 30;
  double min_ray_angle = 0.02;  // rad, triangulation parallax gate
  double depth_min = 0.1;       // m
  double depth_max = 50.0;      // m
  double reproj_max = 0.01;     // mean reprojection error, normalized units
};

struct Keyframe {
  int id = -1;
  double stamp = 0.0;             // raw camera stamp
  std::map<int, Vec2> obs;        // track id -> normalized observation
};

struct SlideResult {
  enum class Action { kNone, kDiscardSecondNewest, kDropOldest };
  Action action = Action::kNone;
  std::optional<Keyframe> removed;
};

/**
 * Visual keyframe window. The newest entry is always the latest image; when a
 * frame arrives the second-newest one is kept as a keyframe if it moved enough
 * (mean parallax) or lost enough tracks relative to the third-newest.
 */
class KeyframeWindow {
 public:
  explicit KeyframeWindow(KeyframeConfig config = {}) : config_(config) {}

  SlideResult push(Keyframe frame);

  const std::deque<Keyframe>& frames() const { return frames_; }
  const KeyframeConfig& config() const { return config_; }
  int size() const { return static_cast<int>(frames_.size()); }
  const Keyframe* find(int id) const;
  /// Frames observing a track, oldest first.
  std::vector<const Keyframe*> observers(int track_id) const;

 private:
  KeyframeConfig config_;
  std::deque<Keyframe> frames_;
};

/// Mean displacement over common tracks; common receives the number of shared tracks.
double mean_parallax(const Keyframe& a, const Keyframe& b, int* common = nullptr);

struct TriangulationView {
  CameraPose pose;
  Vec2 obs = Vec2::Zero();
};

struct TriangulationResult {
  bool ok = false;
  double inv_depth = 0.0;    // along the anchor ray (views[anchor].obs, 1)
  double depth = 0.0;        // z in the anchor camera
  double mean_reproj = 0.0;
  double max_ray_angle = 0.0;
  Vec3 world = Vec3::Zero();
};

/// Linear least-squares triangulation; the result is expressed in views[anchor].
TriangulationResult triangulate_landmark(const std::vector<TriangulationView>& views, int anchor,
                                         const KeyframeConfig& config = {});

/**
 * Moves a landmark to a new anchor camera without changing its world point:
 * the new anchor observation is the predicted ray and the inverse depth is 1/z.
 * Returns nullopt if the point is not in front of the new anchor.
 */
std::optional<LandmarkInvDepth> transfer_anchor(const LandmarkInvDepth& lm, const CameraPose& old_anchor,
                                                const CameraPose& new_anchor, int new_frame, double new_stamp);

/// World point of a landmark given its anchor camera pose.
Vec3 landmark_world(const LandmarkInvDepth& lm, const CameraPose& anchor);

}  // namespace ctsmooth
