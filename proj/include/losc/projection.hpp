#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "losc/core.hpp"

namespace losc {

struct Camera {
  std::uint32_t id = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Pose extrinsic;  // lidar frame -> camera frame

  void validate() const {
    if (!(fx > 0) || !(fy > 0))
      throw std::invalid_argument("camera " + std::to_string(id) + ": focal lengths must be positive");
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("camera " + std::to_string(id) + ": image size must be positive");
    extrinsic.validate();
  }
};

class CameraRig {
 public:
  CameraRig() = default;

  explicit CameraRig(std::vector<Camera> cameras) : cameras_(std::move(cameras)) {
    if (cameras_.empty()) throw std::invalid_argument("camera rig must have at least one camera");
    std::sort(cameras_.begin(), cameras_.end(),
              [](const Camera& a, const Camera& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < cameras_.size(); ++i) {
      cameras_[i].validate();
      if (i > 0 && cameras_[i].id == cameras_[i - 1].id)
        throw std::invalid_argument("duplicate camera id " + std::to_string(cameras_[i].id));
    }
  }

  // Cameras in ascending id order, which is also the conflict tie-break order.
  const std::vector<Camera>& cameras() const { return cameras_; }

  const Camera& by_id(std::uint32_t id) const {
    for (const Camera& c : cameras_)
      if (c.id == id) return c;
    throw std::out_of_range("no camera with id " + std::to_string(id));
  }

 private:
  std::vector<Camera> cameras_;
};

struct LabelMap {
  int width = 0, height = 0;
  std::vector<LabelId> pixels;  // row-major, index v * width + u
  std::string augmentation;
  std::uint32_t camera_id = 0;
  std::uint32_t scan_id = 0;

  LabelId at(int u, int v) const { return pixels[static_cast<std::size_t>(v) * width + u]; }

  void validate(const ClassSet* classes = nullptr) const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("label map has empty dimensions");
    if (pixels.size() != static_cast<std::size_t>(width) * height)
      throw std::invalid_argument("label map pixel count does not match dimensions");
    if (classes)
      for (LabelId p : pixels)
        if (!classes->valid_label(p))
          throw std::invalid_argument("label map contains value " + std::to_string(p) +
                                      " outside the class set");
  }
};

struct PointProjection {
  bool visible = false;
  std::int32_t u = 0, v = 0;
  float depth = 0;
};

struct Projection {
  std::vector<PointProjection> points;
  int width = 0, height = 0;
};

inline Projection project(const PointCloud& cloud, const Camera& camera) {
  camera.validate();
  Projection proj;
  proj.width = camera.width;
  proj.height = camera.height;
  proj.points.resize(cloud.points.size());
  const Pose& ext = camera.extrinsic;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Point& p = cloud.points[i];
    Vec3 c = ext.apply({p.x, p.y, p.z});
    PointProjection& out = proj.points[i];
    if (!(c.z > 0)) continue;
    long u = std::lround(camera.fx * c.x / c.z + camera.cx);
    long v = std::lround(camera.fy * c.y / c.z + camera.cy);
    if (u < 0 || u >= camera.width || v < 0 || v >= camera.height) continue;
    out.visible = true;
    out.u = static_cast<std::int32_t>(u);
    out.v = static_cast<std::int32_t>(v);
    out.depth = static_cast<float>(c.z);
  }
  return proj;
}

// Z-buffer pass: only points within depth_tolerance of the nearest point on
// their pixel stay visible.
inline Projection occlusion_filter(const Projection& proj, double depth_tolerance) {
  if (depth_tolerance < 0) throw std::invalid_argument("depth tolerance must be non-negative");
  Projection out = proj;
  std::vector<float> nearest(static_cast<std::size_t>(proj.width) * proj.height,
                             std::numeric_limits<float>::infinity());
  for (const PointProjection& p : proj.points)
    if (p.visible) {
      float& slot = nearest[static_cast<std::size_t>(p.v) * proj.width + p.u];
      slot = std::min(slot, p.depth);
    }
  for (PointProjection& p : out.points)
    if (p.visible &&
        p.depth > nearest[static_cast<std::size_t>(p.v) * proj.width + p.u] + depth_tolerance)
      p.visible = false;
  return out;
}

// Labels every point from the camera where it is visible with the smallest
// camera-frame depth (ties: lowest camera id); invisible everywhere -> ignore.
inline Labeling backproject_labels(const PointCloud& cloud, std::span<const LabelMap> maps,
                                   const CameraRig& rig, double depth_tolerance) {
  Labeling out;
  out.provenance = Provenance::vlm;
  out.labels.assign(cloud.points.size(), kIgnoreLabel);
  std::vector<float> best_depth(cloud.points.size(), std::numeric_limits<float>::infinity());

  for (const Camera& camera : rig.cameras()) {
    const LabelMap* map = nullptr;
    for (const LabelMap& m : maps)
      if (m.camera_id == camera.id) {
        if (map) throw std::invalid_argument("duplicate label map for camera " + std::to_string(camera.id));
        map = &m;
      }
    if (!map) throw std::invalid_argument("missing label map for camera " + std::to_string(camera.id));
    if (map->width != camera.width || map->height != camera.height)
      throw std::invalid_argument("label map size does not match camera " + std::to_string(camera.id));
    if (map->augmentation != maps.front().augmentation)
      throw std::invalid_argument("label maps mix augmentation ids");

    Projection proj = occlusion_filter(project(cloud, camera), depth_tolerance);
    for (std::size_t i = 0; i < proj.points.size(); ++i) {
      const PointProjection& p = proj.points[i];
      if (p.visible && p.depth < best_depth[i]) {
        best_depth[i] = p.depth;
        out.labels[i] = map->at(p.u, p.v);
      }
    }
  }
  return out;
}

}  // namespace losc
