#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "losc/abc.hpp"
#include "losc/io.hpp"
#include "losc/threading.hpp"

namespace losc::synth {

namespace fs = std::filesystem;
using io::json;

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
inline constexpr double kMinRayDepth = 0.5;  // camera depth below which pixels degenerate

namespace detail {

inline double unit_real(std::mt19937_64& rng) { return (rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit_real(rng);
}

inline std::uint64_t chain(std::uint64_t seed, std::uint64_t salt) {
  return mix64(seed ^ kGolden * salt);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string zero_pad(std::size_t v, std::size_t width) {
  std::string s = std::to_string(v);
  while (s.size() < width) s.insert(s.begin(), '0');
  return s;
}

}  // namespace detail

// ------------------------------------------------------------------ scene spec

struct ScenePlane {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // horizontal rectangle, world frame
  double z = 0;
  LabelId cls = 0;
};

struct SceneBox {
  Vec3 lo, hi;  // axis-aligned, world frame
  LabelId cls = 0;
};

struct SceneMover {
  SceneBox shape;  // footprint at the first scan's timestamp
  Vec3 velocity;   // m/s, constant
};

inline ClassSet default_classes() {
  return ClassSet({{0, "road", false},
                   {1, "sidewalk", false},
                   {2, "building", false},
                   {3, "vegetation", false},
                   {4, "car", true},
                   {5, "pedestrian", true}});
}

// Forward + rear camera, both pitched down far enough that every in-frustum ray
// descends at least ~5 degrees, so rays always meet the ground within ~19 m.
inline Pose camera_extrinsic(double yaw, double pitch_down) {
  Mat3 axes = {{0, -1, 0, 0, 0, -1, 1, 0, 0}};  // lidar axes -> camera axes, forward camera
  Mat3 body = Mat3::rotation_z(yaw) * Mat3::rotation_y(pitch_down);
  return {axes * body.transposed(), {0, 0, 0}};
}

inline CameraRig default_rig() {
  Camera front;
  front.id = 0;
  front.fx = front.fy = 260;
  front.cx = 160;
  front.cy = 120;
  front.width = 320;
  front.height = 240;
  front.extrinsic = camera_extrinsic(0.0, 0.5235987755982988);
  Camera rear = front;
  rear.id = 1;
  rear.extrinsic = camera_extrinsic(3.141592653589793, 0.5235987755982988);
  return CameraRig({front, rear});
}

struct SceneSpec {
  std::uint64_t seed = 1;
  double extent = 250.0;  // all geometry (incl. mover sweeps) must stay within +-extent
  std::vector<ScenePlane> planes;
  std::vector<SceneBox> boxes;
  std::vector<SceneMover> movers;
  std::size_t scan_count = 40;
  std::size_t points_per_scan = 20000;
  CameraRig rig = default_rig();
  double frame_rate = 2.0;  // Hz
  double ego_speed = 5.0;   // m/s along +x
  double ego_start_x = 0.0;
  double sway_amplitude = 0.5;  // lateral sinusoid, m
  double sway_frequency = 0.3;  // rad/s
  double lidar_height = 1.7;
  ClassSet classes = default_classes();

  void validate() const {
    if (scan_count == 0) throw std::invalid_argument("scene needs at least one scan");
    if (points_per_scan == 0) throw std::invalid_argument("scene needs at least one point per scan");
    if (!(frame_rate > 0)) throw std::invalid_argument("frame rate must be positive");
    if (!(extent > 0)) throw std::invalid_argument("world extent must be positive");
    if (!std::isfinite(ego_speed) || !std::isfinite(ego_start_x) || !std::isfinite(lidar_height) ||
        !std::isfinite(sway_frequency) || !(sway_amplitude >= 0))
      throw std::invalid_argument("ego trajectory parameters must be finite");
    if (rig.cameras().empty()) throw std::invalid_argument("scene needs a camera rig");
    if (classes.size() == 0) throw std::invalid_argument("scene needs a class set");
    if (planes.empty() && boxes.empty() && movers.empty())
      throw std::invalid_argument("scene has no surfaces to sample");

    std::size_t pixels = 0;
    for (const Camera& cam : rig.cameras())
      pixels += static_cast<std::size_t>(cam.width) * cam.height;
    // one point per pixel, and rejection sampling needs headroom
    if (points_per_scan * 2 > pixels)
      throw std::invalid_argument("points per scan exceeds half the rig's pixel budget");

    auto check_class = [&](LabelId c) {
      if (c == kIgnoreLabel || !classes.valid_label(c))
        throw std::invalid_argument("primitive class " + std::to_string(c) +
                                    " is not in the class set");
    };
    auto check_bound = [&](double v) {
      if (!std::isfinite(v) || std::abs(v) > extent)
        throw std::invalid_argument("primitive leaves the world extent");
    };
    for (const ScenePlane& p : planes) {
      check_class(p.cls);
      for (double v : {p.x0, p.x1, p.y0, p.y1, p.z}) check_bound(v);
      if (!(p.x0 < p.x1) || !(p.y0 < p.y1))
        throw std::invalid_argument("plane rectangle has empty extent");
    }
    double horizon = (scan_count - 1) / frame_rate;
    auto check_box = [&](const SceneBox& b, const Vec3& drift) {
      check_class(b.cls);
      if (!(b.lo.x < b.hi.x) || !(b.lo.y < b.hi.y) || !(b.lo.z < b.hi.z))
        throw std::invalid_argument("box has empty extent");
      for (const Vec3& corner : {b.lo, b.hi, b.lo + drift, b.hi + drift})
        for (double v : {corner.x, corner.y, corner.z}) check_bound(v);
    };
    for (const SceneBox& b : boxes) check_box(b, {0, 0, 0});
    for (const SceneMover& m : movers) {
      if (!m.velocity.finite()) throw std::invalid_argument("mover velocity must be finite");
      check_box(m.shape, {m.velocity.x * horizon, m.velocity.y * horizon, m.velocity.z * horizon});
    }
  }
};

// ------------------------------------------------------------------ generation

struct GeneratedSequence {
  std::vector<PointCloud> scans;  // sensor frame
  std::vector<Pose> poses;        // sensor -> world
  std::vector<std::vector<LabelId>> semantic;
  std::vector<std::vector<std::uint16_t>> instances;  // dense from 1 per scan; 0 = stuff
  std::vector<std::vector<LabelMap>> gt_maps;         // [scan][camera index]
};

namespace detail {

inline constexpr double kMiss = std::numeric_limits<double>::infinity();

struct ScanPrimitive {
  bool is_plane = false;
  ScenePlane rect;
  SceneBox box;
  LabelId cls = 0;
  bool thing = false;
};

inline std::vector<ScanPrimitive> scene_at(const SceneSpec& spec, std::size_t scan) {
  double t = scan / spec.frame_rate;
  std::vector<ScanPrimitive> prims;
  prims.reserve(spec.planes.size() + spec.boxes.size() + spec.movers.size());
  for (const ScenePlane& p : spec.planes) {
    ScanPrimitive sp;
    sp.is_plane = true;
    sp.rect = p;
    sp.cls = p.cls;
    prims.push_back(sp);
  }
  auto add_box = [&](SceneBox b) {
    ScanPrimitive sp;
    sp.box = b;
    sp.cls = b.cls;
    sp.thing = spec.classes.is_thing(b.cls);
    prims.push_back(sp);
  };
  for (const SceneBox& b : spec.boxes) add_box(b);
  for (const SceneMover& m : spec.movers) {
    SceneBox b = m.shape;
    Vec3 d{m.velocity.x * t, m.velocity.y * t, m.velocity.z * t};
    b.lo = b.lo + d;
    b.hi = b.hi + d;
    add_box(b);
  }
  return prims;
}

inline Pose ego_pose(const SceneSpec& spec, std::size_t scan) {
  double t = scan / spec.frame_rate;
  double x = spec.ego_start_x + spec.ego_speed * t;
  double y = spec.sway_amplitude * std::sin(spec.sway_frequency * t);
  double dy = spec.sway_amplitude * spec.sway_frequency * std::cos(spec.sway_frequency * t);
  double yaw = std::atan2(dy, spec.ego_speed);
  return {Mat3::rotation_z(yaw), {x, y, spec.lidar_height}};
}

// Ray parametrized by camera depth: p(t) = o + d * t, t >= t_min.
inline double hit_plane(const Vec3& o, const Vec3& d, const ScenePlane& r, double t_min) {
  if (std::abs(d.z) < 1e-12) return kMiss;
  double t = (r.z - o.z) / d.z;
  if (t < t_min) return kMiss;
  double x = o.x + d.x * t, y = o.y + d.y * t;
  if (x < r.x0 || x > r.x1 || y < r.y0 || y > r.y1) return kMiss;
  return t;
}

inline double hit_box(const Vec3& o, const Vec3& d, const SceneBox& b, double t_min) {
  double enter = -kMiss, exit = kMiss;
  const double os[3] = {o.x, o.y, o.z};
  const double ds[3] = {d.x, d.y, d.z};
  const double lo[3] = {b.lo.x, b.lo.y, b.lo.z};
  const double hi[3] = {b.hi.x, b.hi.y, b.hi.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ds[a]) < 1e-12) {
      if (os[a] < lo[a] || os[a] > hi[a]) return kMiss;
      continue;
    }
    double t0 = (lo[a] - os[a]) / ds[a], t1 = (hi[a] - os[a]) / ds[a];
    if (t0 > t1) std::swap(t0, t1);
    enter = std::max(enter, t0);
    exit = std::min(exit, t1);
    if (enter > exit) return kMiss;
  }
  return enter >= t_min ? enter : kMiss;  // rays starting inside a box count as misses
}

// Must mirror project()'s arithmetic exactly: generated points are claimed
// camera-visible only where the pipeline's own projection will see them.
inline bool reproject(const Camera& cam, const Point& p, int& u, int& v) {
  Vec3 c = cam.extrinsic.apply({p.x, p.y, p.z});
  if (!(c.z > 0)) return false;
  long lu = std::lround(cam.fx * c.x / c.z + cam.cx);
  long lv = std::lround(cam.fy * c.y / c.z + cam.cy);
  if (lu < 0 || lu >= cam.width || lv < 0 || lv >= cam.height) return false;
  u = static_cast<int>(lu);
  v = static_cast<int>(lv);
  return true;
}

struct ScanBuild {
  PointCloud cloud;
  std::vector<LabelId> semantic;
  std::vector<std::uint16_t> instance;
  std::vector<LabelMap> maps;
};

inline ScanBuild generate_scan(const SceneSpec& spec, std::size_t scan_index,
                               std::span<const ScanPrimitive> prims, const Pose& pose) {
  const std::vector<Camera>& cams = spec.rig.cameras();
  std::mt19937_64 rng(mix64(spec.seed ^ kGolden * (scan_index + 1)));

  std::vector<std::size_t> offset(cams.size() + 1, 0);
  std::vector<Mat3> cam_to_lidar(cams.size());
  std::vector<Vec3> center_lidar(cams.size());
  for (std::size_t c = 0; c < cams.size(); ++c) {
    offset[c + 1] = offset[c] + static_cast<std::size_t>(cams[c].width) * cams[c].height;
    cam_to_lidar[c] = cams[c].extrinsic.rotation.transposed();
    Vec3 t = cam_to_lidar[c] * cams[c].extrinsic.translation;
    center_lidar[c] = {-t.x, -t.y, -t.z};
  }
  std::size_t total = offset.back();
  std::vector<std::uint8_t> used(total, 0);

  // a few random probes, then a deterministic sweep so exhaustion is detectable
  auto pick_unused = [&]() -> std::size_t {
    for (int probe = 0; probe < 256; ++probe) {
      std::size_t g = rng() % total;
      if (!used[g]) return g;
    }
    std::size_t start = rng() % total;
    for (std::size_t i = 0; i < total; ++i) {
      std::size_t g = start + i;
      if (g >= total) g -= total;
      if (!used[g]) return g;
    }
    return total;
  };

  ScanBuild out;
  out.cloud.scan_id = static_cast<std::uint32_t>(scan_index);
  out.cloud.timestamp = scan_index / spec.frame_rate;
  out.cloud.points.reserve(spec.points_per_scan);
  out.semantic.reserve(spec.points_per_scan);
  out.instance.reserve(spec.points_per_scan);
  out.maps.resize(cams.size());
  for (std::size_t c = 0; c < cams.size(); ++c) {
    LabelMap& m = out.maps[c];
    m.width = cams[c].width;
    m.height = cams[c].height;
    m.pixels.assign(static_cast<std::size_t>(m.width) * m.height, kIgnoreLabel);
    m.camera_id = cams[c].id;
    m.scan_id = static_cast<std::uint32_t>(scan_index);
  }

  std::vector<std::uint16_t> prim_instance(prims.size(), 0);
  std::uint32_t next_instance = 1;
  std::vector<std::pair<std::size_t, std::size_t>> visible;  // (camera index, pixel index)

  while (out.cloud.points.size() < spec.points_per_scan) {
    std::size_t g = pick_unused();
    if (g == total)
      throw std::runtime_error("scan " + std::to_string(scan_index) +
                               ": camera pixels exhausted after " +
                               std::to_string(out.cloud.points.size()) + " of " +
                               std::to_string(spec.points_per_scan) + " points");
    std::size_t ci = 0;
    while (g >= offset[ci + 1]) ++ci;
    const Camera& cam = cams[ci];
    std::size_t pix = g - offset[ci];
    int u = static_cast<int>(pix % cam.width);
    int v = static_cast<int>(pix / cam.width);

    Vec3 dir_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
    Vec3 dir_lidar = cam_to_lidar[ci] * dir_cam;
    Vec3 o = pose.apply(center_lidar[ci]);
    Vec3 d = pose.rotation * dir_lidar;

    double best_t = kMiss;
    std::size_t best_p = prims.size();
    for (std::size_t p = 0; p < prims.size(); ++p) {
      double t = prims[p].is_plane ? hit_plane(o, d, prims[p].rect, kMinRayDepth)
                                   : hit_box(o, d, prims[p].box, kMinRayDepth);
      if (t < best_t) {
        best_t = t;
        best_p = p;
      }
    }
    if (!std::isfinite(best_t)) {  // nothing along this ray; retire the pixel
      used[g] = 1;
      continue;
    }

    Point pt{static_cast<float>(center_lidar[ci].x + dir_lidar.x * best_t),
             static_cast<float>(center_lidar[ci].y + dir_lidar.y * best_t),
             static_cast<float>(center_lidar[ci].z + dir_lidar.z * best_t), 0.0f};

    visible.clear();
    bool blocked = false;
    for (std::size_t c = 0; c < cams.size() && !blocked; ++c) {
      int ru, rv;
      if (!reproject(cams[c], pt, ru, rv)) continue;
      std::size_t rp = static_cast<std::size_t>(rv) * cams[c].width + ru;
      if (used[offset[c] + rp] && offset[c] + rp != g) blocked = true;
      visible.push_back({c, rp});
    }
    if (blocked || visible.empty()) {  // would collide elsewhere, or invisible after rounding
      used[g] = 1;
      continue;
    }

    pt.intensity = static_cast<float>(unit_real(rng));
    const ScanPrimitive& prim = prims[best_p];
    std::uint16_t inst = 0;
    if (prim.thing) {
      if (prim_instance[best_p] == 0) {
        if (next_instance > 65535) throw std::runtime_error("more than 65535 instances in a scan");
        prim_instance[best_p] = static_cast<std::uint16_t>(next_instance++);
      }
      inst = prim_instance[best_p];
    }
    used[g] = 1;
    for (auto [c, rp] : visible) {
      used[offset[c] + rp] = 1;
      out.maps[c].pixels[rp] = prim.cls;
    }
    out.cloud.points.push_back(pt);
    out.semantic.push_back(prim.cls);
    out.instance.push_back(inst);
  }
  return out;
}

}  // namespace detail

inline GeneratedSequence generate(const SceneSpec& spec, int workers = 1) {
  spec.validate();
  GeneratedSequence out;
  out.scans.resize(spec.scan_count);
  out.poses.resize(spec.scan_count);
  out.semantic.resize(spec.scan_count);
  out.instances.resize(spec.scan_count);
  out.gt_maps.resize(spec.scan_count);
  parallel_for(spec.scan_count, workers, [&](std::size_t s) {
    Pose pose = detail::ego_pose(spec, s);
    std::vector<detail::ScanPrimitive> prims = detail::scene_at(spec, s);
    detail::ScanBuild built = detail::generate_scan(spec, s, prims, pose);
    out.scans[s] = std::move(built.cloud);
    out.poses[s] = pose;
    out.semantic[s] = std::move(built.semantic);
    out.instances[s] = std::move(built.instance);
    out.gt_maps[s] = std::move(built.maps);
  });
  return out;
}

// ---------------------------------------------------------------- corruption

struct NoiseModel {
  std::vector<double> flip_matrix;  // class_count^2 row-major; empty -> symmetric flip_rate
  double flip_rate = 0.0;           // probability of switching to a uniform other class
  double drop_rate = 0.0;           // probability of dropping a labeled pixel to ignore
  bool independent_per_augmentation = true;
  int boundary_width = 0;  // Chebyshev radius of label bleeding across class edges

  void validate(std::size_t class_count) const {
    if (class_count == 0) throw std::invalid_argument("noise model needs a class count");
    if (!(drop_rate >= 0 && drop_rate <= 1)) throw std::invalid_argument("drop rate not in [0,1]");
    if (!(flip_rate >= 0 && flip_rate <= 1)) throw std::invalid_argument("flip rate not in [0,1]");
    if (boundary_width < 0) throw std::invalid_argument("boundary width must be non-negative");
    if (flip_matrix.empty()) return;
    if (flip_matrix.size() != class_count * class_count)
      throw std::invalid_argument("flip matrix must be class_count x class_count");
    for (std::size_t r = 0; r < class_count; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < class_count; ++c) {
        double e = flip_matrix[r * class_count + c];
        if (!(e >= 0) || !std::isfinite(e))
          throw std::invalid_argument("flip matrix entries must be non-negative");
        sum += e;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("flip matrix row " + std::to_string(r) + " sums to " +
                                    std::to_string(sum) + ", expected 1");
    }
  }
};

inline NoiseModel standard_noise() {
  NoiseModel m;
  m.flip_rate = 0.25;
  m.drop_rate = 0.15;
  return m;
}

namespace detail {

// Pixels whose window straddles a class edge may adopt any label from that
// window, emulating imprecise object boundaries in the upstream maps.
inline void boundary_corrupt(LabelMap& out, const LabelMap& gt, int width, std::mt19937_64& rng) {
  std::vector<LabelId> window;
  for (int v = 0; v < gt.height; ++v)
    for (int u = 0; u < gt.width; ++u) {
      LabelId own = gt.at(u, v);
      if (own == kIgnoreLabel) continue;
      window.clear();
      bool mixed = false;
      for (int dv = -width; dv <= width; ++dv) {
        int wv = v + dv;
        if (wv < 0 || wv >= gt.height) continue;
        for (int du = -width; du <= width; ++du) {
          int wu = u + du;
          if (wu < 0 || wu >= gt.width) continue;
          LabelId l = gt.at(wu, wv);
          if (l == kIgnoreLabel) continue;
          window.push_back(l);
          if (l != own) mixed = true;
        }
      }
      if (!mixed) continue;
      if (unit_real(rng) < 0.5)
        out.pixels[static_cast<std::size_t>(v) * gt.width + u] = window[rng() % window.size()];
    }
}

}  // namespace detail

inline std::vector<LabelMap> corrupt(const LabelMap& gt, const NoiseModel& model,
                                     std::uint64_t seed,
                                     std::span<const AugmentationDescriptor> augmentations,
                                     std::size_t class_count) {
  model.validate(class_count);
  gt.validate();
  if (augmentations.empty()) throw std::invalid_argument("corruption needs augmentation ids");
  std::vector<LabelMap> out;
  out.reserve(augmentations.size());
  for (const AugmentationDescriptor& aug : augmentations) {
    aug.validate();
    std::uint64_t s = model.independent_per_augmentation ? mix64(seed ^ detail::fnv1a(aug.id))
                                                         : mix64(seed);
    std::mt19937_64 rng(s);
    LabelMap noisy = gt;
    noisy.augmentation = aug.id;
    if (model.boundary_width > 0) detail::boundary_corrupt(noisy, gt, model.boundary_width, rng);
    for (LabelId& p : noisy.pixels) {
      if (p == kIgnoreLabel) continue;
      if (detail::unit_real(rng) < model.drop_rate) {
        p = kIgnoreLabel;
        continue;
      }
      if (!model.flip_matrix.empty()) {
        double u = detail::unit_real(rng);
        double acc = 0;
        std::size_t chosen = p, last_nonzero = p;
        for (std::size_t c = 0; c < class_count; ++c) {
          double e = model.flip_matrix[p * class_count + c];
          if (e > 0) last_nonzero = c;
          acc += e;
          if (u < acc) {
            chosen = c;
            break;
          }
          chosen = last_nonzero;  // roundoff fallthrough
        }
        p = static_cast<LabelId>(chosen);
      } else if (model.flip_rate > 0 && class_count > 1) {
        if (detail::unit_real(rng) < model.flip_rate) {
          std::size_t k = rng() % (class_count - 1);
          p = static_cast<LabelId>(k >= p ? k + 1 : k);
        }
      }
    }
    if (aug.geometric) noisy = dealign(noisy, aug);  // stored maps live in variant geometry
    out.push_back(std::move(noisy));
  }
  return out;
}

// ------------------------------------------------------------------- presets

inline std::vector<AugmentationDescriptor> standard_augmentations() {
  return {{"none", false, ""}, {"brightness", false, ""}, {"horizontal-flip", true, "horizontal-flip"}};
}

// Suburban strip: road flanked by sidewalks, buildings and shrubs behind them,
// parked cars at the curb, two driving cars and a pedestrian on the road edge.
// Distinct-class regions keep >= 0.05 m clearance on some axis (ground contact
// replaced by levitation), so float-rounded points never share a 0.1 m voxel
// across classes and temporal voting cannot corrupt clean labels.
inline SceneSpec default_scene(std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  std::mt19937_64 rng(mix64(~seed));

  spec.planes = {{-50, 200, -4.95, 4.95, 0.0, 0},
                 {-50, 200, 5.05, 29.95, 0.0, 1},
                 {-50, 200, -29.95, -5.05, 0.0, 1}};

  for (int i = 0; i < 9; ++i)
    for (double side : {1.0, -1.0}) {
      double x = -10 + 14 * i + detail::uniform(rng, -1.5, 1.5);
      double h = detail::uniform(rng, 3.0, 5.0);
      double y0 = side > 0 ? 8.0 : -12.0;
      spec.boxes.push_back({{x - 3, y0, 0.25}, {x + 3, y0 + 4, 0.25 + h}, 2});
    }
  for (int i = 0; i < 12; ++i)
    for (double side : {1.0, -1.0}) {
      double x = 2 + 9 * i + detail::uniform(rng, -1.0, 1.0);
      double y = side * (6.5 + detail::uniform(rng, -0.4, 0.4));
      spec.boxes.push_back({{x - 0.4, y - 0.4, 0.25}, {x + 0.4, y + 0.4, 1.05}, 3});
    }
  for (int i = 0; i < 6; ++i) {
    double x = 5 + 17 * i + detail::uniform(rng, -2.0, 2.0);
    spec.boxes.push_back({{x - 1.05, -4.85, 0.25}, {x + 1.05, -3.95, 1.65}, 4});
  }

  double x1 = 10 + detail::uniform(rng, -2.0, 2.0);
  spec.movers.push_back(
      {{{x1 - 1.15, -3.7, 0.25}, {x1 + 1.15, -1.9, 1.75}, 4}, {4.0 + detail::uniform(rng, -0.5, 0.5), 0, 0}});
  double x2 = 95 + detail::uniform(rng, -2.0, 2.0);
  spec.movers.push_back(
      {{{x2 - 1.15, 1.5, 0.25}, {x2 + 1.15, 3.3, 1.75}, 4}, {-4.5 - detail::uniform(rng, -0.5, 0.5), 0, 0}});
  double x3 = 30 + detail::uniform(rng, -2.0, 2.0);
  spec.movers.push_back(
      {{{x3 - 0.3, 4.3, 0.25}, {x3 + 0.3, 4.9, 1.95}, 5}, {1.0 + detail::uniform(rng, -0.2, 0.2), 0, 0}});
  return spec;
}

// Car and pedestrian swapping places along the same lane: their voxel prints
// overlap across scans, so temporal voting sees mixed classes in those cells.
inline SceneSpec crossing_scene(std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.scan_count = 8;
  spec.points_per_scan = 6000;
  spec.ego_speed = 0;
  spec.sway_amplitude = 0;
  spec.planes = {{-50, 60, -29.95, 29.95, 0.0, 0}};
  // 3 cm off the voxel lattice so coinciding surfaces land mid-cell, not on edges
  spec.movers.push_back({{{5.03, -0.8, 0.25}, {7.03, 0.8, 1.55}, 4}, {2.5, 0, 0}});
  spec.movers.push_back({{{13.73, -0.3, 0.25}, {14.33, 0.3, 1.95}, 5}, {-2.5, 0, 0}});
  return spec;
}

// ------------------------------------------------------------ dataset writing

struct CorpusSpec {
  std::vector<SceneSpec> scenes;  // one per sequence
  NoiseModel noise;
  std::vector<AugmentationDescriptor> augmentations = standard_augmentations();
  std::string primary_augmentation = "none";
  std::uint64_t noise_seed = 1;
  bool write_gt = true;
  int workers = 1;

  void validate() const {
    if (scenes.empty()) throw std::invalid_argument("corpus needs at least one sequence");
    for (const SceneSpec& s : scenes) s.validate();
    const ClassSet& first = scenes.front().classes;
    for (const SceneSpec& s : scenes) {
      if (s.classes.size() != first.size())
        throw std::invalid_argument("all sequences must share one class set");
      for (std::size_t c = 0; c < first.size(); ++c) {
        const ClassInfo &a = first.classes()[c], &b = s.classes.classes()[c];
        if (a.name != b.name || a.thing != b.thing)
          throw std::invalid_argument("all sequences must share one class set");
      }
    }
    if (augmentations.empty()) throw std::invalid_argument("corpus needs augmentations");
    std::set<std::string> ids;
    for (const AugmentationDescriptor& a : augmentations) {
      a.validate();
      if (!ids.insert(a.id).second)
        throw std::invalid_argument("duplicate augmentation id '" + a.id + "'");
    }
    if (!ids.count(primary_augmentation))
      throw std::invalid_argument("primary augmentation '" + primary_augmentation +
                                  "' is not in the augmentation list");
    noise.validate(first.size());
  }
};

inline CorpusSpec standard_corpus(std::uint64_t seed, std::size_t sequences = 4,
                                  bool clean = false) {
  CorpusSpec corpus;
  for (std::size_t q = 0; q < sequences; ++q)
    corpus.scenes.push_back(default_scene(detail::chain(seed, q + 1)));
  if (!clean) corpus.noise = standard_noise();
  corpus.noise_seed = detail::chain(seed, 0x5EED);
  return corpus;
}

inline fs::path write_dataset(const fs::path& dir, const CorpusSpec& corpus) {
  corpus.validate();
  fs::create_directories(dir);
  const ClassSet& classes = corpus.scenes.front().classes;
  io::write_class_set(dir / "classes.json", classes);

  json manifest;
  manifest["schema"] = "losc-manifest-v1";
  manifest["class_set"] = "classes.json";
  manifest["primary_augmentation"] = corpus.primary_augmentation;
  manifest["augmentations"] = json::array();
  for (const AugmentationDescriptor& a : corpus.augmentations)
    manifest["augmentations"].push_back(
        {{"id", a.id}, {"geometric", a.geometric}, {"geometry", a.geometry}});

  manifest["sequences"] = json::array();
  for (std::size_t q = 0; q < corpus.scenes.size(); ++q) {
    const SceneSpec& scene = corpus.scenes[q];
    std::string seq_id = "seq-" + detail::zero_pad(q, 2);
    fs::create_directories(dir / seq_id / "scans");
    fs::create_directories(dir / seq_id / "maps");
    if (corpus.write_gt) fs::create_directories(dir / seq_id / "gt");

    GeneratedSequence gen = generate(scene, corpus.workers);
    io::write_calibration(dir / seq_id / "calibration.json", scene.rig);
    io::write_poses(dir / seq_id / "poses.txt", gen.poses);

    json seq;
    seq["id"] = seq_id;
    seq["calibration"] = seq_id + "/calibration.json";
    seq["poses"] = seq_id + "/poses.txt";
    seq["scans"] = json::array();
    for (std::size_t s = 0; s < gen.scans.size(); ++s) {
      std::string sid = detail::zero_pad(s, 4);
      std::string points_rel = seq_id + "/scans/" + sid + ".bin";
      io::write_points(dir / points_rel, gen.scans[s]);

      json scan;
      scan["id"] = sid;
      scan["points"] = points_rel;
      if (corpus.write_gt) {
        std::vector<std::uint32_t> words(gen.semantic[s].size());
        for (std::size_t i = 0; i < words.size(); ++i)
          words[i] = io::pack_label_word(gen.semantic[s][i], gen.instances[s][i]);
        std::string gt_rel = seq_id + "/gt/" + sid + ".label";
        io::write_label_words(dir / gt_rel, words);
        scan["gt"] = gt_rel;
      }
      scan["label_maps"] = json::object();
      for (std::size_t c = 0; c < scene.rig.cameras().size(); ++c) {
        std::uint32_t cam_id = scene.rig.cameras()[c].id;
        std::uint64_t map_seed = detail::chain(
            detail::chain(detail::chain(corpus.noise_seed, q + 1), s + 1), cam_id + 1);
        std::vector<LabelMap> variants =
            corrupt(gen.gt_maps[s][c], corpus.noise, map_seed, corpus.augmentations, classes.size());
        json per_cam = json::object();
        for (std::size_t a = 0; a < corpus.augmentations.size(); ++a) {
          std::string rel = seq_id + "/maps/" + sid + "_cam" + std::to_string(cam_id) + "_" +
                            corpus.augmentations[a].id + ".png";
          io::write_label_map(dir / rel, variants[a]);
          per_cam[corpus.augmentations[a].id] = rel;
        }
        scan["label_maps"][std::to_string(cam_id)] = per_cam;
      }
      seq["scans"].push_back(scan);
    }
    manifest["sequences"].push_back(seq);
  }
  io::save_json(dir / "manifest.json", manifest);
  return dir / "manifest.json";
}

}  // namespace losc::synth
