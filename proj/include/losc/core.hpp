#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace losc {

using LabelId = std::uint16_t;
inline constexpr LabelId kIgnoreLabel = 65535;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

struct Mat3 {
  // row-major
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
        r.m[i * 3 + j] = s;
      }
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i * 3 + j] = m[j * 3 + i];
    return r;
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  static Mat3 rotation_z(double yaw) {
    double c = std::cos(yaw), s = std::sin(yaw);
    return {{c, -s, 0, s, c, 0, 0, 0, 1}};
  }
  static Mat3 rotation_y(double pitch) {
    double c = std::cos(pitch), s = std::sin(pitch);
    return {{c, 0, s, 0, 1, 0, -s, 0, c}};
  }
  static Mat3 rotation_x(double roll) {
    double c = std::cos(roll), s = std::sin(roll);
    return {{1, 0, 0, 0, c, -s, 0, s, c}};
  }
};

// Rigid transform, p_out = R * p + t.
struct Pose {
  Mat3 rotation;
  Vec3 translation;

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose compose(const Pose& inner) const {
    return {rotation * inner.rotation, rotation * inner.translation + translation};
  }

  Pose inverse() const {
    Mat3 rt = rotation.transposed();
    Vec3 t = rt * translation;
    return {rt, {-t.x, -t.y, -t.z}};
  }

  bool orthonormal(double tol = 1e-6) const {
    Mat3 rrt = rotation * rotation.transposed();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double want = i == j ? 1.0 : 0.0;
        if (std::abs(rrt.m[i * 3 + j] - want) > tol) return false;
      }
    return std::abs(rotation.det() - 1.0) <= tol;
  }

  void validate() const {
    for (double v : rotation.m)
      if (!std::isfinite(v)) throw std::invalid_argument("pose rotation has non-finite entries");
    if (!translation.finite()) throw std::invalid_argument("pose translation has non-finite entries");
    if (!orthonormal()) throw std::invalid_argument("pose rotation is not a proper rotation matrix");
  }
};

struct ClassInfo {
  LabelId id = 0;
  std::string name;
  bool thing = false;
};

// Dense semantic vocabulary with ids 0..C-1; 65535 is the ignore label and is
// never a member. Optionally carries a super-class grouping.
class ClassSet {
 public:
  ClassSet() = default;

  explicit ClassSet(std::vector<ClassInfo> classes) : classes_(std::move(classes)) {
    if (classes_.empty()) throw std::invalid_argument("class set must not be empty");
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      if (classes_[i].id != i)
        throw std::invalid_argument("class ids must be dense and ordered from 0, got id " +
                                    std::to_string(classes_[i].id) + " at position " +
                                    std::to_string(i));
      if (classes_[i].id == kIgnoreLabel)
        throw std::invalid_argument("65535 is reserved for ignore and cannot be a class id");
    }
  }

  void set_superclasses(std::vector<std::string> names, std::vector<LabelId> map) {
    if (map.size() != classes_.size())
      throw std::invalid_argument("super-class map must cover every class");
    for (LabelId s : map)
      if (s >= names.size())
        throw std::invalid_argument("super-class map points past the super-class list");
    superclass_names_ = std::move(names);
    superclass_map_ = std::move(map);
  }

  std::size_t size() const { return classes_.size(); }

  const ClassInfo& info(LabelId id) const {
    if (id >= classes_.size())
      throw std::out_of_range("unknown class id " + std::to_string(id));
    return classes_[id];
  }

  const std::vector<ClassInfo>& classes() const { return classes_; }

  bool is_thing(LabelId id) const { return info(id).thing; }

  // Valid as a label value: a member class or ignore.
  bool valid_label(LabelId id) const { return id == kIgnoreLabel || id < classes_.size(); }

  bool has_superclasses() const { return !superclass_map_.empty(); }
  const std::vector<LabelId>& superclass_map() const { return superclass_map_; }
  const std::vector<std::string>& superclass_names() const { return superclass_names_; }

  LabelId superclass_of(LabelId id) const {
    if (id == kIgnoreLabel) return kIgnoreLabel;
    if (!has_superclasses()) throw std::logic_error("class set has no super-class map");
    return superclass_map_[info(id).id];
  }

  // Vocabulary of the super-classes; a super-class is a thing if any member is.
  ClassSet superclass_set() const {
    if (!has_superclasses()) throw std::logic_error("class set has no super-class map");
    std::vector<ClassInfo> supers(superclass_names_.size());
    for (std::size_t s = 0; s < supers.size(); ++s)
      supers[s] = {static_cast<LabelId>(s), superclass_names_[s], false};
    for (const ClassInfo& c : classes_)
      if (c.thing) supers[superclass_map_[c.id]].thing = true;
    return ClassSet(std::move(supers));
  }

 private:
  std::vector<ClassInfo> classes_;
  std::vector<std::string> superclass_names_;
  std::vector<LabelId> superclass_map_;
};

struct Point {
  float x = 0, y = 0, z = 0;
  float intensity = 0;
};

struct PointCloud {
  std::vector<Point> points;
  std::uint32_t scan_id = 0;
  std::optional<double> timestamp;

  std::size_t size() const { return points.size(); }
};

enum class Provenance { vlm, tim, abc, aug, atc, model };

inline std::string provenance_name(Provenance p, int round = 0) {
  switch (p) {
    case Provenance::vlm: return "vlm";
    case Provenance::tim: return "tim";
    case Provenance::abc: return "abc";
    case Provenance::aug: return "aug";
    case Provenance::atc: return "atc";
    case Provenance::model: return "model-round-" + std::to_string(round);
  }
  throw std::logic_error("bad provenance value");
}

inline Provenance provenance_from_name(const std::string& s, int* round = nullptr) {
  if (s == "vlm") return Provenance::vlm;
  if (s == "tim") return Provenance::tim;
  if (s == "abc") return Provenance::abc;
  if (s == "aug") return Provenance::aug;
  if (s == "atc") return Provenance::atc;
  if (s.rfind("model-round-", 0) == 0) {
    if (round) *round = std::stoi(s.substr(12));
    return Provenance::model;
  }
  throw std::invalid_argument("unknown provenance tag '" + s + "'");
}

// Per-scan semantic labels, one per point, 65535 = ignore.
struct Labeling {
  std::vector<LabelId> labels;
  Provenance provenance = Provenance::vlm;
  int round = 0;

  std::size_t size() const { return labels.size(); }
};

inline PointCloud transform_to_world(const PointCloud& cloud, const Pose& pose) {
  pose.validate();
  PointCloud out;
  out.scan_id = cloud.scan_id;
  out.timestamp = cloud.timestamp;
  out.points.resize(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Point& p = cloud.points[i];
    Vec3 w = pose.apply({p.x, p.y, p.z});
    if (!w.finite())
      throw std::invalid_argument("point " + std::to_string(i) +
                                  " is non-finite after transform to world");
    out.points[i] = {static_cast<float>(w.x), static_cast<float>(w.y),
                     static_cast<float>(w.z), p.intensity};
  }
  return out;
}

struct VoxelKey {
  std::int32_t i = 0, j = 0, k = 0;
  bool operator==(const VoxelKey&) const = default;
  auto operator<=>(const VoxelKey&) const = default;
};

// Integer cell of a world-anchored grid: floor(coordinate / voxel_size).
inline VoxelKey voxel_key(double x, double y, double z, double voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size))
    throw std::invalid_argument("voxel size must be positive and finite");
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
    throw std::invalid_argument("non-finite coordinate in voxel_key");
  return {static_cast<std::int32_t>(std::floor(x / voxel_size)),
          static_cast<std::int32_t>(std::floor(y / voxel_size)),
          static_cast<std::int32_t>(std::floor(z / voxel_size))};
}

inline VoxelKey voxel_key(const Point& p, double voxel_size) {
  return voxel_key(p.x, p.y, p.z, voxel_size);
}

inline constexpr std::int64_t kVoxelKeyOffset = std::int64_t{1} << 20;
inline constexpr std::uint64_t kVoxelFieldMask = (std::uint64_t{1} << 21) - 1;

// 21 bits per axis; key 0 is reserved as the hash-map empty sentinel.
inline std::uint64_t pack_voxel_key(VoxelKey k) {
  std::int64_t a = k.i + kVoxelKeyOffset;
  std::int64_t b = k.j + kVoxelKeyOffset;
  std::int64_t c = k.k + kVoxelKeyOffset;
  if (((a | b | c) & ~static_cast<std::int64_t>(kVoxelFieldMask)) != 0)
    throw std::out_of_range("voxel index exceeds the ±2^20 packing range");
  std::uint64_t packed = (static_cast<std::uint64_t>(a) << 42) |
                         (static_cast<std::uint64_t>(b) << 21) |
                         static_cast<std::uint64_t>(c);
  if (packed == 0) throw std::out_of_range("voxel index exceeds the ±2^20 packing range");
  return packed;
}

inline VoxelKey unpack_voxel_key(std::uint64_t packed) {
  return {static_cast<std::int32_t>(((packed >> 42) & kVoxelFieldMask) - kVoxelKeyOffset),
          static_cast<std::int32_t>(((packed >> 21) & kVoxelFieldMask) - kVoxelKeyOffset),
          static_cast<std::int32_t>((packed & kVoxelFieldMask) - kVoxelKeyOffset)};
}

// SplitMix64 finalizer; used for voxel-key hashing and seed derivation.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct ClassCounts {
  std::vector<std::uint64_t> per_class;
  std::uint64_t ignored = 0;

  std::uint64_t total() const {
    std::uint64_t t = ignored;
    for (std::uint64_t c : per_class) t += c;
    return t;
  }

  std::uint64_t of(LabelId id) const {
    if (id == kIgnoreLabel) return ignored;
    if (id >= per_class.size()) throw std::out_of_range("unknown class id " + std::to_string(id));
    return per_class[id];
  }
};

inline void count_labels(std::span<const LabelId> labels, const ClassSet& classes,
                         ClassCounts& counts) {
  counts.per_class.resize(classes.size(), 0);
  for (LabelId l : labels) {
    if (l == kIgnoreLabel) {
      ++counts.ignored;
    } else if (l < classes.size()) {
      ++counts.per_class[l];
    } else {
      throw std::out_of_range("label " + std::to_string(l) + " is not in the class set");
    }
  }
}

inline ClassCounts class_counts(std::span<const Labeling> labelings, const ClassSet& classes) {
  ClassCounts counts;
  counts.per_class.resize(classes.size(), 0);
  for (const Labeling& l : labelings) count_labels(l.labels, classes, counts);
  return counts;
}

// Scan-level entry of a sequence: where the points live, the sensor-to-world
// pose, and the label-map file per (camera, augmentation).
struct ScanEntry {
  std::string id;
  std::string points_path;
  Pose pose;
  std::map<std::uint32_t, std::map<std::string, std::string>> label_maps;
  std::string gt_path;
};

struct SequenceManifest {
  std::string id;
  std::string calibration_path;
  std::vector<ScanEntry> scans;
};

}  // namespace losc
