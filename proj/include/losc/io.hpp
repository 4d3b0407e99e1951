#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "losc/abc.hpp"
#include "losc/combine.hpp"
#include "losc/core.hpp"
#include "losc/projection.hpp"

namespace losc::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::vector<char> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<char> bytes(static_cast<std::size_t>(size));
  if (size > 0 && !in.read(bytes.data(), size))
    throw std::runtime_error("failed to read " + path.string());
  return bytes;
}

inline void write_file_bytes(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (size > 0 && !out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size)))
    throw std::runtime_error("failed to write " + path.string());
}

// ---------------------------------------------------------------- point files

// Little-endian float32 records of (x, y, z, intensity).
inline PointCloud read_points(const fs::path& path) {
  std::vector<char> bytes = read_file_bytes(path);
  if (bytes.size() % 16 != 0)
    throw std::runtime_error(path.string() + ": size is not a multiple of 16 bytes");
  PointCloud cloud;
  cloud.points.resize(bytes.size() / 16);
  std::memcpy(cloud.points.data(), bytes.data(), bytes.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Point& p = cloud.points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw std::runtime_error(path.string() + ": non-finite coordinate at point " +
                               std::to_string(i));
  }
  return cloud;
}

inline void write_points(const fs::path& path, const PointCloud& cloud) {
  write_file_bytes(path, cloud.points.data(), cloud.points.size() * 16);
}

// ---------------------------------------------------------------- label files

// Little-endian uint32 per point: low 16 bits semantic id, high 16 instance.
inline std::uint32_t pack_label_word(LabelId semantic, std::uint16_t instance) {
  return static_cast<std::uint32_t>(semantic) | (static_cast<std::uint32_t>(instance) << 16);
}
inline LabelId semantic_part(std::uint32_t word) { return static_cast<LabelId>(word & 0xffff); }
inline std::uint16_t instance_part(std::uint32_t word) {
  return static_cast<std::uint16_t>(word >> 16);
}

inline std::vector<std::uint32_t> read_label_words(const fs::path& path) {
  std::vector<char> bytes = read_file_bytes(path);
  if (bytes.size() % 4 != 0)
    throw std::runtime_error(path.string() + ": size is not a multiple of 4 bytes");
  std::vector<std::uint32_t> words(bytes.size() / 4);
  std::memcpy(words.data(), bytes.data(), bytes.size());
  return words;
}

inline void write_label_words(const fs::path& path, std::span<const std::uint32_t> words) {
  write_file_bytes(path, words.data(), words.size() * 4);
}

inline Labeling read_semantic_labels(const fs::path& path, Provenance provenance, int round = 0) {
  std::vector<std::uint32_t> words = read_label_words(path);
  Labeling out;
  out.provenance = provenance;
  out.round = round;
  out.labels.resize(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) out.labels[i] = semantic_part(words[i]);
  return out;
}

inline void write_semantic_labels(const fs::path& path, const Labeling& labeling) {
  std::vector<std::uint32_t> words(labeling.labels.size());
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = pack_label_word(labeling.labels[i], 0);
  write_label_words(path, words);
}

// ---------------------------------------------------------------------- poses

// One 3x4 row-major matrix per line.
inline std::vector<Pose> read_poses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Pose> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    double v[12];
    for (int i = 0; i < 12; ++i)
      if (!(ss >> v[i]))
        throw std::runtime_error(path.string() + ": line " + std::to_string(poses.size() + 1) +
                                 " does not hold 12 numbers");
    double extra;
    if (ss >> extra)
      throw std::runtime_error(path.string() + ": line " + std::to_string(poses.size() + 1) +
                               " holds more than 12 numbers");
    Pose pose;
    pose.rotation = {{v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]}};
    pose.translation = {v[3], v[7], v[11]};
    pose.validate();
    poses.push_back(pose);
  }
  return poses;
}

inline void write_poses(const fs::path& path, std::span<const Pose> poses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  for (const Pose& p : poses) {
    const double* r = p.rotation.m;
    out << r[0] << ' ' << r[1] << ' ' << r[2] << ' ' << p.translation.x << ' ' << r[3] << ' '
        << r[4] << ' ' << r[5] << ' ' << p.translation.y << ' ' << r[6] << ' ' << r[7] << ' '
        << r[8] << ' ' << p.translation.z << '\n';
  }
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

// ----------------------------------------------------------------------- JSON

inline json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline void save_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

// -------------------------------------------------------------- calibration

inline CameraRig read_calibration(const fs::path& path) {
  json j = load_json(path);
  if (!j.contains("cameras") || !j["cameras"].is_array())
    throw std::runtime_error(path.string() + ": missing cameras array");
  std::vector<Camera> cameras;
  for (const json& c : j["cameras"]) {
    Camera cam;
    try {
      cam.id = c.at("id").get<std::uint32_t>();
      cam.fx = c.at("fx").get<double>();
      cam.fy = c.at("fy").get<double>();
      cam.cx = c.at("cx").get<double>();
      cam.cy = c.at("cy").get<double>();
      cam.width = c.at("width").get<int>();
      cam.height = c.at("height").get<int>();
      std::vector<double> e = c.at("extrinsic").get<std::vector<double>>();
      if (e.size() != 12)
        throw std::runtime_error("extrinsic must hold 12 values (3x4 row-major)");
      cam.extrinsic.rotation = {{e[0], e[1], e[2], e[4], e[5], e[6], e[8], e[9], e[10]}};
      cam.extrinsic.translation = {e[3], e[7], e[11]};
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ": " + e.what());
    }
    cameras.push_back(cam);
  }
  try {
    return CameraRig(std::move(cameras));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline void write_calibration(const fs::path& path, const CameraRig& rig) {
  json cams = json::array();
  for (const Camera& c : rig.cameras()) {
    const double* r = c.extrinsic.rotation.m;
    const Vec3& t = c.extrinsic.translation;
    cams.push_back({{"id", c.id},
                    {"fx", c.fx},
                    {"fy", c.fy},
                    {"cx", c.cx},
                    {"cy", c.cy},
                    {"width", c.width},
                    {"height", c.height},
                    {"extrinsic", json::array({r[0], r[1], r[2], t.x, r[3], r[4], r[5], t.y, r[6],
                                               r[7], r[8], t.z})}});
  }
  save_json(path, {{"schema_version", 1}, {"cameras", cams}});
}

// ----------------------------------------------------------------- class set

inline ClassSet read_class_set(const fs::path& path) {
  json j = load_json(path);
  try {
    if (j.value("ignore_id", 65535) != 65535)
      throw std::runtime_error("ignore_id is fixed at 65535");
    std::vector<ClassInfo> infos;
    for (const json& c : j.at("classes")) {
      std::string kind = c.at("kind").get<std::string>();
      if (kind != "thing" && kind != "stuff")
        throw std::runtime_error("class kind must be 'thing' or 'stuff'");
      infos.push_back({c.at("id").get<LabelId>(), c.at("name").get<std::string>(),
                       kind == "thing"});
    }
    ClassSet classes(std::move(infos));
    if (j.contains("superclasses")) {
      classes.set_superclasses(j["superclasses"].at("names").get<std::vector<std::string>>(),
                               j["superclasses"].at("map").get<std::vector<LabelId>>());
    }
    return classes;
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline void write_class_set(const fs::path& path, const ClassSet& classes) {
  json arr = json::array();
  for (const ClassInfo& c : classes.classes())
    arr.push_back({{"id", c.id}, {"name", c.name}, {"kind", c.thing ? "thing" : "stuff"}});
  json j = {{"schema_version", 1}, {"ignore_id", 65535}, {"classes", arr}};
  if (classes.has_superclasses())
    j["superclasses"] = {{"names", classes.superclass_names()},
                         {"map", classes.superclass_map()}};
  save_json(path, j);
}

// ------------------------------------------------------------ 16-bit PNG maps

namespace detail {
inline void png_quiet_warning(png_structp, png_const_charp) {}
}

inline LabelMap read_label_map(const fs::path& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path.string());
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_quiet_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(f);
    throw std::runtime_error("libpng initialization failed");
  }
  LabelMap map;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(f);
    throw std::runtime_error("failed to decode PNG " + path.string());
  }
  png_init_io(png, f);
  png_read_info(png, info);
  bool ok = png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
            png_get_bit_depth(png, info) == 16 &&
            png_get_interlace_type(png, info) == PNG_INTERLACE_NONE;
  if (!ok) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(f);
    throw std::runtime_error(path.string() + ": label maps must be 16-bit grayscale PNG");
  }
  map.width = static_cast<int>(png_get_image_width(png, info));
  map.height = static_cast<int>(png_get_image_height(png, info));
  map.pixels.resize(static_cast<std::size_t>(map.width) * map.height);
  png_set_swap(png);
  for (int v = 0; v < map.height; ++v)
    png_read_row(png, reinterpret_cast<png_bytep>(map.pixels.data() +
                                                  static_cast<std::size_t>(v) * map.width),
                 nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(f);
  return map;
}

inline void write_label_map(const fs::path& path, const LabelMap& map) {
  map.validate();
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_quiet_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw std::runtime_error("failed to encode PNG " + path.string());
  }
  png_init_io(png, f);
  png_set_compression_level(png, 1);
  png_set_IHDR(png, info, map.width, map.height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_swap(png);
  for (int v = 0; v < map.height; ++v)
    png_write_row(png, reinterpret_cast<png_const_bytep>(
                           map.pixels.data() + static_cast<std::size_t>(v) * map.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

// -------------------------------------------------------------------- dataset

struct DatasetScan {
  std::string id;
  fs::path points;
  fs::path gt;  // empty when absent
  Pose pose;
  std::map<std::uint32_t, std::map<std::string, fs::path>> label_maps;
};

struct DatasetSequence {
  std::string id;
  CameraRig rig;
  std::vector<DatasetScan> scans;
};

struct Dataset {
  fs::path root;
  ClassSet classes;
  std::vector<AugmentationDescriptor> augmentations;
  std::string primary_augmentation;
  std::vector<DatasetSequence> sequences;

  const AugmentationDescriptor& augmentation(const std::string& id) const {
    for (const AugmentationDescriptor& a : augmentations)
      if (a.id == id) return a;
    throw std::out_of_range("augmentation '" + id + "' is not in the manifest");
  }

  bool has_gt() const {
    for (const DatasetSequence& seq : sequences)
      for (const DatasetScan& scan : seq.scans)
        if (scan.gt.empty()) return false;
    return true;
  }
};

inline Dataset load_dataset(const fs::path& manifest_path) {
  json j = load_json(manifest_path);
  fs::path root = manifest_path.parent_path();
  Dataset ds;
  ds.root = root;
  auto resolve = [&](const std::string& rel) -> fs::path {
    fs::path p = root / rel;
    if (!fs::exists(p))
      throw std::runtime_error(manifest_path.string() + ": referenced file missing: " + rel);
    return p;
  };
  try {
    ds.classes = read_class_set(resolve(j.at("class_set").get<std::string>()));
    for (const json& a : j.at("augmentations")) {
      AugmentationDescriptor aug;
      aug.id = a.at("id").get<std::string>();
      aug.geometric = a.value("geometric", false);
      aug.geometry = a.value("geometry", "");
      aug.validate();
      ds.augmentations.push_back(aug);
    }
    ds.primary_augmentation = j.at("primary_augmentation").get<std::string>();
    ds.augmentation(ds.primary_augmentation);  // must be listed

    for (const json& s : j.at("sequences")) {
      DatasetSequence seq;
      seq.id = s.at("id").get<std::string>();
      seq.rig = read_calibration(resolve(s.at("calibration").get<std::string>()));
      std::vector<Pose> poses = read_poses(resolve(s.at("poses").get<std::string>()));
      const json& scans = s.at("scans");
      if (poses.size() != scans.size())
        throw std::runtime_error("sequence " + seq.id + ": poses file holds " +
                                 std::to_string(poses.size()) + " poses for " +
                                 std::to_string(scans.size()) + " scans");
      for (std::size_t i = 0; i < scans.size(); ++i) {
        const json& sc = scans[i];
        DatasetScan scan;
        scan.id = sc.at("id").get<std::string>();
        scan.points = resolve(sc.at("points").get<std::string>());
        if (sc.contains("gt")) scan.gt = resolve(sc.at("gt").get<std::string>());
        scan.pose = poses[i];
        for (const auto& [cam_str, maps] : sc.at("label_maps").items()) {
          std::uint32_t cam_id = static_cast<std::uint32_t>(std::stoul(cam_str));
          seq.rig.by_id(cam_id);
          for (const auto& [aug_id, rel] : maps.items()) {
            ds.augmentation(aug_id);
            scan.label_maps[cam_id][aug_id] = resolve(rel.get<std::string>());
          }
        }
        // every camera needs every augmentation's map
        for (const Camera& cam : seq.rig.cameras())
          for (const AugmentationDescriptor& aug : ds.augmentations)
            if (!scan.label_maps.count(cam.id) || !scan.label_maps[cam.id].count(aug.id))
              throw std::runtime_error("sequence " + seq.id + " scan " + scan.id +
                                       ": missing label map for camera " +
                                       std::to_string(cam.id) + ", augmentation '" + aug.id +
                                       "'");
        seq.scans.push_back(std::move(scan));
      }
      ds.sequences.push_back(std::move(seq));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  } catch (const std::out_of_range& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  if (ds.sequences.empty())
    throw std::runtime_error(manifest_path.string() + ": manifest lists no sequences");
  return ds;
}

// ---------------------------------------------------------- robustness report

inline void write_robustness_report(const fs::path& path, const RobustnessReport& report) {
  json rows = json::array();
  for (const ClassRobustness& r : report.rows) {
    json row = {{"id", r.id},        {"name", r.name},     {"n_aug", r.n_aug},
                {"n_tim", r.n_tim},  {"robust", r.robust}};
    if (std::isinf(r.ratio))
      row["ratio"] = nullptr;
    else
      row["ratio"] = r.ratio;
    rows.push_back(row);
  }
  save_json(path, {{"schema_version", 1},
                   {"min_points", report.min_points},
                   {"min_ratio", report.min_ratio},
                   {"classes", rows}});
}

inline RobustnessReport read_robustness_report(const fs::path& path) {
  json j = load_json(path);
  RobustnessReport report;
  try {
    report.min_points = j.at("min_points").get<std::uint64_t>();
    report.min_ratio = j.at("min_ratio").get<double>();
    for (const json& r : j.at("classes")) {
      ClassRobustness row;
      row.id = r.at("id").get<LabelId>();
      row.name = r.at("name").get<std::string>();
      row.n_aug = r.at("n_aug").get<std::uint64_t>();
      row.n_tim = r.at("n_tim").get<std::uint64_t>();
      row.ratio = r.at("ratio").is_null() ? std::numeric_limits<double>::infinity()
                                          : r.at("ratio").get<double>();
      row.robust = r.at("robust").get<bool>();
      report.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  for (std::size_t c = 0; c < report.rows.size(); ++c)
    if (report.rows[c].id != c)
      throw std::runtime_error(path.string() + ": class rows must be dense and ordered");
  return report;
}

inline std::string robustness_report_text(const RobustnessReport& report) {
  std::ostringstream out;
  out << "robust-class audit (min_points=" << report.min_points
      << ", min_ratio=" << std::setprecision(4) << report.min_ratio << ")\n";
  out << std::left << std::setw(6) << "id" << std::setw(16) << "class" << std::right
      << std::setw(12) << "n_aug" << std::setw(12) << "n_tim" << std::setw(10) << "ratio"
      << std::setw(9) << "robust" << '\n';
  for (const ClassRobustness& r : report.rows) {
    out << std::left << std::setw(6) << r.id << std::setw(16) << r.name << std::right
        << std::setw(12) << r.n_aug << std::setw(12) << r.n_tim << std::setw(10);
    if (std::isinf(r.ratio))
      out << "inf";
    else
      out << std::fixed << std::setprecision(2) << r.ratio << std::defaultfloat;
    out << std::setw(9) << (r.robust ? "yes" : "no") << '\n';
  }
  return out.str();
}

}  // namespace losc::io
