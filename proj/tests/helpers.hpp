#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "losc/core.hpp"

namespace testutil {

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  return rng() % n;
}

inline losc::Mat3 axis_angle(losc::Vec3 axis, double angle) {
  double n = axis.norm();
  axis = axis * (1.0 / n);
  double c = std::cos(angle), s = std::sin(angle), C = 1.0 - c;
  double x = axis.x, y = axis.y, z = axis.z;
  return {{c + x * x * C, x * y * C - z * s, x * z * C + y * s,
           y * x * C + z * s, c + y * y * C, y * z * C - x * s,
           z * x * C - y * s, z * y * C + x * s, c + z * z * C}};
}

inline losc::Pose random_pose(std::mt19937_64& rng, double max_translation = 50.0) {
  losc::Vec3 axis{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
  if (axis.norm() < 1e-6) axis = {0, 0, 1};
  losc::Pose pose;
  pose.rotation = axis_angle(axis, uniform(rng, 0, 2 * 3.14159265358979));
  pose.translation = {uniform(rng, -max_translation, max_translation),
                      uniform(rng, -max_translation, max_translation),
                      uniform(rng, -max_translation, max_translation)};
  return pose;
}

// Self-deleting scratch directory for file-based tests.
class TempDir {
 public:
  explicit TempDir(const std::string& hint) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (hint + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
