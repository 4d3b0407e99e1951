#pragma once

#include <functional>

#include "losc/projection.hpp"
#include "losc/tbc.hpp"

namespace losc {

struct AugmentationDescriptor {
  std::string id;
  bool geometric = false;
  std::string geometry;  // inverse spec; only "horizontal-flip" is supported

  void validate() const {
    if (id.empty()) throw std::invalid_argument("augmentation id must not be empty");
    if (geometric && geometry != "horizontal-flip")
      throw std::invalid_argument("augmentation '" + id + "' uses unsupported geometry '" +
                                  geometry + "'");
  }
};

// Maps a variant's label map back to the original image geometry; photometric
// augmentations leave pixels in place.
inline LabelMap dealign(const LabelMap& map, const AugmentationDescriptor& aug) {
  aug.validate();
  map.validate();
  if (!aug.geometric) return map;
  LabelMap out = map;
  for (int v = 0; v < map.height; ++v)
    for (int u = 0; u < map.width; ++u)
      out.pixels[static_cast<std::size_t>(v) * map.width + u] = map.at(map.width - 1 - u, v);
  return out;
}

// A point keeps a label only when every variant assigns it; any disagreement
// (ignore included) falls back to ignore.
inline Labeling unanimity(std::span<const Labeling> variants) {
  if (variants.empty()) throw std::invalid_argument("unanimity needs at least one variant");
  Labeling out;
  out.provenance = Provenance::abc;
  out.labels = variants.front().labels;
  for (std::size_t v = 1; v < variants.size(); ++v) {
    if (variants[v].labels.size() != out.labels.size())
      throw std::invalid_argument("augmentation variants disagree on point count");
    for (std::size_t i = 0; i < out.labels.size(); ++i)
      if (variants[v].labels[i] != out.labels[i]) out.labels[i] = kIgnoreLabel;
  }
  return out;
}

struct AbcResult {
  std::vector<Labeling> l_abc;  // unanimity output per scan
  std::vector<Labeling> l_aug;  // after temporal consolidation
};

// Per augmentation: dealign and back-project; then unanimity per point, and a
// consolidation pass over the result.
inline AbcResult build_l_aug(
    std::span<const PointCloud> scans, std::span<const Pose> poses, const CameraRig& rig,
    std::span<const AugmentationDescriptor> augmentations,
    const std::function<LabelMap(std::size_t, std::uint32_t, const std::string&)>& load_map,
    double voxel_size, std::size_t class_count, double depth_tolerance, int workers = 1) {
  if (augmentations.empty())
    throw std::invalid_argument("augmentation-based consolidation needs at least one variant");
  if (scans.size() != poses.size()) throw std::invalid_argument("scan and pose counts differ");
  for (const AugmentationDescriptor& aug : augmentations) aug.validate();

  AbcResult result;
  result.l_abc.resize(scans.size());
  parallel_for(scans.size(), workers, [&](std::size_t s) {
    std::vector<Labeling> variants;
    variants.reserve(augmentations.size());
    for (const AugmentationDescriptor& aug : augmentations) {
      std::vector<LabelMap> maps;
      maps.reserve(rig.cameras().size());
      for (const Camera& camera : rig.cameras())
        maps.push_back(dealign(load_map(s, camera.id, aug.id), aug));
      variants.push_back(backproject_labels(scans[s], maps, rig, depth_tolerance));
    }
    result.l_abc[s] = unanimity(variants);
  });
  result.l_aug = tbc(scans, poses, result.l_abc, voxel_size, class_count, 0, {},
                     Provenance::aug, workers);
  return result;
}

}  // namespace losc
