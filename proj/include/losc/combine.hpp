#pragma once

#include <limits>

#include "losc/core.hpp"

namespace losc {

struct ClassRobustness {
  LabelId id = 0;
  std::string name;
  std::uint64_t n_aug = 0;
  std::uint64_t n_tim = 0;
  double ratio = 0.0;  // +inf when n_tim = 0 but n_aug > 0
  bool robust = false;
};

struct RobustnessReport {
  std::uint64_t min_points = 200000;  // minimum class size under the augmented labeling
  double min_ratio = 1.0 / 3.0;       // minimum preserved fraction vs the temporal labeling
  std::vector<ClassRobustness> rows;  // ascending class id

  bool is_robust(LabelId id) const {
    return id != kIgnoreLabel && id < rows.size() && rows[id].robust;
  }
};

// A class is robust when the augmented labeling kept at least min_points of it
// and at least min_ratio of its temporal count. Ignore is never robust.
inline RobustnessReport robust_classes(const ClassCounts& counts_aug, const ClassCounts& counts_tim,
                                       std::uint64_t min_points, double min_ratio,
                                       const ClassSet& classes) {
  if (!(min_ratio >= 0.0 && min_ratio <= 1.0))
    throw std::invalid_argument("minimum ratio must lie in [0, 1]");
  if (counts_aug.per_class.size() != classes.size() ||
      counts_tim.per_class.size() != classes.size())
    throw std::invalid_argument("count vectors do not match the class set");

  RobustnessReport report;
  report.min_points = min_points;
  report.min_ratio = min_ratio;
  report.rows.resize(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    ClassRobustness& row = report.rows[c];
    row.id = static_cast<LabelId>(c);
    row.name = classes.info(row.id).name;
    row.n_aug = counts_aug.per_class[c];
    row.n_tim = counts_tim.per_class[c];
    bool ratio_ok;
    if (row.n_tim > 0) {
      row.ratio = static_cast<double>(row.n_aug) / static_cast<double>(row.n_tim);
      ratio_ok = row.ratio >= min_ratio;
    } else if (row.n_aug > 0) {
      row.ratio = std::numeric_limits<double>::infinity();
      ratio_ok = true;
    } else {
      row.ratio = 0.0;
      ratio_ok = false;
    }
    row.robust = row.n_aug >= min_points && ratio_ok;
  }
  return report;
}

// Keeps the augmented label where it belongs to a robust class, otherwise
// falls back to the temporal label.
inline Labeling combine(const Labeling& l_aug, const Labeling& l_tim,
                        const RobustnessReport& report) {
  if (l_aug.labels.size() != l_tim.labels.size())
    throw std::invalid_argument("labelings disagree on point count");
  Labeling out;
  out.provenance = Provenance::atc;
  out.labels.resize(l_aug.labels.size());
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    LabelId a = l_aug.labels[i];
    out.labels[i] = report.is_robust(a) ? a : l_tim.labels[i];
  }
  return out;
}

inline std::vector<Labeling> combine(std::span<const Labeling> l_aug,
                                     std::span<const Labeling> l_tim,
                                     const RobustnessReport& report) {
  if (l_aug.size() != l_tim.size())
    throw std::invalid_argument("labelings disagree on scan count");
  std::vector<Labeling> out;
  out.reserve(l_aug.size());
  for (std::size_t s = 0; s < l_aug.size(); ++s) out.push_back(combine(l_aug[s], l_tim[s], report));
  return out;
}

}  // namespace losc
