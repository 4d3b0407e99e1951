#pragma once

#include <iomanip>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "losc/core.hpp"
#include "losc/panoptic.hpp"

namespace losc {

// unlabeled_as_error scores a predicted ignore as a miss for the ground-truth
// class; unlabeled_excluded drops those points from evaluation entirely.
// Ground-truth ignore points are excluded under both modes.
enum class EvalMode { unlabeled_as_error, unlabeled_excluded };

inline std::string eval_mode_name(EvalMode mode) {
  return mode == EvalMode::unlabeled_as_error ? "unlabeled-as-error" : "unlabeled-excluded";
}

inline EvalMode eval_mode_from_name(const std::string& name) {
  if (name == "unlabeled-as-error") return EvalMode::unlabeled_as_error;
  if (name == "unlabeled-excluded") return EvalMode::unlabeled_excluded;
  throw std::invalid_argument("unknown evaluation mode '" + name + "'");
}

inline double coverage(const Labeling& labeling) {
  if (labeling.labels.empty()) throw std::invalid_argument("coverage of an empty labeling");
  std::size_t labeled = 0;
  for (LabelId lab : labeling.labels)
    if (lab != kIgnoreLabel) ++labeled;
  return static_cast<double>(labeled) / static_cast<double>(labeling.labels.size());
}

// (C+1)x(C+1) counts, rows ground truth, columns prediction, index C = ignore.
class ConfusionMatrix {
 public:
  ConfusionMatrix(std::size_t class_count, EvalMode mode)
      : class_count_(class_count), mode_(mode),
        counts_((class_count + 1) * (class_count + 1), 0) {
    if (class_count == 0) throw std::invalid_argument("confusion matrix needs classes");
  }

  std::size_t class_count() const { return class_count_; }
  EvalMode mode() const { return mode_; }

  void add(std::span<const LabelId> pred, std::span<const LabelId> gt) {
    if (pred.size() != gt.size())
      throw std::invalid_argument("prediction and ground truth disagree on point count");
    for (std::size_t i = 0; i < pred.size(); ++i)
      counts_[index(gt[i]) * (class_count_ + 1) + index(pred[i])] += 1;
  }

  void add(const Labeling& pred, const Labeling& gt) { add(pred.labels, gt.labels); }

  void merge(const ConfusionMatrix& other) {
    if (other.class_count_ != class_count_ || other.mode_ != mode_)
      throw std::invalid_argument("confusion matrices disagree on shape or mode");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  std::uint64_t at(LabelId gt, LabelId pred) const {
    return counts_[index(gt) * (class_count_ + 1) + index(pred)];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts_) t += c;
    return t;
  }

 private:
  std::size_t index(LabelId id) const {
    if (id == kIgnoreLabel) return class_count_;
    if (id >= class_count_) throw std::out_of_range("unknown class id " + std::to_string(id));
    return id;
  }

  std::size_t class_count_;
  EvalMode mode_;
  std::vector<std::uint64_t> counts_;
};

struct SemanticScores {
  double miou = 0.0;
  double macc = 0.0;
  double coverage = 0.0;          // non-ignore predictions among gt-labeled points
  std::vector<double> iou;        // per class, 0 when absent
  std::vector<double> acc;
  std::vector<bool> present;      // class occurs in the evaluated ground truth
  std::uint64_t evaluated = 0;    // points contributing to the scores
};

inline SemanticScores semantic_scores(const ConfusionMatrix& m) {
  const std::size_t C = m.class_count();
  SemanticScores s;
  s.iou.resize(C, 0.0);
  s.acc.resize(C, 0.0);
  s.present.resize(C, false);

  std::uint64_t gt_labeled = 0, gt_covered = 0;
  std::size_t present_count = 0;
  for (std::size_t c = 0; c < C; ++c) {
    LabelId cls = static_cast<LabelId>(c);
    std::uint64_t tp = m.at(cls, cls);
    std::uint64_t fn = 0, fp = 0, row = 0;
    for (std::size_t p = 0; p < C; ++p) {
      row += m.at(cls, static_cast<LabelId>(p));
      if (p != c) {
        fn += m.at(cls, static_cast<LabelId>(p));
        fp += m.at(static_cast<LabelId>(p), cls);
      }
    }
    std::uint64_t unlabeled = m.at(cls, kIgnoreLabel);
    gt_labeled += row + unlabeled;
    gt_covered += row;
    if (m.mode() == EvalMode::unlabeled_as_error) fn += unlabeled;

    s.present[c] = tp + fn > 0;
    if (s.present[c]) {
      s.iou[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      s.acc[c] = static_cast<double>(tp) / static_cast<double>(tp + fn);
      s.miou += s.iou[c];
      s.macc += s.acc[c];
      ++present_count;
    }
    s.evaluated += tp + fn;
  }
  if (present_count == 0) throw std::runtime_error("no evaluated points: every class is absent");
  s.miou /= static_cast<double>(present_count);
  s.macc /= static_cast<double>(present_count);
  s.coverage = gt_labeled ? static_cast<double>(gt_covered) / static_cast<double>(gt_labeled) : 0.0;
  return s;
}

inline SemanticScores semantic_scores(const Labeling& pred, const Labeling& gt,
                                      const ClassSet& classes, EvalMode mode) {
  ConfusionMatrix m(classes.size(), mode);
  m.add(pred, gt);
  return semantic_scores(m);
}

// Per-class panoptic tallies, accumulated scan by scan.
struct PanopticCounts {
  std::size_t class_count = 0;
  std::vector<std::uint64_t> tp, fp, fn;
  std::vector<double> iou_sum;

  PanopticCounts() = default;
  explicit PanopticCounts(std::size_t classes)
      : class_count(classes), tp(classes, 0), fp(classes, 0), fn(classes, 0),
        iou_sum(classes, 0.0) {
    if (classes == 0) throw std::invalid_argument("panoptic counts need classes");
  }

  void merge(const PanopticCounts& other) {
    if (other.class_count != class_count)
      throw std::invalid_argument("panoptic counts disagree on class count");
    for (std::size_t c = 0; c < class_count; ++c) {
      tp[c] += other.tp[c];
      fp[c] += other.fp[c];
      fn[c] += other.fn[c];
      iou_sum[c] += other.iou_sum[c];
    }
  }

  // Matches segments of one scan by IoU > 0.5 within each class. Points whose
  // ground truth is ignore are excluded from every segment, so a prediction
  // confined to ignored ground truth is not a false positive.
  void add_scan(const PanopticLabeling& pred, const PanopticLabeling& gt,
                const ClassSet& classes) {
    if (classes.size() != class_count)
      throw std::invalid_argument("class set does not match the counts");
    if (pred.size() != gt.size())
      throw std::invalid_argument("prediction and ground truth disagree on point count");
    if (pred.semantic.size() != pred.instance.size() || gt.semantic.size() != gt.instance.size())
      throw std::invalid_argument("malformed panoptic labeling");

    struct Segment {
      LabelId cls = 0;
      std::uint64_t size = 0;
      bool matched = false;
    };
    std::unordered_map<std::uint32_t, std::size_t> gt_ids, pred_ids;
    std::vector<Segment> gt_segs, pred_segs;
    std::vector<std::size_t> gt_of(gt.size(), SIZE_MAX), pred_of(gt.size(), SIZE_MAX);

    auto segment_of = [](LabelId cls, InstanceId inst) {
      return static_cast<std::uint32_t>(cls) << 16 | inst;
    };
    auto intern = [](std::unordered_map<std::uint32_t, std::size_t>& ids,
                     std::vector<Segment>& segs, std::uint32_t key, LabelId cls) {
      auto [it, inserted] = ids.try_emplace(key, segs.size());
      if (inserted) segs.push_back({cls, 0, false});
      segs[it->second].size += 1;
      return it->second;
    };

    for (std::size_t i = 0; i < gt.size(); ++i) {
      LabelId g = gt.semantic[i];
      if (g == kIgnoreLabel) continue;
      if (g >= class_count) throw std::out_of_range("unknown class id " + std::to_string(g));
      gt_of[i] = intern(gt_ids, gt_segs, segment_of(g, gt.instance[i]), g);
      LabelId p = pred.semantic[i];
      if (p == kIgnoreLabel) continue;
      if (p >= class_count) throw std::out_of_range("unknown class id " + std::to_string(p));
      pred_of[i] = intern(pred_ids, pred_segs, segment_of(p, pred.instance[i]), p);
    }

    std::unordered_map<std::uint64_t, std::uint64_t> overlap;
    for (std::size_t i = 0; i < gt.size(); ++i)
      if (gt_of[i] != SIZE_MAX && pred_of[i] != SIZE_MAX)
        overlap[static_cast<std::uint64_t>(gt_of[i]) << 32 | pred_of[i]] += 1;

    for (const auto& [key, inter] : overlap) {
      Segment& g = gt_segs[key >> 32];
      Segment& p = pred_segs[key & 0xffffffff];
      if (g.cls != p.cls) continue;
      double iou = static_cast<double>(inter) / static_cast<double>(g.size + p.size - inter);
      if (iou > 0.5) {
        g.matched = true;
        p.matched = true;
        tp[g.cls] += 1;
        iou_sum[g.cls] += iou;
      }
    }
    for (const Segment& g : gt_segs)
      if (!g.matched) fn[g.cls] += 1;
    for (const Segment& p : pred_segs)
      if (!p.matched) fp[p.cls] += 1;
  }
};

struct PanopticClassScore {
  LabelId id = 0;
  std::string name;
  bool thing = false;
  bool active = false;  // participates in the aggregate means
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double pq = 0.0, rq = 0.0, sq = 0.0;
};

struct PanopticScore {
  std::vector<PanopticClassScore> per_class;
  double pq = 0.0, rq = 0.0, sq = 0.0;  // means over active classes
  double pq_things = 0.0;               // mean over active thing classes
  double pq_stuff = 0.0;                // mean over active stuff classes
  double miou = 0.0;                    // semantic channel, filled by scan-level overloads
  std::size_t active_things = 0, active_stuff = 0;
};

inline PanopticScore panoptic_scores(const PanopticCounts& counts, const ClassSet& classes) {
  if (classes.size() != counts.class_count)
    throw std::invalid_argument("class set does not match the counts");
  PanopticScore score;
  score.per_class.resize(counts.class_count);
  std::size_t active = 0;
  for (std::size_t c = 0; c < counts.class_count; ++c) {
    PanopticClassScore& row = score.per_class[c];
    row.id = static_cast<LabelId>(c);
    row.name = classes.info(row.id).name;
    row.thing = classes.is_thing(row.id);
    row.tp = counts.tp[c];
    row.fp = counts.fp[c];
    row.fn = counts.fn[c];
    row.active = row.tp + row.fp + row.fn > 0;
    if (!row.active) continue;
    double denom = static_cast<double>(row.tp) + 0.5 * static_cast<double>(row.fp + row.fn);
    row.rq = static_cast<double>(row.tp) / denom;
    row.sq = row.tp > 0 ? counts.iou_sum[c] / static_cast<double>(row.tp) : 0.0;
    row.pq = row.sq * row.rq;
    ++active;
    score.pq += row.pq;
    score.rq += row.rq;
    score.sq += row.sq;
    if (row.thing) {
      score.pq_things += row.pq;
      ++score.active_things;
    } else {
      score.pq_stuff += row.pq;
      ++score.active_stuff;
    }
  }
  if (active == 0) throw std::runtime_error("no segments to evaluate");
  score.pq /= static_cast<double>(active);
  score.rq /= static_cast<double>(active);
  score.sq /= static_cast<double>(active);
  if (score.active_things) score.pq_things /= static_cast<double>(score.active_things);
  if (score.active_stuff) score.pq_stuff /= static_cast<double>(score.active_stuff);
  return score;
}

inline PanopticScore panoptic_scores(std::span<const PanopticLabeling> pred,
                                     std::span<const PanopticLabeling> gt, const ClassSet& classes,
                                     EvalMode mode = EvalMode::unlabeled_as_error) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("prediction and ground truth disagree on scan count");
  if (pred.empty()) throw std::invalid_argument("no scans to evaluate");
  PanopticCounts counts(classes.size());
  ConfusionMatrix confusion(classes.size(), mode);
  for (std::size_t s = 0; s < pred.size(); ++s) {
    counts.add_scan(pred[s], gt[s], classes);
    confusion.add(pred[s].semantic, gt[s].semantic);
  }
  PanopticScore score = panoptic_scores(counts, classes);
  score.miou = semantic_scores(confusion).miou;
  return score;
}

inline Labeling remap_superclasses(const Labeling& labeling, const ClassSet& classes) {
  Labeling out = labeling;
  for (LabelId& lab : out.labels) lab = classes.superclass_of(lab);
  return out;
}

inline PanopticLabeling remap_superclasses(const PanopticLabeling& pan, const ClassSet& classes) {
  PanopticLabeling out = pan;
  for (LabelId& lab : out.semantic) lab = classes.superclass_of(lab);
  return out;
}

inline std::string semantic_report_text(const SemanticScores& s, const ClassSet& classes) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  std::size_t width = 5;
  for (const ClassInfo& c : classes.classes()) width = std::max(width, c.name.size());
  out << std::left << std::setw(static_cast<int>(width)) << "class" << std::right
      << std::setw(7) << "IoU" << std::setw(7) << "Acc" << "\n";
  for (std::size_t c = 0; c < classes.size(); ++c) {
    out << std::left << std::setw(static_cast<int>(width))
        << classes.info(static_cast<LabelId>(c)).name << std::right;
    if (s.present[c])
      out << std::setw(7) << 100.0 * s.iou[c] << std::setw(7) << 100.0 * s.acc[c] << "\n";
    else
      out << std::setw(7) << "-" << std::setw(7) << "-" << "\n";
  }
  out << "mIoU " << 100.0 * s.miou << "  mAcc " << 100.0 * s.macc << "  coverage "
      << 100.0 * s.coverage << "\n";
  return out.str();
}

inline std::string panoptic_report_text(const PanopticScore& s) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  std::size_t width = 5;
  for (const PanopticClassScore& row : s.per_class) width = std::max(width, row.name.size());
  out << std::left << std::setw(static_cast<int>(width)) << "class" << std::right
      << std::setw(7) << "PQ" << std::setw(7) << "RQ" << std::setw(7) << "SQ"
      << std::setw(6) << "TP" << std::setw(6) << "FP" << std::setw(6) << "FN" << "\n";
  for (const PanopticClassScore& row : s.per_class) {
    out << std::left << std::setw(static_cast<int>(width)) << row.name << std::right;
    if (row.active)
      out << std::setw(7) << 100.0 * row.pq << std::setw(7) << 100.0 * row.rq << std::setw(7)
          << 100.0 * row.sq;
    else
      out << std::setw(7) << "-" << std::setw(7) << "-" << std::setw(7) << "-";
    out << std::setw(6) << row.tp << std::setw(6) << row.fp << std::setw(6) << row.fn << "\n";
  }
  out << "PQ " << 100.0 * s.pq << "  RQ " << 100.0 * s.rq << "  SQ " << 100.0 * s.sq << "  PQ-th "
      << 100.0 * s.pq_things << "  PQ-st " << 100.0 * s.pq_stuff << "  mIoU " << 100.0 * s.miou
      << "\n";
  return out.str();
}

inline nlohmann::json semantic_report_json(const SemanticScores& s, const ClassSet& classes) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    nlohmann::json row{{"id", c}, {"name", classes.info(static_cast<LabelId>(c)).name},
                       {"present", static_cast<bool>(s.present[c])}};
    if (s.present[c]) {
      row["iou"] = s.iou[c];
      row["acc"] = s.acc[c];
    }
    per_class.push_back(std::move(row));
  }
  return nlohmann::json{{"schema", "losc-semantic-metrics-v1"},
                        {"miou", s.miou},
                        {"macc", s.macc},
                        {"coverage", s.coverage},
                        {"evaluated_points", s.evaluated},
                        {"per_class", std::move(per_class)}};
}

inline nlohmann::json panoptic_report_json(const PanopticScore& s) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const PanopticClassScore& row : s.per_class) {
    nlohmann::json entry{{"id", row.id},     {"name", row.name}, {"thing", row.thing},
                         {"active", row.active}, {"tp", row.tp}, {"fp", row.fp},
                         {"fn", row.fn}};
    if (row.active) {
      entry["pq"] = row.pq;
      entry["rq"] = row.rq;
      entry["sq"] = row.sq;
    }
    per_class.push_back(std::move(entry));
  }
  return nlohmann::json{{"schema", "losc-panoptic-metrics-v1"},
                        {"pq", s.pq},
                        {"rq", s.rq},
                        {"sq", s.sq},
                        {"pq_things", s.pq_things},
                        {"pq_stuff", s.pq_stuff},
                        {"miou", s.miou},
                        {"per_class", std::move(per_class)}};
}

}  // namespace losc
