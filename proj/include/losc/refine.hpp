#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <random>

#include "losc/io.hpp"
#include "losc/kdtree.hpp"
#include "losc/metrics.hpp"
#include "losc/tbc.hpp"

namespace losc {

// A trainable point segmenter. Implementations must return a total labeling
// from predict: every point gets a real class, never ignore.
class Segmenter {
 public:
  virtual ~Segmenter() = default;

  // World-frame scans with per-point labels; ignore-labeled points carry no
  // supervision and are skipped.
  virtual void fit(std::span<const PointCloud> world_scans, std::span<const Labeling> labelings,
                   std::span<const std::size_t> sequence_of) = 0;

  virtual Labeling predict(const PointCloud& world_scan, std::size_t sequence) const = 0;
};

struct KnnModel {
  std::size_t k = 5;
  KdTree<3> tree;
  std::vector<LabelId> labels;  // aligned with the tree's points

  std::size_t size() const { return labels.size(); }
  bool fitted() const { return !labels.empty(); }
};

// Keeps up to max_reference_points labeled points, uniformly subsampled with
// the given seed; ignore-labeled points are dropped first.
inline KnnModel knn_fit(std::span<const std::array<double, 3>> points,
                        std::span<const LabelId> labels, std::size_t k,
                        std::size_t max_reference_points, std::uint64_t seed) {
  if (points.size() != labels.size())
    throw std::invalid_argument("points and labels disagree on count");
  if (k == 0) throw std::invalid_argument("neighbor count must be at least 1");
  if (max_reference_points == 0)
    throw std::invalid_argument("reference budget must be at least 1");

  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kIgnoreLabel) labeled.push_back(i);
  if (labeled.empty()) throw std::invalid_argument("cannot fit on zero labeled points");

  if (labeled.size() > max_reference_points) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < max_reference_points; ++i) {
      std::size_t j = i + static_cast<std::size_t>(
                              rng() % static_cast<std::uint64_t>(labeled.size() - i));
      std::swap(labeled[i], labeled[j]);
    }
    labeled.resize(max_reference_points);
    std::sort(labeled.begin(), labeled.end());
  }

  KnnModel model;
  model.k = k;
  model.labels.reserve(labeled.size());
  std::vector<std::array<double, 3>> kept;
  kept.reserve(labeled.size());
  for (std::size_t i : labeled) {
    kept.push_back(points[i]);
    model.labels.push_back(labels[i]);
  }
  model.tree = KdTree<3>(std::move(kept));
  return model;
}

inline KnnModel knn_fit(std::span<const PointCloud> world_scans,
                        std::span<const Labeling> labelings, std::size_t k,
                        std::size_t max_reference_points, std::uint64_t seed) {
  if (world_scans.size() != labelings.size())
    throw std::invalid_argument("scan and labeling counts differ");
  std::vector<std::array<double, 3>> points;
  std::vector<LabelId> labels;
  for (std::size_t s = 0; s < world_scans.size(); ++s) {
    const PointCloud& scan = world_scans[s];
    if (scan.points.size() != labelings[s].labels.size())
      throw std::invalid_argument("labeling does not match its scan");
    for (std::size_t i = 0; i < scan.points.size(); ++i)
      if (labelings[s].labels[i] != kIgnoreLabel) {
        const Point& p = scan.points[i];
        points.push_back({p.x, p.y, p.z});
        labels.push_back(labelings[s].labels[i]);
      }
  }
  return knn_fit(points, labels, k, max_reference_points, seed);
}

// Majority label among the k nearest references; ties pick the lowest class
// id. The output is total by construction.
inline Labeling knn_predict(const KnnModel& model, const PointCloud& world_scan) {
  if (!model.fitted()) throw std::logic_error("predicting with an unfitted model");
  Labeling out;
  out.provenance = Provenance::model;
  out.labels.resize(world_scan.points.size());
  std::vector<Neighbor> neighbors;
  std::vector<LabelId> votes;
  for (std::size_t i = 0; i < world_scan.points.size(); ++i) {
    const Point& p = world_scan.points[i];
    model.tree.knn({static_cast<double>(p.x), static_cast<double>(p.y),
                    static_cast<double>(p.z)},
                   model.k, neighbors);
    votes.clear();
    for (const Neighbor& nb : neighbors) votes.push_back(model.labels[nb.index]);
    std::sort(votes.begin(), votes.end());
    LabelId best = votes[0];
    std::size_t best_run = 0;
    for (std::size_t a = 0; a < votes.size();) {
      std::size_t b = a;
      while (b < votes.size() && votes[b] == votes[a]) ++b;
      if (b - a > best_run) {
        best_run = b - a;
        best = votes[a];
      }
      a = b;
    }
    out.labels[i] = best;
  }
  return out;
}

// Reference segmenter: one kNN model per sequence, fitted on that sequence's
// labeled points; sequences without any labeled point fall back to a model
// over the whole corpus. The reference budget applies per model.
class KnnSegmenter : public Segmenter {
 public:
  explicit KnnSegmenter(std::size_t k = 5, std::size_t max_reference_points = 100000,
                        std::uint64_t seed = 1)
      : k_(k), max_reference_points_(max_reference_points), seed_(seed) {
    if (k == 0) throw std::invalid_argument("neighbor count must be at least 1");
    if (max_reference_points == 0)
      throw std::invalid_argument("reference budget must be at least 1");
  }

  void fit(std::span<const PointCloud> world_scans, std::span<const Labeling> labelings,
           std::span<const std::size_t> sequence_of) override {
    if (world_scans.size() != labelings.size() || world_scans.size() != sequence_of.size())
      throw std::invalid_argument("scan, labeling, and sequence counts differ");
    if (world_scans.empty()) throw std::invalid_argument("cannot fit on an empty corpus");

    std::size_t sequences = 0;
    for (std::size_t s : sequence_of) sequences = std::max(sequences, s + 1);

    struct Pool {
      std::vector<std::array<double, 3>> points;
      std::vector<LabelId> labels;
    };
    std::vector<Pool> pools(sequences);
    for (std::size_t s = 0; s < world_scans.size(); ++s) {
      const PointCloud& scan = world_scans[s];
      if (scan.points.size() != labelings[s].labels.size())
        throw std::invalid_argument("labeling does not match its scan");
      Pool& pool = pools[sequence_of[s]];
      for (std::size_t i = 0; i < scan.points.size(); ++i)
        if (labelings[s].labels[i] != kIgnoreLabel) {
          const Point& p = scan.points[i];
          pool.points.push_back({p.x, p.y, p.z});
          pool.labels.push_back(labelings[s].labels[i]);
        }
    }

    std::size_t labeled = 0;
    for (const Pool& pool : pools) labeled += pool.labels.size();
    if (labeled == 0) throw std::invalid_argument("cannot fit on zero labeled points");

    models_.assign(sequences, KnnModel{});
    bool need_global = false;
    for (std::size_t q = 0; q < sequences; ++q) {
      if (pools[q].labels.empty()) {
        need_global = true;
        continue;
      }
      models_[q] =
          knn_fit(pools[q].points, pools[q].labels, k_, max_reference_points_,
                  mix64(seed_ ^ (q + 1)));
    }
    global_ = KnnModel{};
    if (need_global) {
      Pool all;
      for (Pool& pool : pools) {
        all.points.insert(all.points.end(), pool.points.begin(), pool.points.end());
        all.labels.insert(all.labels.end(), pool.labels.begin(), pool.labels.end());
      }
      global_ = knn_fit(all.points, all.labels, k_, max_reference_points_, mix64(seed_));
    }
  }

  Labeling predict(const PointCloud& world_scan, std::size_t sequence) const override {
    const KnnModel* model = nullptr;
    if (sequence < models_.size() && models_[sequence].fitted()) model = &models_[sequence];
    else if (global_.fitted()) model = &global_;
    if (!model) throw std::logic_error("segmenter has no model for this sequence");
    return knn_predict(*model, world_scan);
  }

  const KnnModel& model(std::size_t sequence) const { return models_.at(sequence); }

 private:
  std::size_t k_;
  std::size_t max_reference_points_;
  std::uint64_t seed_;
  std::vector<KnnModel> models_;
  KnnModel global_;
};

struct RoundRecord {
  int round = 0;                                   // 1-based, consecutive
  std::vector<Labeling> labelings;                 // one per scan, total
  std::vector<std::filesystem::path> label_paths;  // filled by the emitting caller
  std::optional<SemanticScores> scores;            // filled when ground truth is at hand
};

// Refinement loop: round 1 fits on the initial labeling; every later round
// fits on the temporal consolidation of the previous round's predictions.
// Scans are given in the sensor frame with their poses; sequence_of assigns
// each scan to the sequence whose world frame its pose targets.
inline std::vector<RoundRecord> iterate(
    std::span<const PointCloud> scans, std::span<const Pose> poses,
    std::span<const std::size_t> sequence_of, std::span<const Labeling> initial,
    Segmenter& segmenter, int rounds, double voxel_size, std::size_t class_count,
    int workers = 1, const std::function<void(RoundRecord&)>& on_round = {}) {
  if (rounds < 1) throw std::invalid_argument("refinement needs at least one round");
  if (scans.empty()) throw std::invalid_argument("cannot refine an empty corpus");
  if (scans.size() != poses.size() || scans.size() != sequence_of.size() ||
      scans.size() != initial.size())
    throw std::invalid_argument("scan, pose, sequence, and labeling counts differ");

  std::size_t labeled = 0;
  for (const Labeling& l : initial)
    for (LabelId lab : l.labels)
      if (lab != kIgnoreLabel) ++labeled;
  if (labeled == 0) throw std::invalid_argument("initial labeling has no labeled points");

  std::vector<PointCloud> world(scans.size());
  parallel_for(scans.size(), workers,
               [&](std::size_t s) { world[s] = transform_to_world(scans[s], poses[s]); });

  std::vector<std::size_t> sequences;
  for (std::size_t s : sequence_of) sequences.push_back(s);
  std::sort(sequences.begin(), sequences.end());
  sequences.erase(std::unique(sequences.begin(), sequences.end()), sequences.end());

  std::vector<RoundRecord> records;
  std::vector<Labeling> train(initial.begin(), initial.end());
  for (int n = 1; n <= rounds; ++n) {
    if (n > 1) {
      const std::vector<Labeling>& prev = records.back().labelings;
      for (std::size_t seq : sequences) {
        std::vector<std::size_t> indices;
        for (std::size_t s = 0; s < scans.size(); ++s)
          if (sequence_of[s] == seq) indices.push_back(s);
        std::vector<PointCloud> seq_scans;
        std::vector<Pose> seq_poses;
        std::vector<Labeling> seq_labels;
        for (std::size_t s : indices) {
          seq_scans.push_back(scans[s]);
          seq_poses.push_back(poses[s]);
          seq_labels.push_back(prev[s]);
        }
        std::vector<Labeling> consolidated = tbc(seq_scans, seq_poses, seq_labels, voxel_size,
                                                 class_count, 0, {}, Provenance::tim, workers);
        for (std::size_t i = 0; i < indices.size(); ++i)
          train[indices[i]] = std::move(consolidated[i]);
      }
    }
    segmenter.fit(world, train, sequence_of);

    RoundRecord record;
    record.round = n;
    record.labelings.resize(scans.size());
    parallel_for(scans.size(), workers, [&](std::size_t s) {
      Labeling pred = segmenter.predict(world[s], sequence_of[s]);
      if (pred.labels.size() != scans[s].points.size())
        throw std::logic_error("segmenter returned the wrong number of labels");
      for (LabelId lab : pred.labels)
        if (lab == kIgnoreLabel) throw std::logic_error("segmenter prediction is not total");
      pred.provenance = Provenance::model;
      pred.round = n;
      record.labelings[s] = std::move(pred);
    });
    if (on_round) on_round(record);
    records.push_back(std::move(record));
  }
  return records;
}

// Loads external per-scan predictions for one round; predictions must be
// total and sized to their scans.
inline std::vector<Labeling> import_predictions(std::span<const std::filesystem::path> files,
                                                std::span<const std::size_t> expected_counts,
                                                int round) {
  if (files.size() != expected_counts.size())
    throw std::invalid_argument("file and scan counts differ");
  std::vector<Labeling> out;
  out.reserve(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    Labeling l = io::read_semantic_labels(files[i], Provenance::model, round);
    if (l.labels.size() != expected_counts[i])
      throw std::runtime_error(files[i].string() + ": expected " +
                               std::to_string(expected_counts[i]) + " labels, got " +
                               std::to_string(l.labels.size()));
    for (LabelId lab : l.labels)
      if (lab == kIgnoreLabel)
        throw std::runtime_error(files[i].string() + ": prediction contains ignore labels");
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace losc
