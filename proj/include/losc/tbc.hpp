#pragma once

#include <span>

#include "losc/core.hpp"
#include "losc/threading.hpp"

namespace losc {

// Open-addressing map from packed voxel keys to dense slot indices assigned in
// insertion order. Key 0 is the empty sentinel (pack_voxel_key never emits 0).
class VoxelHashMap {
 public:
  explicit VoxelHashMap(std::size_t expected = 0) {
    std::size_t cap = 64;
    while (cap < expected * 2) cap <<= 1;
    table_.assign(cap, 0);
    table_slot_.assign(cap, 0);
    mask_ = cap - 1;
  }

  std::uint32_t find_or_insert(std::uint64_t key) {
    if (slot_keys_.size() * 2 >= table_.size()) grow();
    std::size_t pos = mix64(key) & mask_;
    while (true) {
      std::uint64_t k = table_[pos];
      if (k == key) return table_slot_[pos];
      if (k == 0) {
        std::uint32_t slot = static_cast<std::uint32_t>(slot_keys_.size());
        table_[pos] = key;
        table_slot_[pos] = slot;
        slot_keys_.push_back(key);
        return slot;
      }
      pos = (pos + 1) & mask_;
    }
  }

  std::int64_t find(std::uint64_t key) const {
    std::size_t pos = mix64(key) & mask_;
    while (true) {
      std::uint64_t k = table_[pos];
      if (k == key) return table_slot_[pos];
      if (k == 0) return -1;
      pos = (pos + 1) & mask_;
    }
  }

  std::size_t size() const { return slot_keys_.size(); }
  const std::vector<std::uint64_t>& slot_keys() const { return slot_keys_; }

 private:
  void grow() {
    std::size_t cap = table_.size() * 2;
    std::vector<std::uint64_t> old_keys = std::move(table_);
    std::vector<std::uint32_t> old_slots = std::move(table_slot_);
    table_.assign(cap, 0);
    table_slot_.assign(cap, 0);
    mask_ = cap - 1;
    for (std::size_t i = 0; i < old_keys.size(); ++i) {
      if (old_keys[i] == 0) continue;
      std::size_t pos = mix64(old_keys[i]) & mask_;
      while (table_[pos] != 0) pos = (pos + 1) & mask_;
      table_[pos] = old_keys[i];
      table_slot_[pos] = old_slots[i];
    }
  }

  std::vector<std::uint64_t> table_;
  std::vector<std::uint32_t> table_slot_;
  std::vector<std::uint64_t> slot_keys_;
  std::size_t mask_ = 0;
};

// Sparse voxel -> vote-vector table. Row layout is C real classes followed by
// the ignore slot; votes are counts, or confidence sums in weighted mode
// (ignore votes always weigh 1 — no confidence exists for ignore).
class VoxelVoteTable {
 public:
  VoxelVoteTable(double voxel_size, std::size_t class_count, std::size_t expected_voxels = 0)
      : map_(expected_voxels), voxel_size_(voxel_size), class_count_(class_count) {
    if (!(voxel_size > 0.0) || !std::isfinite(voxel_size))
      throw std::invalid_argument("voxel size must be positive and finite");
    if (class_count == 0) throw std::invalid_argument("vote table needs at least one class");
  }

  void add_vote(std::uint64_t packed_key, LabelId label, double weight = 1.0) {
    std::size_t row = slot_of(packed_key) * stride();
    if (label == kIgnoreLabel) {
      votes_[row + class_count_] += 1.0;
    } else if (label < class_count_) {
      votes_[row + label] += weight;
    } else {
      throw std::out_of_range("label " + std::to_string(label) + " is not in the class set");
    }
  }

  void merge(const VoxelVoteTable& other) {
    if (other.class_count_ != class_count_ || other.voxel_size_ != voxel_size_)
      throw std::invalid_argument("cannot merge vote tables with different layouts");
    const std::vector<std::uint64_t>& keys = other.map_.slot_keys();
    for (std::size_t s = 0; s < keys.size(); ++s) {
      std::size_t dst = slot_of(keys[s]) * stride();
      std::size_t src = s * stride();
      for (std::size_t c = 0; c < stride(); ++c) votes_[dst + c] += other.votes_[src + c];
    }
  }

  double voxel_size() const { return voxel_size_; }
  std::size_t class_count() const { return class_count_; }
  std::size_t voxel_count() const { return map_.size(); }
  std::size_t stride() const { return class_count_ + 1; }
  const VoxelHashMap& keys() const { return map_; }

  std::span<const double> votes_of_slot(std::size_t slot) const {
    return {votes_.data() + slot * stride(), stride()};
  }

  std::span<const double> votes_of_key(std::uint64_t packed_key) const {
    std::int64_t slot = map_.find(packed_key);
    if (slot < 0) throw std::out_of_range("voxel key not present in vote table");
    return votes_of_slot(static_cast<std::size_t>(slot));
  }

 private:
  std::size_t slot_of(std::uint64_t packed_key) {
    std::uint32_t slot = map_.find_or_insert(packed_key);
    if (static_cast<std::size_t>(slot) * stride() == votes_.size())
      votes_.resize(votes_.size() + stride(), 0.0);
    return slot;
  }

  VoxelHashMap map_;
  std::vector<double> votes_;
  double voxel_size_;
  std::size_t class_count_;
};

using VoteWeights = std::vector<float>;  // per point, in [0, 1]

namespace detail {

inline void check_sequence_inputs(std::span<const PointCloud> scans, std::span<const Pose> poses,
                                  std::span<const Labeling> labelings,
                                  std::span<const VoteWeights> weights) {
  if (scans.size() != poses.size() || scans.size() != labelings.size())
    throw std::invalid_argument("scan, pose and labeling counts differ");
  if (!weights.empty() && weights.size() != scans.size())
    throw std::invalid_argument("weights provided for a different number of scans");
  for (std::size_t s = 0; s < scans.size(); ++s) {
    poses[s].validate();
    if (labelings[s].labels.size() != scans[s].points.size())
      throw std::invalid_argument("labeling length does not match point count in scan " +
                                  std::to_string(s));
    if (!weights.empty()) {
      if (weights[s].size() != scans[s].points.size())
        throw std::invalid_argument("weight length does not match point count in scan " +
                                    std::to_string(s));
      for (float w : weights[s])
        if (!(w >= 0.0f && w <= 1.0f))
          throw std::invalid_argument("vote weights must lie in [0, 1]");
    }
  }
}

inline void accumulate_scan(const PointCloud& scan, const Pose& pose, const Labeling& labeling,
                            const VoteWeights* weights, double voxel_size, VoxelVoteTable& table) {
  const double* r = pose.rotation.m;
  const Vec3& t = pose.translation;
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const Point& p = scan.points[i];
    double x = r[0] * p.x + r[1] * p.y + r[2] * p.z + t.x;
    double y = r[3] * p.x + r[4] * p.y + r[5] * p.z + t.y;
    double z = r[6] * p.x + r[7] * p.y + r[8] * p.z + t.z;
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
      throw std::invalid_argument("non-finite world coordinate during accumulation");
    VoxelKey key{static_cast<std::int32_t>(std::floor(x / voxel_size)),
                 static_cast<std::int32_t>(std::floor(y / voxel_size)),
                 static_cast<std::int32_t>(std::floor(z / voxel_size))};
    table.add_vote(pack_voxel_key(key), labeling.labels[i], weights ? (*weights)[i] : 1.0);
  }
}

}  // namespace detail

inline VoxelVoteTable accumulate(std::span<const PointCloud> scans, std::span<const Pose> poses,
                                 std::span<const Labeling> labelings, double voxel_size,
                                 std::size_t class_count,
                                 std::span<const VoteWeights> weights = {}, int workers = 1) {
  detail::check_sequence_inputs(scans, poses, labelings, weights);
  std::size_t total_points = 0;
  for (const PointCloud& s : scans) total_points += s.points.size();

  if (workers <= 1 || scans.size() <= 1) {
    VoxelVoteTable table(voxel_size, class_count, total_points / 8);
    for (std::size_t s = 0; s < scans.size(); ++s)
      detail::accumulate_scan(scans[s], poses[s], labelings[s],
                              weights.empty() ? nullptr : &weights[s], voxel_size, table);
    return table;
  }

  // Thread-local chunk tables, merged in chunk order for determinism.
  std::size_t chunk_count = std::min<std::size_t>(workers, scans.size());
  std::vector<VoxelVoteTable> chunks;
  chunks.reserve(chunk_count);
  for (std::size_t c = 0; c < chunk_count; ++c)
    chunks.emplace_back(voxel_size, class_count, total_points / (4 * chunk_count));
  parallel_chunks(scans.size(), static_cast<int>(chunk_count),
                  [&](std::size_t chunk, std::size_t begin, std::size_t end) {
                    for (std::size_t s = begin; s < end; ++s)
                      detail::accumulate_scan(scans[s], poses[s], labelings[s],
                                              weights.empty() ? nullptr : &weights[s], voxel_size,
                                              chunks[chunk]);
                  });
  VoxelVoteTable table = std::move(chunks.front());
  for (std::size_t c = 1; c < chunk_count; ++c) table.merge(chunks[c]);
  return table;
}

struct VotedVoxels {
  double voxel_size = 0;
  VoxelHashMap keys;
  std::vector<LabelId> labels;  // per dense slot

  LabelId label_of(std::uint64_t packed_key) const {
    std::int64_t slot = keys.find(packed_key);
    if (slot < 0)
      throw std::runtime_error("voxel key missing from vote result (accumulate/reassign mismatch)");
    return labels[static_cast<std::size_t>(slot)];
  }
};

// Majority label per voxel. A real class beats ignore on equal votes; real
// ties go to the lowest class id. Voxels with no positive vote map to ignore.
inline VotedVoxels vote(const VoxelVoteTable& table) {
  VotedVoxels out;
  out.voxel_size = table.voxel_size();
  out.keys = table.keys();
  out.labels.resize(table.voxel_count());
  for (std::size_t slot = 0; slot < table.voxel_count(); ++slot) {
    std::span<const double> row = table.votes_of_slot(slot);
    double best = 0.0;
    LabelId winner = kIgnoreLabel;
    for (std::size_t c = 0; c < table.class_count(); ++c)
      if (row[c] > best) {
        best = row[c];
        winner = static_cast<LabelId>(c);
      }
    if (row[table.class_count()] > best) winner = kIgnoreLabel;
    out.labels[slot] = winner;
  }
  return out;
}

inline std::vector<Labeling> reassign(std::span<const PointCloud> scans,
                                      std::span<const Pose> poses, const VotedVoxels& voted,
                                      double voxel_size, Provenance provenance = Provenance::tim,
                                      int workers = 1) {
  if (scans.size() != poses.size())
    throw std::invalid_argument("scan and pose counts differ");
  if (voted.voxel_size != voxel_size)
    throw std::invalid_argument("vote result was built with a different voxel size");
  std::vector<Labeling> out(scans.size());
  parallel_for(scans.size(), workers, [&](std::size_t s) {
    poses[s].validate();
    out[s].provenance = provenance;
    out[s].labels.resize(scans[s].points.size());
    const double* r = poses[s].rotation.m;
    const Vec3& t = poses[s].translation;
    for (std::size_t i = 0; i < scans[s].points.size(); ++i) {
      const Point& p = scans[s].points[i];
      double x = r[0] * p.x + r[1] * p.y + r[2] * p.z + t.x;
      double y = r[3] * p.x + r[4] * p.y + r[5] * p.z + t.y;
      double z = r[6] * p.x + r[7] * p.y + r[8] * p.z + t.z;
      VoxelKey key{static_cast<std::int32_t>(std::floor(x / voxel_size)),
                   static_cast<std::int32_t>(std::floor(y / voxel_size)),
                   static_cast<std::int32_t>(std::floor(z / voxel_size))};
      out[s].labels[i] = voted.label_of(pack_voxel_key(key));
    }
  });
  return out;
}

// Full consolidation pass: accumulate -> vote -> reassign, independently per
// contiguous window of window_length scans (0 = whole sequence).
inline std::vector<Labeling> tbc(std::span<const PointCloud> scans, std::span<const Pose> poses,
                                 std::span<const Labeling> labelings, double voxel_size,
                                 std::size_t class_count, std::size_t window_length = 0,
                                 std::span<const VoteWeights> weights = {},
                                 Provenance provenance = Provenance::tim, int workers = 1) {
  detail::check_sequence_inputs(scans, poses, labelings, weights);
  std::size_t n = scans.size();
  if (n == 0) return {};
  std::size_t window = window_length == 0 ? n : window_length;
  std::vector<Labeling> out;
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += window) {
    std::size_t end = std::min(begin + window, n);
    VoxelVoteTable table =
        accumulate(scans.subspan(begin, end - begin), poses.subspan(begin, end - begin),
                   labelings.subspan(begin, end - begin), voxel_size, class_count,
                   weights.empty() ? std::span<const VoteWeights>{}
                                   : weights.subspan(begin, end - begin),
                   workers);
    VotedVoxels voted = vote(table);
    std::vector<Labeling> window_out =
        reassign(scans.subspan(begin, end - begin), poses.subspan(begin, end - begin), voted,
                 voxel_size, provenance, workers);
    for (Labeling& l : window_out) out.push_back(std::move(l));
  }
  return out;
}

}  // namespace losc
