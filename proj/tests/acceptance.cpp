#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "helpers.hpp"
#include "losc/abc.hpp"
#include "losc/combine.hpp"
#include "losc/core.hpp"
#include "losc/io.hpp"
#include "losc/metrics.hpp"
#include "losc/panoptic.hpp"
#include "losc/projection.hpp"
#include "losc/refine.hpp"
#include "losc/synth.hpp"
#include "losc/tbc.hpp"

using namespace losc;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

std::string fmt(double v, int precision = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Symmetric label noise: switch to one of the other classes, all equally likely.
LabelId flip_uniform(LabelId truth, std::size_t class_count, std::mt19937_64& rng) {
  LabelId other = static_cast<LabelId>(rng() % (class_count - 1));
  return other < truth ? other : static_cast<LabelId>(other + 1);
}

std::size_t covered_points(const Labeling& l) {
  std::size_t n = 0;
  for (LabelId v : l.labels) n += v != kIgnoreLabel;
  return n;
}

int run_shell(const std::string& cmd) {
  int rc = std::system(cmd.c_str());
  if (rc == -1) throw Failure("failed to launch: " + cmd);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : 128;
}

// 1. On a noise-free corpus the whole chain is lossless: back-projection
// reproduces the ground truth on every point, and voting, augmentation
// consensus, and the robust combination all leave it untouched.
std::string zero_noise_round_trip() {
  auto t0 = Clock::now();
  synth::CorpusSpec corpus = synth::standard_corpus(1, 4, true);
  const ClassSet& classes = corpus.scenes.front().classes;
  const std::size_t class_count = classes.size();
  std::size_t total_points = 0;

  for (const synth::SceneSpec& spec : corpus.scenes) {
    synth::GeneratedSequence g = synth::generate(spec);
    const std::size_t scan_count = g.scans.size();
    const std::size_t camera_count = spec.rig.cameras().size();

    std::vector<Labeling> vlm(scan_count);
    for (std::size_t s = 0; s < scan_count; ++s) {
      for (LabelId l : g.semantic[s])
        check(l != kIgnoreLabel, "ground truth unexpectedly contains ignore labels");
      vlm[s] = backproject_labels(g.scans[s], g.gt_maps[s], spec.rig, 0.5);
      check(vlm[s].labels == g.semantic[s], "back-projected labels differ from ground truth");
      total_points += g.semantic[s].size();
    }

    std::vector<Labeling> tim = tbc(g.scans, g.poses, vlm, 0.1, class_count);
    for (std::size_t s = 0; s < scan_count; ++s)
      check(tim[s].labels == g.semantic[s], "temporal voting altered clean labels");

    synth::NoiseModel zero;
    std::vector<std::vector<std::vector<LabelMap>>> maps(scan_count);
    for (std::size_t s = 0; s < scan_count; ++s) {
      maps[s].resize(camera_count);
      for (std::size_t c = 0; c < camera_count; ++c)
        maps[s][c] = synth::corrupt(g.gt_maps[s][c], zero, 0, corpus.augmentations, class_count);
    }
    auto load_map = [&](std::size_t s, std::uint32_t camera_id, const std::string& aug_id) {
      std::size_t cam_index = SIZE_MAX, aug_index = SIZE_MAX;
      for (std::size_t c = 0; c < camera_count; ++c)
        if (spec.rig.cameras()[c].id == camera_id) cam_index = c;
      for (std::size_t a = 0; a < corpus.augmentations.size(); ++a)
        if (corpus.augmentations[a].id == aug_id) aug_index = a;
      check(cam_index != SIZE_MAX && aug_index != SIZE_MAX,
            "loader asked for an unknown camera or augmentation");
      return maps[s][cam_index][aug_index];
    };
    AbcResult abc = build_l_aug(g.scans, g.poses, spec.rig, corpus.augmentations, load_map, 0.1,
                                class_count, 0.5);
    for (std::size_t s = 0; s < scan_count; ++s) {
      check(abc.l_abc[s].labels == g.semantic[s], "augmentation consensus altered clean labels");
      check(abc.l_aug[s].labels == g.semantic[s], "consolidated consensus altered clean labels");
    }

    RobustnessReport report =
        robust_classes(class_counts(abc.l_aug, classes), class_counts(tim, classes), 200000,
                       1.0 / 3.0, classes);
    std::vector<Labeling> atc = combine(abc.l_aug, tim, report);
    for (std::size_t s = 0; s < scan_count; ++s)
      check(atc[s].labels == g.semantic[s], "robust combination altered clean labels");
  }

  double dt = elapsed(t0);
  check(dt < 60.0, "round trip took " + fmt(dt, 1) + " s, limit 60");
  return "every stage through the combination reproduced ground truth on " +
         std::to_string(total_points) + " points in " + fmt(dt, 1) + " s";
}

// 2. Majority voting must denoise symmetric 0.3 label noise at 16 classes to
// the level a pre-computed Monte-Carlo oracle predicts for 12 independent
// votes per voxel: 0.99953 (1e7 trials; 10 votes give 0.99829, 15 give
// 0.99994). Pinned floor: oracle minus 0.01, averaged over 5 seeds.
std::string denoising_floor() {
  const std::size_t class_count = 16;
  const std::size_t votes = 12;
  const double oracle = 0.99953;
  const double tolerance = 0.01;
  const double flip = 0.3;

  PointCloud cell_grid;
  for (int i = 0; i < 141; ++i)
    for (int j = 0; j < 141; ++j)
      cell_grid.points.push_back({0.05f + 0.35f * i, 0.05f + 0.35f * j, 0.05f, 0.0f});
  const std::size_t n = cell_grid.points.size();

  std::unordered_set<std::uint64_t> cells;
  for (const Point& p : cell_grid.points) cells.insert(pack_voxel_key(voxel_key(p, 0.1)));
  check(cells.size() == n, "grid points must occupy one voxel each");

  std::vector<PointCloud> scans(votes, cell_grid);
  for (std::size_t s = 0; s < votes; ++s) scans[s].scan_id = static_cast<std::uint32_t>(s);
  std::vector<Pose> poses(votes);  // identity: co-registered revisits of the same cells

  double mean = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(mix64(0xACC0 + seed));
    std::vector<LabelId> truth(n);
    for (LabelId& t : truth) t = static_cast<LabelId>(rng() % class_count);
    std::vector<Labeling> noisy(votes);
    for (std::size_t s = 0; s < votes; ++s) {
      noisy[s].labels.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        noisy[s].labels[i] = unit(rng) < flip ? flip_uniform(truth[i], class_count, rng) : truth[i];
    }
    std::vector<Labeling> voted = tbc(scans, poses, noisy, 0.1, class_count);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += voted[0].labels[i] == truth[i];
    mean += static_cast<double>(correct) / static_cast<double>(n);
  }
  mean /= 5.0;
  check(mean >= oracle - tolerance,
        "mean voted accuracy " + fmt(mean, 5) + " fell under the floor " + fmt(oracle - tolerance, 5));
  return "mean voted accuracy " + fmt(mean, 5) + " over 5 seeds of " + std::to_string(n) +
         " voxels with 12 votes each (oracle 0.99953, floor " + fmt(oracle - tolerance, 5) + ")";
}

// 3. Voting is a projection: a second pass over its own output changes
// nothing, and the output never assigns two labels to one voxel. The voxel
// membership check re-derives each point's cell with the voting pass's own
// world transform and floor arithmetic.
std::string voting_fixed_point() {
  std::vector<synth::SceneSpec> specs;
  {
    synth::SceneSpec a = synth::default_scene(11);
    a.scan_count = 10;
    a.points_per_scan = 4000;
    specs.push_back(a);
  }
  {
    synth::SceneSpec b = synth::default_scene(12);
    b.scan_count = 8;
    b.points_per_scan = 5000;
    specs.push_back(b);
  }
  {
    synth::SceneSpec c = synth::crossing_scene(13);
    c.scan_count = 10;
    c.points_per_scan = 3000;
    specs.push_back(c);
  }

  std::mt19937_64 rng(mix64(33));
  std::size_t total_points = 0, total_voxels = 0;
  for (const synth::SceneSpec& spec : specs) {
    synth::GeneratedSequence g = synth::generate(spec);
    const std::size_t class_count = spec.classes.size();

    std::vector<Labeling> noisy(g.scans.size());
    for (std::size_t s = 0; s < g.scans.size(); ++s) {
      noisy[s].labels.resize(g.semantic[s].size());
      for (std::size_t i = 0; i < noisy[s].labels.size(); ++i) {
        double u = unit(rng);
        if (u < 0.2)
          noisy[s].labels[i] = kIgnoreLabel;
        else if (u < 0.5)
          noisy[s].labels[i] = flip_uniform(g.semantic[s][i], class_count, rng);
        else
          noisy[s].labels[i] = g.semantic[s][i];
      }
    }

    std::vector<Labeling> once = tbc(g.scans, g.poses, noisy, 0.1, class_count);
    std::vector<Labeling> twice = tbc(g.scans, g.poses, once, 0.1, class_count);
    for (std::size_t s = 0; s < g.scans.size(); ++s)
      check(twice[s].labels == once[s].labels, "a second voting pass changed labels");

    std::unordered_map<std::uint64_t, LabelId> cell_label;
    for (std::size_t s = 0; s < g.scans.size(); ++s) {
      const double* r = g.poses[s].rotation.m;
      const Vec3& t = g.poses[s].translation;
      for (std::size_t i = 0; i < g.scans[s].points.size(); ++i) {
        const Point& p = g.scans[s].points[i];
        double x = r[0] * p.x + r[1] * p.y + r[2] * p.z + t.x;
        double y = r[3] * p.x + r[4] * p.y + r[5] * p.z + t.y;
        double z = r[6] * p.x + r[7] * p.y + r[8] * p.z + t.z;
        std::uint64_t key = pack_voxel_key(voxel_key(x, y, z, 0.1));
        auto [it, inserted] = cell_label.try_emplace(key, once[s].labels[i]);
        if (!inserted)
          check(it->second == once[s].labels[i], "two points in one voxel carry different labels");
      }
      total_points += g.scans[s].points.size();
    }
    total_voxels += cell_label.size();
  }
  return std::to_string(total_points) +
         " points over three corpora: repeating the vote is a bit-exact fixed point; all " +
         std::to_string(total_voxels) + " occupied voxels are single-labeled";
}

// 4. Augmentation consensus trades coverage for precision: it can never label
// more points than any single variant (set inclusion, checked hard), and on
// noisy inputs the surviving labels are cleaner than the primary variant's in
// at least 16 of 20 seeds (one-sided sign test, p = 0.0059 under a fair coin).
std::string consensus_trade() {
  const synth::NoiseModel noise = synth::standard_noise();
  const std::vector<AugmentationDescriptor> augs = synth::standard_augmentations();

  int wins = 0;
  double lift_sum = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    synth::SceneSpec spec = synth::default_scene(4000 + seed);
    spec.scan_count = 8;
    spec.points_per_scan = 4000;
    synth::GeneratedSequence g = synth::generate(spec);
    const std::size_t class_count = spec.classes.size();
    const std::size_t camera_count = spec.rig.cameras().size();

    std::vector<std::vector<std::vector<LabelMap>>> maps(g.scans.size());
    for (std::size_t s = 0; s < g.scans.size(); ++s) {
      maps[s].resize(camera_count);
      for (std::size_t c = 0; c < camera_count; ++c)
        maps[s][c] = synth::corrupt(
            g.gt_maps[s][c], noise,
            mix64((static_cast<std::uint64_t>(seed) << 32) ^ (s << 8) ^ c), augs, class_count);
    }
    auto load_map = [&](std::size_t s, std::uint32_t camera_id, const std::string& aug_id) {
      std::size_t cam_index = SIZE_MAX, aug_index = SIZE_MAX;
      for (std::size_t c = 0; c < camera_count; ++c)
        if (spec.rig.cameras()[c].id == camera_id) cam_index = c;
      for (std::size_t a = 0; a < augs.size(); ++a)
        if (augs[a].id == aug_id) aug_index = a;
      check(cam_index != SIZE_MAX && aug_index != SIZE_MAX,
            "loader asked for an unknown camera or augmentation");
      return maps[s][cam_index][aug_index];
    };
    AbcResult abc =
        build_l_aug(g.scans, g.poses, spec.rig, augs, load_map, 0.1, class_count, 0.5);

    std::vector<std::vector<Labeling>> variant(augs.size(),
                                               std::vector<Labeling>(g.scans.size()));
    for (std::size_t a = 0; a < augs.size(); ++a)
      for (std::size_t s = 0; s < g.scans.size(); ++s) {
        std::vector<LabelMap> dealigned;
        for (std::size_t c = 0; c < camera_count; ++c)
          dealigned.push_back(dealign(maps[s][c][a], augs[a]));
        variant[a][s] = backproject_labels(g.scans[s], dealigned, spec.rig, 0.5);
      }

    for (std::size_t s = 0; s < g.scans.size(); ++s)
      for (std::size_t a = 0; a < augs.size(); ++a)
        check(covered_points(abc.l_abc[s]) <= covered_points(variant[a][s]),
              "consensus coverage exceeded a single variant's coverage");

    auto precision = [&](const std::vector<Labeling>& labelings) {
      std::size_t correct = 0, covered = 0;
      for (std::size_t s = 0; s < labelings.size(); ++s)
        for (std::size_t i = 0; i < labelings[s].labels.size(); ++i)
          if (labelings[s].labels[i] != kIgnoreLabel) {
            ++covered;
            correct += labelings[s].labels[i] == g.semantic[s][i];
          }
      check(covered > 0, "labeling kept no points at all");
      return static_cast<double>(correct) / static_cast<double>(covered);
    };
    double consensus = precision(abc.l_abc);
    double single = precision(variant[0]);
    lift_sum += consensus - single;
    wins += consensus > single;
  }
  check(wins >= 16, "precision improved in only " + std::to_string(wins) +
                        "/20 seeds; 16 needed for p < 0.01");
  return "coverage never exceeded any single variant (160 scans x 3 variants); precision rose in " +
         std::to_string(wins) + "/20 seeds, mean lift " + fmt(lift_sum / 20, 4);
}

// 5. The combination keeps the consensus label exactly when it belongs to a
// robust class and falls back to the temporal label otherwise; the robust set
// honors both thresholds as ">=", including exactly at the boundary.
std::string selector_truth_table() {
  std::vector<ClassInfo> infos;
  for (LabelId c = 0; c < 8; ++c)
    infos.push_back({c, "class-" + std::to_string(c), c % 2 == 0});
  ClassSet classes(infos);

  std::mt19937_64 rng(mix64(5150));
  ClassCounts aug_counts, tim_counts;
  aug_counts.per_class.resize(classes.size());
  tim_counts.per_class.resize(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    aug_counts.per_class[c] = rng() % 4000;
    tim_counts.per_class[c] = rng() % 4000;
  }
  RobustnessReport report = robust_classes(aug_counts, tim_counts, 1000, 1.0 / 3.0, classes);
  bool any_robust = false, any_fragile = false;
  for (const ClassRobustness& row : report.rows) (row.robust ? any_robust : any_fragile) = true;
  check(any_robust && any_fragile, "random report exercises only one branch");

  const std::size_t n = 1'000'000;
  Labeling consensus, temporal;
  consensus.labels.resize(n);
  temporal.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t a = rng() % 9, t = rng() % 9;
    consensus.labels[i] = a == 8 ? kIgnoreLabel : static_cast<LabelId>(a);
    temporal.labels[i] = t == 8 ? kIgnoreLabel : static_cast<LabelId>(t);
  }
  Labeling combined = combine(consensus, temporal, report);
  for (std::size_t i = 0; i < n; ++i) {
    LabelId a = consensus.labels[i];
    LabelId expected =
        a != kIgnoreLabel && report.rows[a].robust ? a : temporal.labels[i];
    if (combined.labels[i] != expected)
      throw Failure("combination diverged from the selector oracle at point " +
                    std::to_string(i));
  }

  ClassSet solo(std::vector<ClassInfo>{{0, "solo", false}});
  auto row_of = [&](std::uint64_t n_aug, std::uint64_t n_tim, std::uint64_t min_points,
                    double min_ratio) {
    ClassCounts a, t;
    a.per_class = {n_aug};
    t.per_class = {n_tim};
    return robust_classes(a, t, min_points, min_ratio, solo).rows[0];
  };
  // 200000/600000 and 1/3 both round the real number 1/3 to the same double,
  // so this row sits exactly on both thresholds.
  ClassRobustness third = row_of(200000, 600000, 200000, 1.0 / 3.0);
  check(third.robust && third.ratio == 1.0 / 3.0,
        "a row exactly at both thresholds must be robust");
  ClassRobustness quarter = row_of(250000, 1000000, 200000, 0.25);
  check(quarter.robust && quarter.ratio == 0.25,
        "a row exactly at a dyadic ratio threshold must be robust");
  check(row_of(200000, 200000, 200000, 1.0 / 3.0).robust,
        "size exactly at the floor must be robust");
  check(!row_of(199999, 199999, 200000, 1.0 / 3.0).robust,
        "one point under the size floor must not be robust");
  check(row_of(333334, 1000000, 200000, 1.0 / 3.0).robust,
        "ratio one step over the floor must be robust");
  check(!row_of(333333, 1000000, 200000, 1.0 / 3.0).robust,
        "ratio one step under the floor must not be robust");
  ClassRobustness no_temporal = row_of(200000, 0, 200000, 1.0 / 3.0);
  check(no_temporal.robust && std::isinf(no_temporal.ratio),
        "a class the temporal labeling never saw counts as fully preserved");
  check(!row_of(0, 0, 200000, 1.0 / 3.0).robust, "an empty class must not be robust");
  check(!row_of(0, 5, 200000, 1.0 / 3.0).robust,
        "a class the consensus dropped entirely must not be robust");

  return "10^6 random points match the keep-if-robust-else-temporal oracle; all 9 threshold "
         "edges honor >=";
}

// 6. The robustness audit reproduces its reference rows: 24.0M kept of 27.5M
// is ratio 0.87 and stays robust at floors (200k, 1/3); 0.4M kept of 2.1M is
// ratio 0.20 and gets dropped. The text table carries the audit columns.
std::string audit_reference_ratios() {
  ClassSet pair_set(std::vector<ClassInfo>{{0, "car", true}, {1, "barrier", false}});
  ClassCounts aug_counts, tim_counts;
  aug_counts.per_class = {24'000'000, 400'000};
  tim_counts.per_class = {27'500'000, 2'100'000};
  RobustnessReport report =
      robust_classes(aug_counts, tim_counts, 200000, 1.0 / 3.0, pair_set);

  const ClassRobustness& car = report.rows[0];
  check(car.ratio == 24000000.0 / 27500000.0, "car ratio is not the exact quotient of its counts");
  check(std::abs(car.ratio - 0.87) <= 0.01,
        "car ratio " + fmt(car.ratio, 4) + " outside 0.87 +- 0.01");
  check(car.robust, "car must stay robust at floors (200000, 1/3)");

  const ClassRobustness& barrier = report.rows[1];
  check(barrier.ratio == 400000.0 / 2100000.0,
        "barrier ratio is not the exact quotient of its counts");
  check(std::abs(barrier.ratio - 0.20) <= 0.01,
        "barrier ratio " + fmt(barrier.ratio, 4) + " outside 0.20 +- 0.01");
  check(!barrier.robust, "barrier must be dropped at floors (200000, 1/3)");

  std::string text = io::robustness_report_text(report);
  for (const char* token : {"n_aug", "n_tim", "ratio", "car", "barrier"})
    check(text.find(token) != std::string::npos,
          std::string("audit table lacks the token '") + token + "'");
  return "24.0M/27.5M -> ratio " + fmt(car.ratio, 3) + ", kept; 0.4M/2.1M -> ratio " +
         fmt(barrier.ratio, 3) + ", dropped (floors 200k and 1/3)";
}

// 7. Refinement makes the labeling total from round 1 on, keeps it total in
// every later round, and is bit-for-bit deterministic across two identical
// runs.
std::string refinement_totality() {
  std::vector<PointCloud> scans;
  std::vector<Pose> poses;
  std::vector<std::size_t> sequence_of;
  std::vector<Labeling> initial;
  std::size_t class_count = 0;
  std::mt19937_64 rng(mix64(77));

  for (std::size_t q = 0; q < 2; ++q) {
    synth::SceneSpec spec = synth::default_scene(70 + q);
    spec.scan_count = 8;
    spec.points_per_scan = 4000;
    synth::GeneratedSequence g = synth::generate(spec);
    class_count = spec.classes.size();
    for (std::size_t s = 0; s < g.scans.size(); ++s) {
      Labeling partial;
      partial.provenance = Provenance::atc;
      partial.labels.resize(g.semantic[s].size());
      for (std::size_t i = 0; i < partial.labels.size(); ++i) {
        double u = unit(rng);
        if (u < 0.3)
          partial.labels[i] = kIgnoreLabel;
        else if (u < 0.45)
          partial.labels[i] = flip_uniform(g.semantic[s][i], class_count, rng);
        else
          partial.labels[i] = g.semantic[s][i];
      }
      scans.push_back(std::move(g.scans[s]));
      poses.push_back(g.poses[s]);
      sequence_of.push_back(q);
      initial.push_back(std::move(partial));
    }
  }

  auto run = [&]() {
    KnnSegmenter segmenter(5, 50000, 9);
    return iterate(scans, poses, sequence_of, initial, segmenter, 3, 0.1, class_count);
  };
  std::vector<RoundRecord> first = run();
  std::vector<RoundRecord> second = run();
  check(first.size() == 3 && second.size() == 3, "expected exactly three rounds");

  std::size_t total_points = 0;
  for (std::size_t r = 0; r < first.size(); ++r) {
    check(first[r].round == static_cast<int>(r) + 1, "rounds are not numbered consecutively");
    check(first[r].labelings.size() == scans.size(), "a round is missing scans");
    for (std::size_t s = 0; s < scans.size(); ++s) {
      const Labeling& lab = first[r].labelings[s];
      check(lab.labels.size() == scans[s].points.size(), "a round labeling has the wrong size");
      check(coverage(lab) == 1.0,
            "round " + std::to_string(r + 1) + " left unlabeled points in scan " +
                std::to_string(s));
      check(lab.labels == second[r].labelings[s].labels,
            "two identical runs diverged in round " + std::to_string(r + 1));
      if (r == 0) total_points += lab.labels.size();
    }
  }
  return "3 rounds over " + std::to_string(total_points) +
         " points in 2 sequences: coverage exactly 1.0 from round 1 on, both runs bit-identical";
}

// 8. Panoptic tallies equal an exhaustive matcher that intersects every
// same-class segment pair and matches at IoU > 0.5 (uniqueness asserted), and
// the scores obey pq == sq * rq == iou_sum / (tp + (fp + fn) / 2). A 6-of-10
// overlap scores SQ 0.6, RQ 1.0, PQ 0.6 exactly.
std::string panoptic_counting_oracle() {
  ClassSet classes(std::vector<ClassInfo>{
      {0, "box", true}, {1, "pole", true}, {2, "ground", false}, {3, "wall", false}});
  std::mt19937_64 rng(mix64(8888));
  PanopticCounts counts(classes.size());
  std::vector<std::uint64_t> want_tp(classes.size(), 0), want_fp(classes.size(), 0),
      want_fn(classes.size(), 0);
  std::vector<double> want_iou(classes.size(), 0.0);

  for (int scene = 0; scene < 1000; ++scene) {
    std::size_t n = 20 + rng() % 281;
    PanopticLabeling gt, pred;
    gt.semantic.resize(n);
    gt.instance.resize(n);
    pred.semantic.resize(n);
    pred.instance.resize(n);
    auto random_pair = [&](LabelId& sem, InstanceId& inst) {
      std::uint64_t v = rng() % 10;
      if (v == 9) {
        sem = kIgnoreLabel;
        inst = 0;
        return;
      }
      sem = static_cast<LabelId>(v % classes.size());
      inst = classes.is_thing(sem) ? static_cast<InstanceId>(1 + rng() % 3) : 0;
    };
    for (std::size_t i = 0; i < n; ++i) {
      random_pair(gt.semantic[i], gt.instance[i]);
      if (rng() % 10 < 7) {
        pred.semantic[i] = gt.semantic[i];
        pred.instance[i] = gt.instance[i];
      } else {
        random_pair(pred.semantic[i], pred.instance[i]);
      }
    }

    using SegmentKey = std::pair<LabelId, InstanceId>;
    std::map<SegmentKey, std::vector<std::size_t>> gt_segments, pred_segments;
    for (std::size_t i = 0; i < n; ++i) {
      if (gt.semantic[i] == kIgnoreLabel) continue;  // void ground truth leaves both sides
      gt_segments[{gt.semantic[i], gt.instance[i]}].push_back(i);
      if (pred.semantic[i] != kIgnoreLabel)
        pred_segments[{pred.semantic[i], pred.instance[i]}].push_back(i);
    }
    std::map<SegmentKey, int> gt_matched, pred_matched;
    for (const auto& gseg : gt_segments)
      for (const auto& pseg : pred_segments) {
        if (gseg.first.first != pseg.first.first) continue;
        std::vector<std::size_t> shared;
        std::set_intersection(gseg.second.begin(), gseg.second.end(), pseg.second.begin(),
                              pseg.second.end(), std::back_inserter(shared));
        double iou = static_cast<double>(shared.size()) /
                     static_cast<double>(gseg.second.size() + pseg.second.size() - shared.size());
        if (iou > 0.5) {
          ++gt_matched[gseg.first];
          ++pred_matched[pseg.first];
          ++want_tp[gseg.first.first];
          want_iou[gseg.first.first] += iou;
        }
      }
    for (const auto& m : gt_matched)
      check(m.second <= 1, "a ground-truth segment matched more than one prediction");
    for (const auto& m : pred_matched)
      check(m.second <= 1, "a predicted segment matched more than one ground truth");
    for (const auto& gseg : gt_segments)
      if (!gt_matched.count(gseg.first)) ++want_fn[gseg.first.first];
    for (const auto& pseg : pred_segments)
      if (!pred_matched.count(pseg.first)) ++want_fp[pseg.first.first];

    counts.add_scan(pred, gt, classes);
  }

  for (std::size_t c = 0; c < classes.size(); ++c) {
    check(counts.tp[c] == want_tp[c] && counts.fp[c] == want_fp[c] && counts.fn[c] == want_fn[c],
          "segment tallies diverge from the exhaustive matcher for class " + std::to_string(c));
    check(std::abs(counts.iou_sum[c] - want_iou[c]) <= 1e-9,
          "summed IoU diverges from the exhaustive matcher for class " + std::to_string(c));
  }

  PanopticScore score = panoptic_scores(counts, classes);
  for (const PanopticClassScore& row : score.per_class) {
    if (!row.active) continue;
    check(row.pq == row.sq * row.rq, "pq != sq * rq for class " + row.name);
    double direct = counts.iou_sum[row.id] /
                    (static_cast<double>(row.tp) + 0.5 * static_cast<double>(row.fp + row.fn));
    check(std::abs(row.pq - direct) <= 1e-12,
          "pq differs from iou / (tp + (fp + fn) / 2) for class " + row.name);
  }

  PanopticLabeling hand_gt, hand_pred;
  hand_gt.semantic.assign(10, 0);
  hand_gt.instance.assign(10, 1);
  hand_pred.semantic.assign(10, 0);
  hand_pred.instance.assign(10, 1);
  for (std::size_t i = 6; i < 10; ++i) {
    hand_pred.semantic[i] = kIgnoreLabel;
    hand_pred.instance[i] = 0;
  }
  PanopticCounts hand(classes.size());
  hand.add_scan(hand_pred, hand_gt, classes);
  PanopticScore hand_score = panoptic_scores(hand, classes);
  const PanopticClassScore& box = hand_score.per_class[0];
  check(box.sq == 0.6 && box.rq == 1.0 && box.pq == 0.6,
        "a lone 6-of-10 overlap must score SQ 0.6, RQ 1.0, PQ 0.6 exactly, got SQ " +
            fmt(box.sq, 12) + " RQ " + fmt(box.rq, 12) + " PQ " + fmt(box.pq, 12));
  return "1000 scenes: tp/fp/fn equal the exhaustive matcher, pq == sq * rq == "
         "iou/(tp+(fp+fn)/2); the 6-of-10 overlap scores PQ 0.6 exactly";
}

// 9. Instance clustering equals an O(n^2) oracle that takes each point's k
// nearest same-class neighbors (ties by index), keeps those within the radius,
// and numbers the connected components from 1 by lowest member. Quarter-turn
// rotations and dyadic translations keep every squared distance bit-identical,
// so the instance ids must not move either.
std::string clustering_oracle() {
  ClassSet classes(std::vector<ClassInfo>{
      {0, "crate", true}, {1, "post", true}, {2, "ground", false}, {3, "wall", false}});
  const std::size_t k = 16;
  const double radius = 1.5;
  const double r2 = radius * radius;
  std::mt19937_64 rng(mix64(9090));

  auto random_scene = [&](std::vector<std::array<double, 2>>& pts, std::vector<LabelId>& sem) {
    std::size_t n = 50 + rng() % 1951;
    pts.resize(n);
    sem.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      pts[i] = {static_cast<double>(rng() % 30721) * 0x1.0p-10,
                static_cast<double>(rng() % 30721) * 0x1.0p-10};
      std::uint64_t v = rng() % 5;
      sem[i] = v == 4 ? kIgnoreLabel : static_cast<LabelId>(v);
    }
  };

  auto oracle = [&](const std::vector<std::array<double, 2>>& pts,
                    const std::vector<LabelId>& sem) {
    const std::size_t n = pts.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
      while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
      }
      return x;
    };

    struct Candidate {
      double d2;
      std::size_t local;
    };
    std::vector<Candidate> candidates;
    for (LabelId c = 0; c < classes.size(); ++c) {
      if (!classes.is_thing(c)) continue;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < n; ++i)
        if (sem[i] == c) idx.push_back(i);
      for (std::size_t a = 0; a < idx.size(); ++a) {
        candidates.clear();
        for (std::size_t b = 0; b < idx.size(); ++b) {
          if (b == a) continue;
          double dx = pts[idx[a]][0] - pts[idx[b]][0];
          double dy = pts[idx[a]][1] - pts[idx[b]][1];
          candidates.push_back({dx * dx + dy * dy, b});
        }
        std::sort(candidates.begin(), candidates.end(),
                  [](const Candidate& x, const Candidate& y) {
                    return x.d2 != y.d2 ? x.d2 < y.d2 : x.local < y.local;
                  });
        for (std::size_t j = 0; j < candidates.size() && j < k; ++j)
          if (candidates[j].d2 <= r2) parent[find(idx[a])] = find(idx[candidates[j].local]);
      }
    }

    std::vector<std::size_t> first_member(n, SIZE_MAX);
    std::vector<std::size_t> roots;
    for (std::size_t i = 0; i < n; ++i) {
      if (sem[i] == kIgnoreLabel || !classes.is_thing(sem[i])) continue;
      std::size_t root = find(i);
      if (first_member[root] == SIZE_MAX) {
        first_member[root] = i;
        roots.push_back(root);
      }
    }
    std::sort(roots.begin(), roots.end(),
              [&](std::size_t a, std::size_t b) { return first_member[a] < first_member[b]; });
    std::vector<InstanceId> instance(n, 0);
    std::unordered_map<std::size_t, InstanceId> rank;
    for (std::size_t i = 0; i < roots.size(); ++i)
      rank[roots[i]] = static_cast<InstanceId>(i + 1);
    for (std::size_t i = 0; i < n; ++i)
      if (sem[i] != kIgnoreLabel && classes.is_thing(sem[i])) instance[i] = rank[find(i)];
    return instance;
  };

  std::size_t checked = 0;
  for (int scene = 0; scene < 200; ++scene) {
    std::vector<std::array<double, 2>> pts;
    std::vector<LabelId> sem;
    random_scene(pts, sem);
    std::vector<InstanceId> got = cluster(pts, sem, classes, k, radius);
    check(got == oracle(pts, sem), "clustering diverged from the exhaustive oracle");
    checked += pts.size();
  }

  for (int scene = 0; scene < 50; ++scene) {
    std::vector<std::array<double, 2>> pts;
    std::vector<LabelId> sem;
    random_scene(pts, sem);
    std::vector<InstanceId> base = cluster(pts, sem, classes, k, radius);
    std::uint64_t quarter_turns = rng() % 4;
    double tx = (static_cast<double>(rng() % 204801) - 102400.0) * 0x1.0p-10;
    double ty = (static_cast<double>(rng() % 204801) - 102400.0) * 0x1.0p-10;
    std::vector<std::array<double, 2>> moved(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double x = pts[i][0], y = pts[i][1];
      for (std::uint64_t t = 0; t < quarter_turns; ++t) {
        double rotated = -y;
        y = x;
        x = rotated;
      }
      moved[i] = {x + tx, y + ty};
    }
    check(cluster(moved, sem, classes, k, radius) == base,
          "a rigid motion changed the instance partition");
  }
  return std::to_string(checked) +
         " points over 200 scenes match the O(n^2) oracle exactly; 50 quarter-turn plus "
         "dyadic-shift motions left every instance id unchanged";
}

// 10. Throughput floors at the full corpus size: in-process vote accumulation
// at 5M points/s single-threaded, and the end-to-end binary under 60 s
// single-threaded and under 20 s with 8 workers on the 4x40x20k corpus.
std::string performance_floor() {
  synth::CorpusSpec corpus = synth::standard_corpus(42, 4, true);
  const std::size_t class_count = corpus.scenes.front().classes.size();

  struct Sequence {
    std::vector<PointCloud> scans;
    std::vector<Pose> poses;
    std::vector<Labeling> labels;
  };
  std::vector<Sequence> sequences;
  std::size_t total_points = 0;
  for (const synth::SceneSpec& spec : corpus.scenes) {
    synth::GeneratedSequence g = synth::generate(spec);
    Sequence seq;
    seq.scans = std::move(g.scans);
    seq.poses = std::move(g.poses);
    seq.labels.resize(seq.scans.size());
    for (std::size_t s = 0; s < seq.scans.size(); ++s) {
      seq.labels[s].labels = std::move(g.semantic[s]);
      total_points += seq.labels[s].labels.size();
    }
    sequences.push_back(std::move(seq));
  }

  double best_rate = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    auto t0 = Clock::now();
    std::size_t voxels = 0;
    for (const Sequence& seq : sequences) {
      VoxelVoteTable table = accumulate(seq.scans, seq.poses, seq.labels, 0.1, class_count);
      voxels += table.voxel_count();
    }
    double dt = elapsed(t0);
    check(voxels > 0, "accumulation produced no voxels");
    best_rate = std::max(best_rate, static_cast<double>(total_points) / dt);
  }
  check(best_rate >= 5e6,
        "accumulation rate " + fmt(best_rate / 1e6, 2) + "M points/s is under the 5M floor");
  sequences.clear();

  testutil::TempDir tmp("losc-acceptance");
  const std::string cli = LOSC_CLI_PATH;
  fs::path data = tmp.path() / "data";
  check(run_shell(cli + " synth --out " + data.string() + " --seed 42 > " +
                  (tmp.path() / "synth.log").string() + " 2>&1") == 0,
        "corpus synthesis failed");
  fs::path manifest = data / "manifest.json";
  check(fs::exists(manifest), "synthesis did not write " + manifest.string());

  auto timed_pipeline = [&](const std::string& out_name, int workers) {
    auto t0 = Clock::now();
    int rc = run_shell(cli + " pipeline --manifest " + manifest.string() + " --out " +
                       (tmp.path() / out_name).string() + " --workers " +
                       std::to_string(workers) + " > " + (tmp.path() / (out_name + ".log")).string() +
                       " 2>&1");
    check(rc == 0, "pipeline run with " + std::to_string(workers) + " workers exited " +
                       std::to_string(rc));
    return elapsed(t0);
  };
  double single = timed_pipeline("single", 1);
  check(single < 60.0, "single-threaded pipeline took " + fmt(single, 1) + " s, limit 60");
  double eight = timed_pipeline("eight", 8);
  check(eight < 20.0, "8-worker pipeline took " + fmt(eight, 1) + " s, limit 20");

  return "vote accumulation " + fmt(best_rate / 1e6, 1) + "M points/s (floor 5M); 4x40x20k "
         "pipeline " + fmt(single, 1) + " s single-threaded (limit 60) and " + fmt(eight, 1) +
         " s with 8 workers (limit 20)";
}

struct Criterion {
  const char* name;
  std::string (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"zero-noise round trip", zero_noise_round_trip},
      {"voxel-vote denoising floor", denoising_floor},
      {"repeated-voting fixed point and voxel consistency", voting_fixed_point},
      {"augmentation-consensus coverage/precision trade", consensus_trade},
      {"robust-class selector truth table", selector_truth_table},
      {"robustness audit reference ratios", audit_reference_ratios},
      {"refinement totality and determinism", refinement_totality},
      {"panoptic counting oracle", panoptic_counting_oracle},
      {"clustering oracle and rigid-motion invariance", clustering_oracle},
      {"throughput and wall-clock floor", performance_floor},
  };

  int failures = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    std::string detail;
    bool pass = false;
    try {
      detail = criteria[i].run();
      pass = true;
    } catch (const std::exception& e) {
      detail = e.what();
    }
    failures += !pass;
    std::printf("%2zu %s %s: %s\n", i + 1, pass ? "PASS" : "FAIL", criteria[i].name,
                detail.c_str());
    std::fflush(stdout);
  }
  if (failures)
    std::printf("%d of 10 acceptance criteria FAILED\n", failures);
  else
    std::printf("all 10 acceptance criteria passed\n");
  return failures == 0 ? 0 : 1;
}
