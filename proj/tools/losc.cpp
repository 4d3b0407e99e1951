#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "losc/abc.hpp"
#include "losc/combine.hpp"
#include "losc/io.hpp"
#include "losc/metrics.hpp"
#include "losc/panoptic.hpp"
#include "losc/refine.hpp"
#include "losc/synth.hpp"
#include "losc/tbc.hpp"

namespace fs = std::filesystem;

namespace {

using namespace losc;
using io::json;

// ---------------------------------------------------------------------- config

struct PipelineConfig {
  double voxel_size = 0.1;
  double depth_tolerance = 0.5;
  std::uint64_t min_points = 200000;
  double min_ratio = 1.0 / 3.0;
  int rounds = 3;
  std::uint64_t window_length = 0;  // scans per consolidation window, 0 = whole sequence
  bool weighted_vote = false;
  std::string weights_dir;  // per-scan float32 confidence files, mirrors the label layout
  std::uint64_t panoptic_k = 16;
  double panoptic_r = 1.5;
  std::uint64_t knn_k = 5;
  std::uint64_t knn_max_reference_points = 100000;
  std::uint64_t seed = 1;
  std::string eval_mode = "unlabeled-as-error";
  int workers = 1;

  void validate() const {
    if (!(voxel_size > 0) || !std::isfinite(voxel_size))
      throw std::runtime_error("config: voxel_size must be positive and finite");
    if (!(depth_tolerance >= 0) || !std::isfinite(depth_tolerance))
      throw std::runtime_error("config: depth_tolerance must be non-negative and finite");
    if (!(min_ratio >= 0 && min_ratio <= 1))
      throw std::runtime_error("config: min_ratio must lie in [0, 1]");
    if (rounds < 1) throw std::runtime_error("config: rounds must be at least 1");
    if (panoptic_k < 1) throw std::runtime_error("config: panoptic_k must be at least 1");
    if (!(panoptic_r > 0) || !std::isfinite(panoptic_r))
      throw std::runtime_error("config: panoptic_r must be positive and finite");
    if (knn_k < 1) throw std::runtime_error("config: knn_k must be at least 1");
    if (knn_max_reference_points < 1)
      throw std::runtime_error("config: knn_max_reference_points must be at least 1");
    if (workers < 1) throw std::runtime_error("config: workers must be at least 1");
    try {
      eval_mode_from_name(eval_mode);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(std::string("config: ") + e.what());
    }
    if (weighted_vote && weights_dir.empty())
      throw std::runtime_error("config: weighted_vote needs weights_dir");
    if (!weighted_vote && !weights_dir.empty())
      throw std::runtime_error("config: weights_dir is set but weighted_vote is off");
  }
};

PipelineConfig parse_config(const json& j, const std::string& origin) {
  if (!j.is_object()) throw std::runtime_error(origin + ": config must be a JSON object");
  static const std::set<std::string> known = {
      "voxel_size",  "depth_tolerance", "min_points",  "min_ratio",
      "rounds",      "window_length",   "weighted_vote", "weights_dir",
      "panoptic_k",  "panoptic_r",      "knn_k",       "knn_max_reference_points",
      "seed",        "eval_mode",       "workers"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw std::runtime_error(origin + ": unknown config key '" + key + "'");
  PipelineConfig cfg;
  try {
    cfg.voxel_size = j.value("voxel_size", cfg.voxel_size);
    cfg.depth_tolerance = j.value("depth_tolerance", cfg.depth_tolerance);
    cfg.min_points = j.value("min_points", cfg.min_points);
    cfg.min_ratio = j.value("min_ratio", cfg.min_ratio);
    cfg.rounds = j.value("rounds", cfg.rounds);
    cfg.window_length = j.value("window_length", cfg.window_length);
    cfg.weighted_vote = j.value("weighted_vote", cfg.weighted_vote);
    cfg.weights_dir = j.value("weights_dir", cfg.weights_dir);
    cfg.panoptic_k = j.value("panoptic_k", cfg.panoptic_k);
    cfg.panoptic_r = j.value("panoptic_r", cfg.panoptic_r);
    cfg.knn_k = j.value("knn_k", cfg.knn_k);
    cfg.knn_max_reference_points =
        j.value("knn_max_reference_points", cfg.knn_max_reference_points);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.eval_mode = j.value("eval_mode", cfg.eval_mode);
    cfg.workers = j.value("workers", cfg.workers);
  } catch (const json::exception& e) {
    throw std::runtime_error(origin + ": " + e.what());
  }
  return cfg;
}

// Holds CLI-bound copies of the config fields; resolve() layers them over the
// config file so an explicit flag always wins.
class ConfigOpts {
 public:
  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path_, "pipeline configuration JSON");
    opt(cmd, "--voxel-size", &PipelineConfig::voxel_size, "voxel edge length in meters");
    opt(cmd, "--depth-tolerance", &PipelineConfig::depth_tolerance,
        "z-buffer occlusion tolerance in meters");
    opt(cmd, "--min-points", &PipelineConfig::min_points,
        "minimum class size for the robust set");
    opt(cmd, "--min-ratio", &PipelineConfig::min_ratio,
        "minimum preserved fraction for the robust set");
    opt(cmd, "--rounds", &PipelineConfig::rounds, "self-training rounds");
    opt(cmd, "--window-length", &PipelineConfig::window_length,
        "scans per consolidation window (0 = whole sequence)");
    flag(cmd, "--weighted-vote,!--no-weighted-vote", &PipelineConfig::weighted_vote,
         "weight votes by per-point confidence");
    opt(cmd, "--weights", &PipelineConfig::weights_dir,
        "directory of per-scan float32 confidence files");
    opt(cmd, "--panoptic-k", &PipelineConfig::panoptic_k, "clustering neighbor count");
    opt(cmd, "--panoptic-r", &PipelineConfig::panoptic_r, "clustering radius in meters");
    opt(cmd, "--knn-k", &PipelineConfig::knn_k, "segmenter neighbor count");
    opt(cmd, "--knn-max-reference-points", &PipelineConfig::knn_max_reference_points,
        "segmenter reference budget per sequence");
    opt(cmd, "--seed", &PipelineConfig::seed, "top-level random seed");
    opt(cmd, "--eval-mode", &PipelineConfig::eval_mode,
        "unlabeled-as-error or unlabeled-excluded");
    opt(cmd, "--workers", &PipelineConfig::workers, "threads per stage");
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg;
    if (!config_path_.empty()) cfg = parse_config(io::load_json(config_path_), config_path_);
    for (const auto& apply : apply_) apply(cfg);
    cfg.validate();
    return cfg;
  }

 private:
  template <class T>
  void opt(CLI::App* cmd, const std::string& name, T PipelineConfig::*field,
           const std::string& help) {
    CLI::Option* o = cmd->add_option(name, values_.*field, help);
    apply_.push_back([this, field, o](PipelineConfig& cfg) {
      if (o->count()) cfg.*field = values_.*field;
    });
  }

  void flag(CLI::App* cmd, const std::string& name, bool PipelineConfig::*field,
            const std::string& help) {
    CLI::Option* o = cmd->add_flag(name, values_.*field, help);
    apply_.push_back([this, field, o](PipelineConfig& cfg) {
      if (o->count()) cfg.*field = values_.*field;
    });
  }

  std::string config_path_;
  PipelineConfig values_;
  std::vector<std::function<void(PipelineConfig&)>> apply_;
};

// ------------------------------------------------------------ stage artifacts

// A stage directory holds <sequence>/<scan>.label files and a meta.json that
// names the labeling's provenance, so downstream stages can refuse inputs
// from the wrong part of the pipeline.
constexpr const char* kStageSchema = "losc-labels-v1";

fs::path scan_label_path(const fs::path& dir, const std::string& seq_id,
                         const std::string& scan_id) {
  return dir / seq_id / (scan_id + ".label");
}

void write_stage_meta(const fs::path& dir, const io::Dataset& ds, const std::string& provenance,
                      bool instances) {
  json sequences = json::array();
  for (const io::DatasetSequence& seq : ds.sequences)
    sequences.push_back({{"id", seq.id}, {"scans", seq.scans.size()}});
  fs::create_directories(dir);
  io::save_json(dir / "meta.json", {{"schema", kStageSchema},
                                    {"provenance", provenance},
                                    {"instances", instances},
                                    {"sequences", std::move(sequences)}});
}

struct StageMeta {
  std::string provenance;
  Provenance kind = Provenance::vlm;
  int round = 0;
  bool instances = false;
};

StageMeta read_stage_meta(const fs::path& dir, const io::Dataset& ds) {
  fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path))
    throw std::runtime_error(dir.string() + ": not a stage directory (missing meta.json)");
  json j = io::load_json(meta_path);
  StageMeta meta;
  try {
    if (j.at("schema").get<std::string>() != kStageSchema)
      throw std::runtime_error(meta_path.string() + ": unsupported schema");
    meta.provenance = j.at("provenance").get<std::string>();
    meta.instances = j.value("instances", false);
    const json& sequences = j.at("sequences");
    if (sequences.size() != ds.sequences.size())
      throw std::runtime_error(meta_path.string() + ": labels cover " +
                               std::to_string(sequences.size()) + " sequences, manifest has " +
                               std::to_string(ds.sequences.size()));
    for (std::size_t q = 0; q < ds.sequences.size(); ++q) {
      if (sequences[q].at("id").get<std::string>() != ds.sequences[q].id ||
          sequences[q].at("scans").get<std::size_t>() != ds.sequences[q].scans.size())
        throw std::runtime_error(meta_path.string() + ": sequence layout does not match " +
                                 "the manifest (sequence " + ds.sequences[q].id + ")");
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(meta_path.string() + ": " + e.what());
  }
  try {
    meta.kind = provenance_from_name(meta.provenance, &meta.round);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(meta_path.string() + ": " + e.what());
  }
  return meta;
}

std::vector<Labeling> read_stage_sequence(const fs::path& dir, const StageMeta& meta,
                                          const io::DatasetSequence& seq, int workers) {
  std::vector<Labeling> out(seq.scans.size());
  parallel_for(seq.scans.size(), workers, [&](std::size_t s) {
    out[s] = io::read_semantic_labels(scan_label_path(dir, seq.id, seq.scans[s].id), meta.kind,
                                      meta.round);
  });
  return out;
}

void write_stage_sequence(const fs::path& dir, const io::DatasetSequence& seq,
                          std::span<const Labeling> labels) {
  fs::create_directories(dir / seq.id);
  for (std::size_t s = 0; s < seq.scans.size(); ++s)
    io::write_semantic_labels(scan_label_path(dir, seq.id, seq.scans[s].id), labels[s]);
}

struct SequencePoints {
  std::vector<PointCloud> scans;
  std::vector<Pose> poses;
};

SequencePoints load_points(const io::DatasetSequence& seq, int workers) {
  SequencePoints data;
  data.scans.resize(seq.scans.size());
  data.poses.resize(seq.scans.size());
  parallel_for(seq.scans.size(), workers, [&](std::size_t s) {
    data.scans[s] = io::read_points(seq.scans[s].points);
    data.poses[s] = seq.scans[s].pose;
  });
  return data;
}

void require_counts(const fs::path& dir, const io::DatasetSequence& seq,
                    std::span<const PointCloud> scans, std::span<const Labeling> labels) {
  for (std::size_t s = 0; s < seq.scans.size(); ++s)
    if (labels[s].labels.size() != scans[s].points.size())
      throw std::runtime_error(scan_label_path(dir, seq.id, seq.scans[s].id).string() +
                               ": holds " + std::to_string(labels[s].labels.size()) +
                               " labels for " + std::to_string(scans[s].points.size()) +
                               " points");
}

std::vector<VoteWeights> load_weights(const fs::path& dir, const io::DatasetSequence& seq,
                                      std::span<const PointCloud> scans) {
  std::vector<VoteWeights> weights(seq.scans.size());
  for (std::size_t s = 0; s < seq.scans.size(); ++s) {
    fs::path path = dir / seq.id / (seq.scans[s].id + ".f32");
    std::vector<char> bytes = io::read_file_bytes(path);
    if (bytes.size() % 4 != 0)
      throw std::runtime_error(path.string() + ": size is not a multiple of 4 bytes");
    std::size_t count = bytes.size() / 4;
    if (count != scans[s].points.size())
      throw std::runtime_error(path.string() + ": holds " + std::to_string(count) +
                               " weights for " + std::to_string(scans[s].points.size()) +
                               " points");
    weights[s].resize(count);
    std::memcpy(weights[s].data(), bytes.data(), bytes.size());
  }
  return weights;
}

double mean_coverage(std::span<const Labeling> labels) {
  std::uint64_t labeled = 0, total = 0;
  for (const Labeling& l : labels) {
    total += l.labels.size();
    for (LabelId x : l.labels)
      if (x != kIgnoreLabel) ++labeled;
  }
  return total ? static_cast<double>(labeled) / static_cast<double>(total) : 0.0;
}

std::string percent(double x) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << 100.0 * x;
  return out.str();
}

// ------------------------------------------------------------------- stages

void stage_backproject(const io::Dataset& ds, const fs::path& out, const PipelineConfig& cfg) {
  fs::path dir = out / "vlm";
  std::uint64_t scan_count = 0;
  double coverage_sum = 0.0;
  for (const io::DatasetSequence& seq : ds.sequences) {
    SequencePoints data = load_points(seq, cfg.workers);
    std::vector<Labeling> labels(seq.scans.size());
    parallel_for(seq.scans.size(), cfg.workers, [&](std::size_t s) {
      std::vector<LabelMap> maps;
      maps.reserve(seq.rig.cameras().size());
      for (const Camera& cam : seq.rig.cameras()) {
        LabelMap map = io::read_label_map(seq.scans[s].label_maps.at(cam.id).at(
            ds.primary_augmentation));
        map.camera_id = cam.id;
        map.augmentation = ds.primary_augmentation;
        maps.push_back(std::move(map));
      }
      labels[s] = backproject_labels(data.scans[s], maps, seq.rig, cfg.depth_tolerance);
    });
    write_stage_sequence(dir, seq, labels);
    coverage_sum += mean_coverage(labels) * static_cast<double>(seq.scans.size());
    scan_count += seq.scans.size();
  }
  write_stage_meta(dir, ds, "vlm", false);
  std::cout << "backproject: " << scan_count << " scans -> " << dir.string() << " (coverage "
            << percent(coverage_sum / static_cast<double>(scan_count)) << "%)\n";
}

void stage_tbc(const io::Dataset& ds, const fs::path& out, const PipelineConfig& cfg,
               const fs::path& labels_dir) {
  StageMeta meta = read_stage_meta(labels_dir, ds);
  fs::path dir = out / "tim";
  double coverage_sum = 0.0;
  std::uint64_t scan_count = 0;
  for (const io::DatasetSequence& seq : ds.sequences) {
    SequencePoints data = load_points(seq, cfg.workers);
    std::vector<Labeling> in = read_stage_sequence(labels_dir, meta, seq, cfg.workers);
    require_counts(labels_dir, seq, data.scans, in);
    std::vector<VoteWeights> weights;
    std::span<const VoteWeights> weight_span;
    if (cfg.weighted_vote) {
      weights = load_weights(cfg.weights_dir, seq, data.scans);
      weight_span = weights;
    }
    std::vector<Labeling> consolidated =
        tbc(data.scans, data.poses, in, cfg.voxel_size, ds.classes.size(), cfg.window_length,
            weight_span, Provenance::tim, cfg.workers);
    write_stage_sequence(dir, seq, consolidated);
    coverage_sum += mean_coverage(consolidated) * static_cast<double>(seq.scans.size());
    scan_count += seq.scans.size();
  }
  write_stage_meta(dir, ds, "tim", false);
  std::cout << "tbc: " << meta.provenance << " -> " << dir.string() << " (coverage "
            << percent(coverage_sum / static_cast<double>(scan_count)) << "%)\n";
}

void stage_abc(const io::Dataset& ds, const fs::path& out, const PipelineConfig& cfg) {
  fs::path abc_dir = out / "abc";
  fs::path aug_dir = out / "aug";
  double abc_cov = 0.0, aug_cov = 0.0;
  std::uint64_t scan_count = 0;
  for (const io::DatasetSequence& seq : ds.sequences) {
    SequencePoints data = load_points(seq, cfg.workers);
    auto load_map = [&](std::size_t s, std::uint32_t camera_id, const std::string& aug_id) {
      LabelMap map = io::read_label_map(seq.scans[s].label_maps.at(camera_id).at(aug_id));
      map.camera_id = camera_id;
      map.augmentation = aug_id;
      return map;
    };
    AbcResult result =
        build_l_aug(data.scans, data.poses, seq.rig, ds.augmentations, load_map, cfg.voxel_size,
                    ds.classes.size(), cfg.depth_tolerance, cfg.workers);
    write_stage_sequence(abc_dir, seq, result.l_abc);
    write_stage_sequence(aug_dir, seq, result.l_aug);
    abc_cov += mean_coverage(result.l_abc) * static_cast<double>(seq.scans.size());
    aug_cov += mean_coverage(result.l_aug) * static_cast<double>(seq.scans.size());
    scan_count += seq.scans.size();
  }
  write_stage_meta(abc_dir, ds, "abc", false);
  write_stage_meta(aug_dir, ds, "aug", false);
  std::cout << "abc: " << ds.augmentations.size() << " variants -> " << abc_dir.string()
            << " (coverage " << percent(abc_cov / static_cast<double>(scan_count)) << "%), "
            << aug_dir.string() << " (coverage "
            << percent(aug_cov / static_cast<double>(scan_count)) << "%)\n";
}

void stage_combine(const io::Dataset& ds, const fs::path& out, const PipelineConfig& cfg,
                   const fs::path& aug_dir, const fs::path& tim_dir) {
  StageMeta aug_meta = read_stage_meta(aug_dir, ds);
  if (aug_meta.provenance != "aug")
    throw std::runtime_error(aug_dir.string() + ": holds '" + aug_meta.provenance +
                             "' labels; combine needs augmentation-consolidated input "
                             "(provenance 'aug')");
  StageMeta tim_meta = read_stage_meta(tim_dir, ds);
  if (tim_meta.provenance != "tim")
    throw std::runtime_error(tim_dir.string() + ": holds '" + tim_meta.provenance +
                             "' labels; combine needs temporally consolidated input "
                             "(provenance 'tim')");

  std::vector<std::vector<Labeling>> l_aug(ds.sequences.size()), l_tim(ds.sequences.size());
  ClassCounts counts_aug, counts_tim;
  for (std::size_t q = 0; q < ds.sequences.size(); ++q) {
    const io::DatasetSequence& seq = ds.sequences[q];
    l_aug[q] = read_stage_sequence(aug_dir, aug_meta, seq, cfg.workers);
    l_tim[q] = read_stage_sequence(tim_dir, tim_meta, seq, cfg.workers);
    for (std::size_t s = 0; s < seq.scans.size(); ++s) {
      if (l_aug[q][s].labels.size() != l_tim[q][s].labels.size())
        throw std::runtime_error("scan " + seq.id + "/" + seq.scans[s].id + ": " +
                                 aug_dir.string() + " and " + tim_dir.string() +
                                 " disagree on point count");
      count_labels(l_aug[q][s].labels, ds.classes, counts_aug);
      count_labels(l_tim[q][s].labels, ds.classes, counts_tim);
    }
  }

  RobustnessReport report =
      robust_classes(counts_aug, counts_tim, cfg.min_points, cfg.min_ratio, ds.classes);
  fs::path dir = out / "atc";
  fs::create_directories(dir);
  io::write_robustness_report(dir / "robustness.json", report);
  std::cout << io::robustness_report_text(report);

  double coverage_sum = 0.0;
  std::uint64_t scan_count = 0;
  for (std::size_t q = 0; q < ds.sequences.size(); ++q) {
    std::vector<Labeling> combined = combine(l_aug[q], l_tim[q], report);
    write_stage_sequence(dir, ds.sequences[q], combined);
    coverage_sum += mean_coverage(combined) * static_cast<double>(combined.size());
    scan_count += combined.size();
  }
  write_stage_meta(dir, ds, "atc", false);
  std::cout << "combine: -> " << dir.string() << " (coverage "
            << percent(coverage_sum / static_cast<double>(scan_count)) << "%)\n";
}

void stage_iterate(const io::Dataset& ds, const fs::path& out, const PipelineConfig& cfg,
                   const fs::path& labels_dir) {
  StageMeta meta = read_stage_meta(labels_dir, ds);
  std::vector<PointCloud> scans;
  std::vector<Pose> poses;
  std::vector<std::size_t> sequence_of;
  std::vector<Labeling> initial;
  std::vector<Labeling> gt;
  bool has_gt = ds.has_gt();
  for (std::size_t q = 0; q < ds.sequences.size(); ++q) {
    const io::DatasetSequence& seq = ds.sequences[q];
    SequencePoints data = load_points(seq, cfg.workers);
    std::vector<Labeling> labels = read_stage_sequence(labels_dir, meta, seq, cfg.workers);
    require_counts(labels_dir, seq, data.scans, labels);
    for (std::size_t s = 0; s < seq.scans.size(); ++s) {
      if (has_gt) {
        gt.push_back(io::read_semantic_labels(seq.scans[s].gt, Provenance::vlm));
        if (gt.back().labels.size() != data.scans[s].points.size())
          throw std::runtime_error(seq.scans[s].gt.string() + ": holds " +
                                   std::to_string(gt.back().labels.size()) + " labels for " +
                                   std::to_string(data.scans[s].points.size()) + " points");
      }
      scans.push_back(std::move(data.scans[s]));
      poses.push_back(data.poses[s]);
      sequence_of.push_back(q);
      initial.push_back(std::move(labels[s]));
    }
  }

  EvalMode mode = eval_mode_from_name(cfg.eval_mode);
  KnnSegmenter segmenter(cfg.knn_k, cfg.knn_max_reference_points, cfg.seed);
  json rounds_json = json::array();
  auto on_round = [&](RoundRecord& record) {
    fs::path dir = out / "rounds" / ("round-" + std::to_string(record.round));
    std::size_t offset = 0;
    for (const io::DatasetSequence& seq : ds.sequences) {
      write_stage_sequence(dir, seq,
                           std::span<const Labeling>(record.labelings)
                               .subspan(offset, seq.scans.size()));
      offset += seq.scans.size();
    }
    write_stage_meta(dir, ds, provenance_name(Provenance::model, record.round), false);
    double cov = mean_coverage(record.labelings);
    json row{{"round", record.round}, {"coverage", cov}};
    std::cout << "round " << record.round << ": coverage " << percent(cov) << "%";
    if (has_gt) {
      ConfusionMatrix confusion(ds.classes.size(), mode);
      for (std::size_t s = 0; s < record.labelings.size(); ++s)
        confusion.add(record.labelings[s], gt[s]);
      SemanticScores scores = semantic_scores(confusion);
      record.scores = scores;
      row["miou"] = scores.miou;
      row["macc"] = scores.macc;
      std::cout << " mIoU " << percent(scores.miou);
    }
    std::cout << " -> " << dir.string() << "\n";
    rounds_json.push_back(std::move(row));
  };
  iterate(scans, poses, sequence_of, initial, segmenter, cfg.rounds, cfg.voxel_size,
          ds.classes.size(), cfg.workers, on_round);
  fs::create_directories(out / "reports");
  io::save_json(out / "reports" / "rounds.json",
                {{"schema", "losc-rounds-v1"}, {"rounds", std::move(rounds_json)}});
}

void stage_panoptic(const io::Dataset& ds, const fs::path& out, const PipelineConfig& cfg,
                    const fs::path& labels_dir) {
  StageMeta meta = read_stage_meta(labels_dir, ds);
  fs::path dir = out / "panoptic";
  std::uint64_t instance_total = 0;
  for (const io::DatasetSequence& seq : ds.sequences) {
    SequencePoints data = load_points(seq, cfg.workers);
    std::vector<Labeling> labels = read_stage_sequence(labels_dir, meta, seq, cfg.workers);
    require_counts(labels_dir, seq, data.scans, labels);
    std::vector<std::vector<std::uint32_t>> words(seq.scans.size());
    std::vector<std::uint64_t> instances(seq.scans.size(), 0);
    parallel_for(seq.scans.size(), cfg.workers, [&](std::size_t s) {
      PanopticLabeling pan = panoptic_labeling(data.scans[s], labels[s], ds.classes,
                                               cfg.panoptic_k, cfg.panoptic_r);
      words[s].resize(pan.size());
      for (std::size_t i = 0; i < pan.size(); ++i) {
        words[s][i] = io::pack_label_word(pan.semantic[i], pan.instance[i]);
        instances[s] = std::max<std::uint64_t>(instances[s], pan.instance[i]);
      }
    });
    fs::create_directories(dir / seq.id);
    for (std::size_t s = 0; s < seq.scans.size(); ++s) {
      io::write_label_words(scan_label_path(dir, seq.id, seq.scans[s].id), words[s]);
      instance_total += instances[s];
    }
  }
  write_stage_meta(dir, ds, meta.provenance, true);
  std::cout << "panoptic: " << instance_total << " instances -> " << dir.string() << "\n";
}

ClassSet superclass_set(const ClassSet& classes) {
  if (!classes.has_superclasses())
    throw std::runtime_error("class set defines no super-classes");
  std::vector<ClassInfo> infos;
  infos.reserve(classes.superclass_names().size());
  for (std::size_t s = 0; s < classes.superclass_names().size(); ++s)
    infos.push_back({static_cast<LabelId>(s), classes.superclass_names()[s], false});
  for (std::size_t c = 0; c < classes.size(); ++c)
    if (classes.is_thing(static_cast<LabelId>(c)))
      infos[classes.superclass_map()[c]].thing = true;
  return ClassSet(std::move(infos));
}

void stage_eval(const io::Dataset& ds, const PipelineConfig& cfg, const fs::path& pred_dir,
                const std::string& expected_provenance, bool want_panoptic, bool superclasses,
                const fs::path& report_path) {
  if (!ds.has_gt())
    throw std::runtime_error("dataset has no ground-truth labels; nothing to evaluate");
  StageMeta meta = read_stage_meta(pred_dir, ds);
  if (!expected_provenance.empty() && meta.provenance != expected_provenance)
    throw std::runtime_error(pred_dir.string() + ": holds '" + meta.provenance +
                             "' labels, expected '" + expected_provenance + "'");
  if (want_panoptic && !meta.instances)
    throw std::runtime_error(pred_dir.string() +
                             ": labels carry no instance channel; run the panoptic stage first");

  ClassSet eval_classes = superclasses ? superclass_set(ds.classes) : ds.classes;
  EvalMode mode = eval_mode_from_name(cfg.eval_mode);
  ConfusionMatrix confusion(eval_classes.size(), mode);
  PanopticCounts pan_counts(eval_classes.size());

  auto remap = [&](std::vector<LabelId>& labels) {
    if (superclasses)
      for (LabelId& x : labels) x = ds.classes.superclass_of(x);
  };

  for (const io::DatasetSequence& seq : ds.sequences) {
    for (const io::DatasetScan& scan : seq.scans) {
      std::vector<std::uint32_t> gt_words = io::read_label_words(scan.gt);
      std::vector<std::uint32_t> pred_words =
          io::read_label_words(scan_label_path(pred_dir, seq.id, scan.id));
      if (gt_words.size() != pred_words.size())
        throw std::runtime_error(scan_label_path(pred_dir, seq.id, scan.id).string() +
                                 ": holds " + std::to_string(pred_words.size()) +
                                 " labels, ground truth has " + std::to_string(gt_words.size()));
      PanopticLabeling gt, pred;
      gt.semantic.resize(gt_words.size());
      gt.instance.resize(gt_words.size());
      pred.semantic.resize(pred_words.size());
      pred.instance.resize(pred_words.size());
      for (std::size_t i = 0; i < gt_words.size(); ++i) {
        gt.semantic[i] = io::semantic_part(gt_words[i]);
        gt.instance[i] = io::instance_part(gt_words[i]);
        pred.semantic[i] = io::semantic_part(pred_words[i]);
        pred.instance[i] = io::instance_part(pred_words[i]);
      }
      remap(gt.semantic);
      remap(pred.semantic);
      confusion.add(pred.semantic, gt.semantic);
      if (want_panoptic) pan_counts.add_scan(pred, gt, eval_classes);
    }
  }

  SemanticScores semantic = semantic_scores(confusion);
  std::cout << "eval: " << meta.provenance << ", " << cfg.eval_mode
            << (superclasses ? ", super-classes" : "") << "\n";
  std::cout << semantic_report_text(semantic, eval_classes);
  json report{{"schema", "losc-eval-v1"},
              {"provenance", meta.provenance},
              {"eval_mode", cfg.eval_mode},
              {"superclasses", superclasses},
              {"semantic", semantic_report_json(semantic, eval_classes)}};
  if (want_panoptic) {
    PanopticScore pan = panoptic_scores(pan_counts, eval_classes);
    pan.miou = semantic.miou;
    std::cout << panoptic_report_text(pan);
    report["panoptic"] = panoptic_report_json(pan);
  }
  if (!report_path.empty()) {
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    io::save_json(report_path, report);
  }
}

void stage_pipeline(const io::Dataset& ds, const fs::path& out, const PipelineConfig& cfg) {
  stage_backproject(ds, out, cfg);
  stage_tbc(ds, out, cfg, out / "vlm");
  stage_abc(ds, out, cfg);
  stage_combine(ds, out, cfg, out / "aug", out / "tim");
  stage_iterate(ds, out, cfg, out / "atc");
  stage_panoptic(ds, out, cfg, out / "rounds" / ("round-" + std::to_string(cfg.rounds)));
  if (ds.has_gt())
    stage_eval(ds, cfg, out / "panoptic", "", true, false, out / "reports" / "eval.json");
  else
    std::cout << "eval: skipped (dataset has no ground truth)\n";
}

// --------------------------------------------------------------------- wiring

struct StageCli {
  std::string manifest;
  std::string out;
  std::string labels;
  std::string aug;
  std::string tim;
  ConfigOpts config;
};

struct EvalCli {
  std::string manifest;
  std::string pred;
  std::string provenance;
  std::string report;
  bool panoptic = false;
  bool superclasses = false;
  ConfigOpts config;
};

struct SynthCli {
  std::string out;
  std::uint64_t seed = 1;
  std::uint64_t sequences = 4;
  std::uint64_t scans = 0;   // 0 keeps the scene default
  std::uint64_t points = 0;  // 0 keeps the scene default
  bool clean = false;
  bool no_gt = false;
  double flip_rate = -1;
  double drop_rate = -1;
  int boundary_width = -1;
  int workers = 1;
};

void attach_stage(CLI::App* cmd, StageCli& cli, bool needs_out = true) {
  cmd->add_option("--manifest", cli.manifest, "dataset manifest JSON")->required();
  if (needs_out) cmd->add_option("--out", cli.out, "artifact output directory")->required();
  cli.config.attach(cmd);
}

void run_synth(const SynthCli& cli) {
  if (cli.clean && (cli.flip_rate >= 0 || cli.drop_rate >= 0 || cli.boundary_width >= 0))
    throw std::runtime_error("--clean excludes the noise overrides");
  synth::CorpusSpec corpus = synth::standard_corpus(cli.seed, cli.sequences, cli.clean);
  if (cli.flip_rate >= 0) corpus.noise.flip_rate = cli.flip_rate;
  if (cli.drop_rate >= 0) corpus.noise.drop_rate = cli.drop_rate;
  if (cli.boundary_width >= 0) corpus.noise.boundary_width = cli.boundary_width;
  for (synth::SceneSpec& scene : corpus.scenes) {
    if (cli.scans) scene.scan_count = cli.scans;
    if (cli.points) scene.points_per_scan = cli.points;
  }
  corpus.write_gt = !cli.no_gt;
  corpus.workers = cli.workers;
  fs::path manifest = synth::write_dataset(cli.out, corpus);
  std::cout << manifest.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lidar label consolidation pipeline"};
  app.require_subcommand(1);

  SynthCli synth_cli;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  synth_cmd->add_option("--out", synth_cli.out, "dataset directory")->required();
  synth_cmd->add_option("--seed", synth_cli.seed, "corpus seed");
  synth_cmd->add_option("--sequences", synth_cli.sequences, "sequence count");
  synth_cmd->add_option("--scans", synth_cli.scans, "scans per sequence");
  synth_cmd->add_option("--points", synth_cli.points, "points per scan");
  synth_cmd->add_flag("--clean", synth_cli.clean, "no label corruption");
  synth_cmd->add_flag("--no-gt", synth_cli.no_gt, "omit ground-truth label files");
  synth_cmd->add_option("--flip-rate", synth_cli.flip_rate, "label flip probability");
  synth_cmd->add_option("--drop-rate", synth_cli.drop_rate, "label drop probability");
  synth_cmd->add_option("--boundary-width", synth_cli.boundary_width,
                        "label bleeding radius in pixels");
  synth_cmd->add_option("--workers", synth_cli.workers, "generation threads");
  synth_cmd->callback([&] { run_synth(synth_cli); });

  StageCli backproject_cli;
  CLI::App* backproject_cmd =
      app.add_subcommand("backproject", "label points from the primary label maps");
  attach_stage(backproject_cmd, backproject_cli);
  backproject_cmd->callback([&] {
    PipelineConfig cfg = backproject_cli.config.resolve();
    stage_backproject(io::load_dataset(backproject_cli.manifest), backproject_cli.out, cfg);
  });

  StageCli tbc_cli;
  CLI::App* tbc_cmd = app.add_subcommand("tbc", "temporal voxel-vote consolidation");
  attach_stage(tbc_cmd, tbc_cli);
  tbc_cmd->add_option("--labels", tbc_cli.labels, "input stage directory (default <out>/vlm)");
  tbc_cmd->callback([&] {
    PipelineConfig cfg = tbc_cli.config.resolve();
    fs::path labels =
        tbc_cli.labels.empty() ? fs::path(tbc_cli.out) / "vlm" : fs::path(tbc_cli.labels);
    stage_tbc(io::load_dataset(tbc_cli.manifest), tbc_cli.out, cfg, labels);
  });

  StageCli abc_cli;
  CLI::App* abc_cmd = app.add_subcommand("abc", "augmentation-unanimity consolidation");
  attach_stage(abc_cmd, abc_cli);
  abc_cmd->callback([&] {
    PipelineConfig cfg = abc_cli.config.resolve();
    stage_abc(io::load_dataset(abc_cli.manifest), abc_cli.out, cfg);
  });

  StageCli combine_cli;
  CLI::App* combine_cmd = app.add_subcommand("combine", "merge consolidations (robust classes)");
  attach_stage(combine_cmd, combine_cli);
  combine_cmd->add_option("--aug", combine_cli.aug,
                          "augmentation-consolidated stage directory (default <out>/aug)");
  combine_cmd->add_option("--tim", combine_cli.tim,
                          "temporally consolidated stage directory (default <out>/tim)");
  combine_cmd->callback([&] {
    PipelineConfig cfg = combine_cli.config.resolve();
    fs::path aug =
        combine_cli.aug.empty() ? fs::path(combine_cli.out) / "aug" : fs::path(combine_cli.aug);
    fs::path tim =
        combine_cli.tim.empty() ? fs::path(combine_cli.out) / "tim" : fs::path(combine_cli.tim);
    stage_combine(io::load_dataset(combine_cli.manifest), combine_cli.out, cfg, aug, tim);
  });

  StageCli iterate_cli;
  CLI::App* iterate_cmd = app.add_subcommand("iterate", "self-training refinement rounds");
  attach_stage(iterate_cmd, iterate_cli);
  iterate_cmd->add_option("--labels", iterate_cli.labels,
                          "initial stage directory (default <out>/atc)");
  iterate_cmd->callback([&] {
    PipelineConfig cfg = iterate_cli.config.resolve();
    fs::path labels = iterate_cli.labels.empty() ? fs::path(iterate_cli.out) / "atc"
                                                 : fs::path(iterate_cli.labels);
    stage_iterate(io::load_dataset(iterate_cli.manifest), iterate_cli.out, cfg, labels);
  });

  StageCli panoptic_cli;
  CLI::App* panoptic_cmd = app.add_subcommand("panoptic", "instance clustering in bird's-eye view");
  attach_stage(panoptic_cmd, panoptic_cli);
  panoptic_cmd->add_option("--labels", panoptic_cli.labels,
                           "semantic stage directory (default <out>/rounds/round-<rounds>)");
  panoptic_cmd->callback([&] {
    PipelineConfig cfg = panoptic_cli.config.resolve();
    fs::path labels = panoptic_cli.labels.empty()
                          ? fs::path(panoptic_cli.out) / "rounds" /
                                ("round-" + std::to_string(cfg.rounds))
                          : fs::path(panoptic_cli.labels);
    stage_panoptic(io::load_dataset(panoptic_cli.manifest), panoptic_cli.out, cfg, labels);
  });

  EvalCli eval_cli;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a stage against ground truth");
  eval_cmd->add_option("--manifest", eval_cli.manifest, "dataset manifest JSON")->required();
  eval_cmd->add_option("--pred", eval_cli.pred, "prediction stage directory")->required();
  eval_cmd->add_option("--provenance", eval_cli.provenance, "required provenance tag");
  eval_cmd->add_option("--report", eval_cli.report, "write the report JSON here");
  eval_cmd->add_flag("--panoptic", eval_cli.panoptic, "score the instance channel too");
  eval_cmd->add_flag("--superclasses", eval_cli.superclasses, "score on the super-class grouping");
  eval_cli.config.attach(eval_cmd);
  eval_cmd->callback([&] {
    PipelineConfig cfg = eval_cli.config.resolve();
    stage_eval(io::load_dataset(eval_cli.manifest), cfg, eval_cli.pred, eval_cli.provenance,
               eval_cli.panoptic, eval_cli.superclasses,
               eval_cli.report.empty() ? fs::path() : fs::path(eval_cli.report));
  });

  StageCli pipeline_cli;
  CLI::App* pipeline_cmd = app.add_subcommand("pipeline", "run every stage in order");
  attach_stage(pipeline_cmd, pipeline_cli);
  pipeline_cmd->callback([&] {
    PipelineConfig cfg = pipeline_cli.config.resolve();
    stage_pipeline(io::load_dataset(pipeline_cli.manifest), pipeline_cli.out, cfg);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "losc: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
