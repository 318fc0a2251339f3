#include "kpfeat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>

#include "kpfeat/detector.hpp"
#include "kpfeat/io.hpp"
#include "kpfeat/neighborhood.hpp"
#include "kpfeat/registration.hpp"

namespace kpfeat {

namespace {

// Fragments reused across pairs stay cached; the cap bounds memory on large
// manifests.
constexpr std::size_t kCacheSize = 8;

struct Fragment {
  PointCloud cloud;
  FeatureMap features;
  ScoreMap scores;
  std::unique_ptr<NeighborhoodIndex> index;
};

class FragmentCache {
 public:
  FragmentCache(const DatasetConfig& config, const KpConvModel& model)
      : config_(config), model_(model) {}

  std::shared_ptr<const Fragment> get(const std::filesystem::path& path, std::string& stage) {
    const std::string key = path.lexically_normal().string();
    for (const auto& [k, f] : entries_) {
      if (k == key) return f;
    }
    auto frag = std::make_shared<Fragment>();
    stage = "load " + path.filename().string();
    const PointCloud raw = read_ply(path);
    require_non_empty(raw, "fragment");
    frag->cloud = voxel_downsample(raw, config_.voxel_size);
    stage = "describe " + path.filename().string();
    frag->features = network_forward(model_, frag->cloud);
    stage = "detect " + path.filename().string();
    frag->index = std::make_unique<NeighborhoodIndex>(frag->cloud.view());
    const double radius = config_.detection_radius > 0.0 ? config_.detection_radius : model_.radius(0);
    frag->scores = score_responses(frag->features.responses,
                                   radius_neighbors(*frag->index, frag->cloud, radius));
    entries_.emplace_back(key, frag);
    if (entries_.size() > kCacheSize) entries_.pop_front();
    return frag;
  }

 private:
  const DatasetConfig& config_;
  const KpConvModel& model_;
  std::deque<std::pair<std::string, std::shared_ptr<const Fragment>>> entries_;
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

KeypointSet random_keypoints(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(k);
  KeypointSet out;
  out.indices = std::move(all);
  out.scores.assign(k, 0.0);
  return out;
}

KeypointSet keypoints_for(const Fragment& f, SamplingMode mode, std::size_t k, std::uint64_t seed) {
  k = std::min(k, f.cloud.size());
  if (mode == SamplingMode::kPred) return select_keypoints(f.scores, k);
  return random_keypoints(f.cloud.size(), k, seed);
}

// Ω*: every B point whose ground-truth image has an A point within τ1.
std::vector<std::pair<Vec3, Vec3>> ground_truth_correspondences(const Fragment& a, const Fragment& b,
                                                                const RigidTransform& t_gt,
                                                                double tau1) {
  std::vector<std::pair<Vec3, Vec3>> out;
  for (const auto& q : b.cloud.points()) {
    const auto nn = a.index->nearest(t_gt.apply(q));
    if (nn.distance < tau1) out.emplace_back(a.cloud[nn.index], q);
  }
  return out;
}

PairOutcome failed_outcome(const PairSpec& spec, bool in_eval) {
  PairOutcome o;
  o.eval.pair_id = spec.pair_id();
  o.eval.scene = spec.scene;
  o.eval.in_evaluation_set = in_eval;
  o.eval.rmse = std::numeric_limits<double>::infinity();
  o.eval.rte = std::numeric_limits<double>::infinity();
  o.eval.rre = 180.0;
  o.failed = true;
  return o;
}

double mean_over(const std::vector<double>& values, const std::vector<bool>& mask) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i]) {
      sum += values[i];
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

void summarize(SweepRow& row, const DatasetConfig& config, const std::vector<bool>& mask) {
  std::vector<PairEvaluation> evals;
  std::vector<PoseError> errors;
  std::vector<double> ratios, matches;
  std::size_t registered = 0;
  for (const auto& p : row.pairs) {
    evals.push_back(p.eval);
    ratios.push_back(p.eval.inlier_ratio);
    matches.push_back(static_cast<double>(p.matches));
    if (!p.eval.in_evaluation_set) continue;
    errors.push_back({p.eval.rte, p.eval.rre});
    if (p.eval.rmse < config.rmse_threshold) ++registered;
  }
  row.fmr = feature_matching_recall(evals, config.tau2, Aggregation::kScene);
  row.fmr_pair_level = feature_matching_recall(evals, config.tau2, Aggregation::kPair).recall;
  row.registration_recall = static_cast<double>(registered) / static_cast<double>(errors.size());
  row.success_rate = success_rate(errors, config.rte_max, config.rre_max);
  row.mean_inlier_ratio = mean_over(ratios, mask);
  row.mean_matches = mean_over(matches, mask);
}

}  // namespace

const char* mode_name(SamplingMode mode) { return mode == SamplingMode::kRand ? "rand" : "pred"; }

SamplingMode parse_mode(const std::string& name) {
  if (name == "rand") return SamplingMode::kRand;
  if (name == "pred") return SamplingMode::kPred;
  throw std::invalid_argument("unknown sampling mode '" + name + "' (expected rand or pred)");
}

BenchmarkReport run_pipeline(const DatasetConfig& config, const PairManifest& manifest,
                             const KpConvModel& model, const PipelineOptions& options) {
  config.validate();
  model.validate();
  if (manifest.pairs.empty()) throw std::invalid_argument("manifest lists no pairs");
  if (options.modes.empty()) throw std::invalid_argument("no sampling mode requested");

  BenchmarkReport report;
  report.profile = config.profile;
  for (const auto& spec : manifest.pairs) {
    report.pair_ids.push_back(spec.pair_id());
    report.scenes.push_back(spec.scene);
    report.in_evaluation_set.push_back(spec.overlap > config.min_overlap);
  }
  if (std::none_of(report.in_evaluation_set.begin(), report.in_evaluation_set.end(),
                   [](bool b) { return b; })) {
    throw std::invalid_argument("no pair exceeds the minimum overlap");
  }
  for (SamplingMode mode : options.modes) {
    for (std::size_t n : config.keypoint_counts) {
      SweepRow row;
      row.mode = mode;
      row.keypoints = n;
      report.sweep.push_back(std::move(row));
    }
    if (options.repeatability) {
      for (std::size_t k : config.repeatability_counts) {
        RepeatabilityRow row;
        row.mode = mode;
        row.keypoints = k;
        report.repeatability.push_back(std::move(row));
      }
    }
  }

  FragmentCache cache(config, model);
  for (std::size_t i = 0; i < manifest.pairs.size(); ++i) {
    const PairSpec& spec = manifest.pairs[i];
    const bool in_eval = report.in_evaluation_set[i];
    const std::uint64_t pair_key = fnv1a(spec.pair_id());
    std::vector<PairOutcome> outcomes;
    std::vector<double> repeat;
    std::string stage = "setup";
    try {
      const auto a = cache.get(spec.path_a, stage);
      const auto b = cache.get(spec.path_b, stage);
      stage = "ground truth";
      const auto omega = ground_truth_correspondences(*a, *b, spec.t_gt, config.tau1);
      if (omega.empty()) throw std::runtime_error("no ground-truth correspondences within tau1");

      for (const auto& row : report.sweep) {
        const auto mode_id = static_cast<std::uint64_t>(row.mode);
        stage = std::string("keypoints ") + mode_name(row.mode);
        const KeypointSet ka = keypoints_for(*a, row.mode, row.keypoints,
                                             derive_seed(config.seed, {pair_key, mode_id, row.keypoints, 0}));
        const KeypointSet kb = keypoints_for(*b, row.mode, row.keypoints,
                                             derive_seed(config.seed, {pair_key, mode_id, row.keypoints, 1}));
        PairOutcome o;
        o.eval.pair_id = spec.pair_id();
        o.eval.scene = spec.scene;
        o.eval.in_evaluation_set = in_eval;
        o.keypoints = std::min(ka.size(), kb.size());

        stage = "match";
        const auto matches = mutual_nn_matches(a->features, b->features, ka.indices, kb.indices);
        o.matches = matches.size();
        o.eval.inlier_ratio = inlier_ratio(matches, a->cloud, b->cloud, spec.t_gt, config.tau1).value;
        o.eval.matched = o.eval.inlier_ratio > config.tau2;

        stage = "register";
        RigidTransform estimate;
        if (matches.size() >= config.ransac_sample_size) {
          RansacOptions ro;
          ro.max_iterations = config.ransac_iterations;
          ro.inlier_threshold = config.ransac_threshold;
          ro.sample_size = config.ransac_sample_size;
          ro.seed = derive_seed(config.seed, {pair_key, mode_id, row.keypoints, 2});
          const auto reg = ransac_register(a->cloud, b->cloud, matches, ro);
          if (reg.success) {
            estimate = reg.transform;
            o.registered = true;
            o.inliers = reg.inliers.size();
          }
        }

        stage = "metrics";
        o.eval.rmse = correspondence_rmse(omega, estimate);
        const PoseError err = rte_rre(estimate, spec.t_gt);
        o.eval.rte = err.rte;
        o.eval.rre = err.rre;
        o.eval.repeatability =
            relative_repeatability(ka, kb, a->cloud, b->cloud, spec.t_gt, config.repeatability_threshold);
        outcomes.push_back(o);
      }

      for (const auto& row : report.repeatability) {
        const auto mode_id = static_cast<std::uint64_t>(row.mode);
        stage = "repeatability";
        const KeypointSet ka = keypoints_for(*a, row.mode, row.keypoints,
                                             derive_seed(config.seed, {pair_key, mode_id, row.keypoints, 3}));
        const KeypointSet kb = keypoints_for(*b, row.mode, row.keypoints,
                                             derive_seed(config.seed, {pair_key, mode_id, row.keypoints, 4}));
        repeat.push_back(
            relative_repeatability(ka, kb, a->cloud, b->cloud, spec.t_gt, config.repeatability_threshold));
      }
    } catch (const std::exception& e) {
      report.failures.push_back({spec.pair_id(), stage, e.what()});
      outcomes.assign(report.sweep.size(), failed_outcome(spec, in_eval));
      repeat.assign(report.repeatability.size(), 0.0);
    }
    for (std::size_t r = 0; r < report.sweep.size(); ++r) report.sweep[r].pairs.push_back(outcomes[r]);
    for (std::size_t r = 0; r < report.repeatability.size(); ++r) {
      report.repeatability[r].pairs.push_back(repeat[r]);
    }
  }

  for (auto& row : report.sweep) summarize(row, config, report.in_evaluation_set);
  for (auto& row : report.repeatability) row.mean = mean_over(row.pairs, report.in_evaluation_set);
  return report;
}

BenchmarkReport run_pipeline(const DatasetConfig& config, const PairManifest& manifest,
                             const std::filesystem::path& model_path, std::size_t num_keypoints,
                             SamplingMode mode) {
  DatasetConfig single = config;
  single.keypoint_counts = {num_keypoints};
  PipelineOptions options;
  options.modes = {mode};
  options.repeatability = false;
  return run_pipeline(single, manifest, load_weights(model_path), options);
}

void write_report_csv(std::ostream& out, const BenchmarkReport& report) {
  out << "section,mode,keypoints,scene,pair,metric,value\n";
  auto line = [&](const char* section, const char* mode, std::size_t k, const std::string& scene,
                  const std::string& pair, const char* metric, double value) {
    out << section << ',' << mode << ',' << k << ',' << scene << ',' << pair << ',' << metric << ','
        << format_number(value) << '\n';
  };
  for (const auto& row : report.sweep) {
    const char* mode = mode_name(row.mode);
    line("summary", mode, row.keypoints, "", "", "fmr", row.fmr.recall);
    line("summary", mode, row.keypoints, "", "", "fmr_std", row.fmr.std_dev);
    line("summary", mode, row.keypoints, "", "", "fmr_pair_level", row.fmr_pair_level);
    line("summary", mode, row.keypoints, "", "", "registration_recall", row.registration_recall);
    line("summary", mode, row.keypoints, "", "", "success_rate", row.success_rate);
    line("summary", mode, row.keypoints, "", "", "mean_inlier_ratio", row.mean_inlier_ratio);
    line("summary", mode, row.keypoints, "", "", "mean_matches", row.mean_matches);
    line("summary", mode, row.keypoints, "", "", "evaluated_pairs", static_cast<double>(row.fmr.pair_count));
    for (const auto& [scene, recall] : row.fmr.scene_recalls) {
      line("scene", mode, row.keypoints, scene, "", "fmr", recall);
    }
    for (const auto& p : row.pairs) {
      const auto& e = p.eval;
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "in_evaluation_set", e.in_evaluation_set);
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "keypoints", static_cast<double>(p.keypoints));
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "matches", static_cast<double>(p.matches));
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "inlier_ratio", e.inlier_ratio);
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "matched", e.matched);
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "ransac_inliers", static_cast<double>(p.inliers));
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "rmse", e.rmse);
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "rte", e.rte);
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "rre", e.rre);
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "repeatability", e.repeatability);
      line("pair", mode, row.keypoints, e.scene, e.pair_id, "failed", p.failed);
    }
  }
  for (const auto& row : report.repeatability) {
    const char* mode = mode_name(row.mode);
    line("repeatability", mode, row.keypoints, "", "", "mean", row.mean);
    for (std::size_t i = 0; i < row.pairs.size(); ++i) {
      line("repeatability", mode, row.keypoints, report.scenes[i], report.pair_ids[i], "repeatability",
           row.pairs[i]);
    }
  }
  for (const auto& f : report.failures) {
    // Messages may hold commas; the stage and message are folded into the metric column.
    std::string what = f.stage + ": " + f.message;
    std::replace(what.begin(), what.end(), ',', ';');
    std::replace(what.begin(), what.end(), '\n', ' ');
    out << "failure,,," << "," << f.pair_id << ',' << what << ",1\n";
  }
}

void write_report_table(std::ostream& out, const BenchmarkReport& report) {
  char buf[256];
  std::size_t evaluated = 0;
  for (bool b : report.in_evaluation_set) evaluated += b ? 1 : 0;
  out << "profile " << report.profile << ", " << report.pair_ids.size() << " pairs, " << evaluated
      << " in the evaluation set, " << report.failures.size() << " failed\n\n";
  std::snprintf(buf, sizeof(buf), "%-5s %9s %8s %8s %8s %8s %9s %9s\n", "mode", "keypoints", "FMR",
                "STD", "RR", "success", "inl.ratio", "matches");
  out << buf;
  for (const auto& row : report.sweep) {
    std::snprintf(buf, sizeof(buf), "%-5s %9zu %7.2f%% %7.2f%% %7.2f%% %7.2f%% %8.2f%% %9.1f\n",
                  mode_name(row.mode), row.keypoints, 100 * row.fmr.recall, 100 * row.fmr.std_dev,
                  100 * row.registration_recall, 100 * row.success_rate, 100 * row.mean_inlier_ratio,
                  row.mean_matches);
    out << buf;
  }
  if (!report.repeatability.empty()) {
    out << "\nrelative repeatability\n";
    std::snprintf(buf, sizeof(buf), "%-5s %9s %8s\n", "mode", "keypoints", "mean");
    out << buf;
    for (const auto& row : report.repeatability) {
      std::snprintf(buf, sizeof(buf), "%-5s %9zu %7.2f%%\n", mode_name(row.mode), row.keypoints,
                    100 * row.mean);
      out << buf;
    }
  }
  if (!report.failures.empty()) {
    out << "\nfailures\n";
    for (const auto& f : report.failures) out << "  " << f.pair_id << " [" << f.stage << "] " << f.message << '\n';
  }
}

}  // namespace kpfeat
