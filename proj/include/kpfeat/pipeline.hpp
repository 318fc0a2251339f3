#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "kpfeat/config.hpp"
#include "kpfeat/kpconv.hpp"
#include "kpfeat/metrics.hpp"

namespace kpfeat {

// kRand: seeded uniform sample of points. kPred: top detection scores.
enum class SamplingMode { kRand, kPred };

const char* mode_name(SamplingMode mode);
SamplingMode parse_mode(const std::string& name);

struct PairOutcome {
  PairEvaluation eval;
  std::size_t keypoints = 0;    // after clamping to the cloud size
  std::size_t matches = 0;
  std::size_t inliers = 0;      // RANSAC inliers
  bool registered = false;      // RANSAC produced a hypothesis
  bool failed = false;          // a stage threw; metrics hold failure values
};

struct SweepRow {
  SamplingMode mode = SamplingMode::kPred;
  std::size_t keypoints = 0;
  std::vector<PairOutcome> pairs;  // manifest order
  RecallSummary fmr;               // scene-level mean and std
  double fmr_pair_level = 0.0;
  double registration_recall = 0.0;
  double success_rate = 0.0;
  double mean_inlier_ratio = 0.0;
  double mean_matches = 0.0;
};

struct RepeatabilityRow {
  SamplingMode mode = SamplingMode::kPred;
  std::size_t keypoints = 0;
  std::vector<double> pairs;  // manifest order; failed pairs hold 0
  double mean = 0.0;          // over the evaluation set
};

struct PairFailure {
  std::string pair_id;
  std::string stage;
  std::string message;
};

struct BenchmarkReport {
  std::string profile;
  std::vector<std::string> pair_ids;
  std::vector<std::string> scenes;
  std::vector<bool> in_evaluation_set;
  std::vector<SweepRow> sweep;
  std::vector<RepeatabilityRow> repeatability;
  std::vector<PairFailure> failures;
};

struct PipelineOptions {
  std::vector<SamplingMode> modes{SamplingMode::kRand, SamplingMode::kPred};
  bool repeatability = true;
};

// Per pair: load, voxel downsample, network_forward, select keypoints, mutual
// nearest-neighbor matching, RANSAC, metrics. Stage errors are recorded in
// `failures` and the pair counts as unsuccessful; the run continues.
// Deterministic for a fixed config, manifest and model.
BenchmarkReport run_pipeline(const DatasetConfig& config, const PairManifest& manifest,
                             const KpConvModel& model, const PipelineOptions& options = {});

// Single-count, single-mode form.
BenchmarkReport run_pipeline(const DatasetConfig& config, const PairManifest& manifest,
                             const std::filesystem::path& model_path, std::size_t num_keypoints,
                             SamplingMode mode);

// Long-format CSV: section,mode,keypoints,scene,pair,metric,value.
void write_report_csv(std::ostream& out, const BenchmarkReport& report);
void write_report_table(std::ostream& out, const BenchmarkReport& report);

}  // namespace kpfeat
