#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "kpfeat/core.hpp"

namespace kpfeat {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Evaluation settings. Text form is one `key = value` per line; '#' starts a
// comment. A `profile` line selects the base defaults, every other key
// overrides one field. Lists are comma-separated.
struct DatasetConfig {
  std::string profile = "indoor";
  double voxel_size = 0.03;           // meters
  double detection_radius = 0.0;      // meters; 0 uses the model's first-stage radius
  double tau1 = 0.10;                 // inlier distance, meters
  double tau2 = 0.05;                 // inlier ratio threshold
  std::size_t ransac_iterations = 50000;
  double ransac_threshold = 0.10;     // meters
  std::size_t ransac_sample_size = 3;
  double repeatability_threshold = 0.1;
  double rmse_threshold = 0.2;
  double rte_max = 2.0;
  double rre_max = 5.0;
  double min_overlap = 0.30;
  std::uint64_t seed = 0;
  std::vector<std::size_t> keypoint_counts{5000, 2500, 1000, 500, 250};
  std::vector<std::size_t> repeatability_counts{4, 8, 16, 32, 64, 128, 256, 512};
  std::string pair_list;

  void validate() const;
};

DatasetConfig indoor_profile();
DatasetConfig outdoor_profile();
// "indoor" or "outdoor"; throws ConfigError otherwise.
DatasetConfig profile_named(const std::string& name);

// Sets one field from its text form. Throws ConfigError on unknown keys or
// unparsable values. `profile` is not accepted here.
void set_config_value(DatasetConfig& config, const std::string& key, const std::string& value);

DatasetConfig read_config(std::istream& in);
DatasetConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const DatasetConfig& config);

// Names of all settable keys, in write order.
const std::vector<std::string>& config_keys();

// One fragment pair. T_gt maps fragment B into fragment A's frame
// (p ≈ T_gt · q for p in A, q in B).
struct PairSpec {
  std::string scene;
  std::string id_a;
  std::string id_b;
  std::filesystem::path path_a;
  std::filesystem::path path_b;
  RigidTransform t_gt;
  double overlap = 1.0;

  std::string pair_id() const { return scene + "/" + id_a + "_" + id_b; }
};

// Manifest text form:
//   poses <file>                                  pose file for the following pairs
//   pair <scene> <id_a> <id_b> <path_a> <path_b> <overlap>
// Relative paths resolve against the manifest's directory. Each pair's pose is
// the entry in the active pose file whose header starts with "<id_a> <id_b>".
struct PairManifest {
  std::vector<PairSpec> pairs;
};

PairManifest load_manifest(const std::filesystem::path& path);

}  // namespace kpfeat
