#include "kpfeat/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "kpfeat/io.hpp"

namespace kpfeat {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

template <class Int>
Int to_integer(const std::string& key, const std::string& v) {
  Int out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::vector<std::size_t> to_counts(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(to_integer<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError("'" + key + "' needs at least one count");
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::function<void(DatasetConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const DatasetConfig&)> get;
};

template <class T>
Field number_field(T DatasetConfig::*member) {
  return {[member](DatasetConfig& c, const std::string& k, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*member = to_double(k, v);
            } else {
              c.*member = to_integer<T>(k, v);
            }
          },
          [member](const DatasetConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_number(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

Field counts_field(std::vector<std::size_t> DatasetConfig::*member) {
  return {[member](DatasetConfig& c, const std::string& k, const std::string& v) { c.*member = to_counts(k, v); },
          [member](const DatasetConfig& c) { return join(c.*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"voxel_size", number_field(&DatasetConfig::voxel_size)},
      {"detection_radius", number_field(&DatasetConfig::detection_radius)},
      {"tau1", number_field(&DatasetConfig::tau1)},
      {"tau2", number_field(&DatasetConfig::tau2)},
      {"ransac_iterations", number_field(&DatasetConfig::ransac_iterations)},
      {"ransac_threshold", number_field(&DatasetConfig::ransac_threshold)},
      {"ransac_sample_size", number_field(&DatasetConfig::ransac_sample_size)},
      {"repeatability_threshold", number_field(&DatasetConfig::repeatability_threshold)},
      {"rmse_threshold", number_field(&DatasetConfig::rmse_threshold)},
      {"rte_max", number_field(&DatasetConfig::rte_max)},
      {"rre_max", number_field(&DatasetConfig::rre_max)},
      {"min_overlap", number_field(&DatasetConfig::min_overlap)},
      {"seed", number_field(&DatasetConfig::seed)},
      {"keypoint_counts", counts_field(&DatasetConfig::keypoint_counts)},
      {"repeatability_counts", counts_field(&DatasetConfig::repeatability_counts)},
      {"pair_list",
       {[](DatasetConfig& c, const std::string&, const std::string& v) { c.pair_list = v; },
        [](const DatasetConfig& c) { return c.pair_list; }}},
  };
  return table;
}

}  // namespace

void DatasetConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(voxel_size, "voxel_size");
  positive(tau1, "tau1");
  positive(ransac_threshold, "ransac_threshold");
  positive(repeatability_threshold, "repeatability_threshold");
  positive(rmse_threshold, "rmse_threshold");
  positive(rte_max, "rte_max");
  positive(rre_max, "rre_max");
  if (detection_radius < 0.0) throw ConfigError("detection_radius must be >= 0");
  if (tau2 < 0.0 || tau2 > 1.0) throw ConfigError("tau2 must lie in [0, 1]");
  if (min_overlap < 0.0 || min_overlap > 1.0) throw ConfigError("min_overlap must lie in [0, 1]");
  if (ransac_iterations == 0) throw ConfigError("ransac_iterations must be positive");
  if (ransac_sample_size < 3) throw ConfigError("ransac_sample_size must be at least 3");
  for (const auto* counts : {&keypoint_counts, &repeatability_counts}) {
    if (counts->empty()) throw ConfigError("keypoint count lists must be non-empty");
    for (std::size_t n : *counts) {
      if (n == 0) throw ConfigError("keypoint counts must be positive");
    }
  }
}

DatasetConfig indoor_profile() { return DatasetConfig{}; }

DatasetConfig outdoor_profile() {
  DatasetConfig c;
  c.profile = "outdoor";
  c.voxel_size = 0.30;
  c.ransac_threshold = 0.5;
  c.repeatability_threshold = 0.5;
  return c;
}

DatasetConfig profile_named(const std::string& name) {
  if (name == "indoor") return indoor_profile();
  if (name == "outdoor") return outdoor_profile();
  throw ConfigError("unknown profile '" + name + "' (expected indoor or outdoor)");
}

void set_config_value(DatasetConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(config, key, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.first);
    return k;
  }();
  return keys;
}

DatasetConfig read_config(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string profile = "indoor";
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "profile") {
      profile = value;
    } else {
      entries.emplace_back(std::move(key), std::move(value));
    }
  }
  // The profile sets the base regardless of where it appears.
  DatasetConfig config = profile_named(profile);
  for (const auto& [key, value] : entries) set_config_value(config, key, value);
  config.validate();
  return config;
}

DatasetConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return read_config(in);
}

void write_config(std::ostream& out, const DatasetConfig& config) {
  out << "profile = " << config.profile << '\n';
  for (const auto& [name, field] : fields()) out << name << " = " << field.get(config) << '\n';
}

PairManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  PairManifest manifest;
  std::map<std::pair<std::string, std::string>, RigidTransform> poses;
  bool have_poses = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (tok[0] == "poses") {
      if (tok.size() != 2) throw ConfigError(where + ": expected 'poses <file>'");
      poses.clear();
      for (const auto& e : read_pose_file(resolve(tok[1]))) poses[{e.header[0], e.header[1]}] = e.transform;
      have_poses = true;
    } else if (tok[0] == "pair") {
      if (tok.size() != 7) {
        throw ConfigError(where + ": expected 'pair <scene> <id_a> <id_b> <path_a> <path_b> <overlap>'");
      }
      if (!have_poses) throw ConfigError(where + ": pair listed before any 'poses' line");
      PairSpec spec;
      spec.scene = tok[1];
      spec.id_a = tok[2];
      spec.id_b = tok[3];
      spec.path_a = resolve(tok[4]);
      spec.path_b = resolve(tok[5]);
      spec.overlap = to_double("overlap", tok[6]);
      if (spec.overlap < 0.0 || spec.overlap > 1.0) throw ConfigError(where + ": overlap must lie in [0, 1]");
      const auto it = poses.find({spec.id_a, spec.id_b});
      if (it == poses.end()) {
        throw ConfigError(where + ": no pose for pair " + spec.id_a + " " + spec.id_b);
      }
      spec.t_gt = it->second;
      manifest.pairs.push_back(std::move(spec));
    } else {
      throw ConfigError(where + ": unknown directive '" + tok[0] + "'");
    }
  }
  return manifest;
}

}  // namespace kpfeat
