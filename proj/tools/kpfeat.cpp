// kpfeat: command-line front end for dense 3D feature description, keypoint
// detection, matching, registration and benchmark evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "kpfeat/config.hpp"
#include "kpfeat/detector.hpp"
#include "kpfeat/io.hpp"
#include "kpfeat/kpconv.hpp"
#include "kpfeat/neighborhood.hpp"
#include "kpfeat/pipeline.hpp"
#include "kpfeat/registration.hpp"
#include "kpfeat/synthetic.hpp"

namespace fs = std::filesystem;
using namespace kpfeat;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

// Loads a cloud and applies the voxel filter: a negative size means the
// model's first-stage grid, zero keeps the cloud as is.
PointCloud prepared_cloud(const fs::path& path, double voxel, const KpConvModel& model,
                          const std::string& cloud_out) {
  PointCloud cloud = read_ply(path);
  require_non_empty(cloud, "input cloud");
  if (voxel < 0.0) voxel = model.grid(0);
  if (voxel > 0.0) cloud = voxel_downsample(cloud, voxel);
  if (!cloud_out.empty()) write_ply(fs::path(cloud_out), cloud, PlyFormat::kBinaryLittleEndian, PlyScalar::kFloat64);
  return cloud;
}

std::vector<std::size_t> optional_indices(const std::string& path) {
  if (path.empty()) return {};
  return read_index_csv(path);
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

struct ConfigFlags {
  std::string config_path;
  std::string profile;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key = value config file");
    app->add_option("--profile", profile, "base profile: indoor or outdoor")
        ->check(CLI::IsMember({"indoor", "outdoor"}));
    for (const auto& key : config_keys()) {
      app->add_option("--" + dashed(key), overrides[key], "override config key '" + key + "'");
    }
  }

  DatasetConfig resolve() const {
    DatasetConfig config = config_path.empty() ? indoor_profile() : load_config(config_path);
    if (!profile.empty()) {
      // A profile flag rebases the defaults but keeps file overrides.
      DatasetConfig base = profile_named(profile);
      if (!config_path.empty()) {
        std::ifstream in(config_path);
        std::string line;
        std::ostringstream rest;
        while (std::getline(in, line)) {
          if (line.find("profile") == std::string::npos) rest << line << '\n';
        }
        std::istringstream again("profile = " + profile + "\n" + rest.str());
        base = read_config(again);
      }
      config = base;
    }
    for (const auto& [key, value] : overrides) {
      if (!value.empty()) set_config_value(config, key, value);
    }
    config.validate();
    return config;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense 3D local feature description, detection and registration"};
  app.require_subcommand(1);

  // init-model
  auto* init = app.add_subcommand("init-model", "write a seeded randomly initialized model");
  std::string init_out;
  std::uint64_t init_seed = 0;
  ModelOptions model_options;
  bool no_density_norm = false;
  init->add_option("-o,--out", init_out, "weight file")->required();
  init->add_option("--seed", init_seed, "initialization seed");
  init->add_option("--grid", model_options.first_grid, "first-stage grid size in meters");
  init->add_option("--kernel-points", model_options.kernel_count, "kernel points per layer (1 or 15)");
  init->add_flag("--no-density-norm", no_density_norm, "disable neighbor-count normalization");

  // describe
  auto* describe = app.add_subcommand("describe", "compute dense descriptors for a cloud");
  std::string d_model, d_cloud, d_features, d_csv, d_cloud_out;
  double d_voxel = -1.0;
  describe->add_option("--model", d_model, "weight file")->required();
  describe->add_option("--cloud", d_cloud, "input PLY")->required();
  describe->add_option("--features", d_features, "output feature binary");
  describe->add_option("--csv", d_csv, "output descriptor CSV");
  describe->add_option("--voxel", d_voxel, "voxel size; 0 keeps the cloud, default is the model grid");
  describe->add_option("--cloud-out", d_cloud_out, "write the (downsampled) cloud the rows refer to");

  // detect
  auto* detect = app.add_subcommand("detect", "detect keypoints on a cloud");
  std::string k_model, k_cloud, k_out, k_scores, k_cloud_out;
  double k_voxel = -1.0, k_radius = 0.0;
  std::size_t k_count = 5000;
  bool k_d2 = false, k_hard = false;
  detect->add_option("--model", k_model, "weight file")->required();
  detect->add_option("--cloud", k_cloud, "input PLY")->required();
  detect->add_option("-o,--out", k_out, "keypoint CSV (rank,index,score)")->required();
  detect->add_option("-k,--keypoints", k_count, "number of keypoints");
  detect->add_option("--scores", k_scores, "also write every point's score");
  detect->add_option("--voxel", k_voxel, "voxel size; 0 keeps the cloud, default is the model grid");
  detect->add_option("--radius", k_radius, "scoring neighborhood radius; default is the model's first radius");
  detect->add_option("--cloud-out", k_cloud_out, "write the (downsampled) cloud the indices refer to");
  detect->add_flag("--d2", k_d2, "use the neighborhood-size dependent local-max saliency");
  detect->add_flag("--hard", k_hard, "hard selection: spatial maxima of each point's preeminent channel");

  // match
  auto* match = app.add_subcommand("match", "mutual nearest-neighbor descriptor matching");
  std::string m_fa, m_fb, m_ka, m_kb, m_out;
  match->add_option("--features-a", m_fa, "feature binary of P")->required();
  match->add_option("--features-b", m_fb, "feature binary of Q")->required();
  match->add_option("--keypoints-a", m_ka, "restrict P to the indices in this CSV");
  match->add_option("--keypoints-b", m_kb, "restrict Q to the indices in this CSV");
  match->add_option("-o,--out", m_out, "correspondence CSV")->required();

  // register
  auto* reg = app.add_subcommand("register", "RANSAC registration from feature matches");
  std::string r_ca, r_cb, r_fa, r_fb, r_ka, r_kb, r_matches, r_out, r_inliers;
  RansacOptions ransac;
  bool r_icp = false;
  reg->add_option("--cloud-a", r_ca, "P cloud (the one the features index)")->required();
  reg->add_option("--cloud-b", r_cb, "Q cloud")->required();
  reg->add_option("--features-a", r_fa, "feature binary of P");
  reg->add_option("--features-b", r_fb, "feature binary of Q");
  reg->add_option("--keypoints-a", r_ka, "restrict P to the indices in this CSV");
  reg->add_option("--keypoints-b", r_kb, "restrict Q to the indices in this CSV");
  reg->add_option("--matches", r_matches, "use these correspondences instead of matching features");
  reg->add_option("-o,--out", r_out, "pose file holding T with p = T q")->required();
  reg->add_option("--inliers", r_inliers, "write RANSAC inliers as CSV");
  reg->add_option("--iterations", ransac.max_iterations, "maximum RANSAC iterations");
  reg->add_option("--threshold", ransac.inlier_threshold, "inlier distance in meters");
  reg->add_option("--seed", ransac.seed, "RANSAC seed");
  reg->add_flag("--adaptive", ransac.adaptive, "stop once the confidence bound is reached");
  reg->add_option("--confidence", ransac.confidence, "confidence for --adaptive");
  reg->add_flag("--icp", r_icp, "refine with point-to-point ICP");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "run the benchmark over a pair manifest");
  std::string e_manifest, e_model, e_out, e_table;
  std::vector<std::string> e_modes{"rand", "pred"};
  bool e_no_repeat = false;
  ConfigFlags e_flags;
  eval->add_option("--manifest", e_manifest, "pair manifest; defaults to the config's pair_list");
  eval->add_option("--model", e_model, "weight file")->required();
  eval->add_option("-o,--out", e_out, "report CSV")->required();
  eval->add_option("--table", e_table, "also write the human-readable table here");
  eval->add_option("--modes", e_modes, "sampling modes: rand, pred")->delimiter(',');
  eval->add_flag("--no-repeatability", e_no_repeat, "skip the repeatability sweep");
  e_flags.attach(eval);

  // config
  auto* cfg = app.add_subcommand("config", "print the effective configuration");
  ConfigFlags c_flags;
  c_flags.attach(cfg);

  // perturb
  auto* perturb = app.add_subcommand("perturb", "rotate every fragment of a manifest randomly");
  std::string p_manifest, p_out;
  std::uint64_t p_seed = 0;
  perturb->add_option("--manifest", p_manifest, "input manifest")->required();
  perturb->add_option("-o,--out", p_out, "output directory")->required();
  perturb->add_option("--seed", p_seed, "rotation seed");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic fragment-pair dataset");
  std::string s_out;
  std::uint64_t s_seed = 0;
  SyntheticOptions s_options;
  synth->add_option("-o,--out", s_out, "output directory")->required();
  synth->add_option("--seed", s_seed, "generation seed");
  synth->add_option("--scenes", s_options.scenes, "number of scenes");
  synth->add_option("--pairs-per-scene", s_options.pairs_per_scene, "fragment pairs per scene");
  synth->add_option("--density", s_options.points_per_m2, "surface samples per square meter");
  synth->add_option("--max-rotation", s_options.max_rotation_deg, "ground-truth rotation bound in degrees");
  synth->add_option("--fragment-radius", s_options.fragment_radius, "crop radius in meters");
  synth->add_option("--center-offset", s_options.center_offset, "distance between the two crop centers");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*init) {
      model_options.density_normalized = !no_density_norm;
      save_weights(random_model(model_options, init_seed), init_out);
    } else if (*describe) {
      const KpConvModel model = load_weights(d_model);
      const PointCloud cloud = prepared_cloud(d_cloud, d_voxel, model, d_cloud_out);
      const FeatureMap features = network_forward(model, cloud);
      if (d_features.empty() && d_csv.empty()) throw std::runtime_error("give --features and/or --csv");
      if (!d_features.empty()) write_features(d_features, features);
      if (!d_csv.empty()) {
        auto out = open_out(d_csv);
        write_descriptor_csv(out, features);
      }
    } else if (*detect) {
      const KpConvModel model = load_weights(k_model);
      const PointCloud cloud = prepared_cloud(k_cloud, k_voxel, model, k_cloud_out);
      const FeatureMap features = network_forward(model, cloud);
      const NeighborhoodIndex index(cloud.view());
      const NeighborLists neighbors =
          radius_neighbors(index, cloud, k_radius > 0.0 ? k_radius : model.radius(0));
      const ScoreMap scores =
          k_d2 ? detection_scores(d2_saliency_scores(features.responses, neighbors),
                                  channel_max_scores(features.responses))
               : score_responses(features.responses, neighbors);
      KeypointSet keypoints;
      if (k_hard) {
        keypoints.indices = hard_keypoints(features.responses, neighbors);
        for (std::size_t i : keypoints.indices) keypoints.scores.push_back(scores.scores[static_cast<Eigen::Index>(i)]);
      } else {
        keypoints = select_keypoints(scores, std::min(k_count, cloud.size()));
      }
      auto out = open_out(k_out);
      write_keypoint_csv(out, keypoints);
      if (!k_scores.empty()) {
        auto sout = open_out(k_scores);
        write_score_csv(sout, scores);
      }
    } else if (*match) {
      const FeatureMap fa = read_features(m_fa);
      const FeatureMap fb = read_features(m_fb);
      auto ia = optional_indices(m_ka);
      auto ib = optional_indices(m_kb);
      if (ia.empty()) ia = all_indices(fa.size());
      if (ib.empty()) ib = all_indices(fb.size());
      auto out = open_out(m_out);
      write_match_csv(out, mutual_nn_matches(fa, fb, ia, ib));
    } else if (*reg) {
      const PointCloud ca = read_ply(r_ca);
      const PointCloud cb = read_ply(r_cb);
      CorrespondenceSet matches;
      if (!r_matches.empty()) {
        matches = read_match_csv(r_matches);
      } else {
        if (r_fa.empty() || r_fb.empty()) throw std::runtime_error("give --matches or both feature files");
        const FeatureMap fa = read_features(r_fa);
        const FeatureMap fb = read_features(r_fb);
        if (fa.size() != ca.size() || fb.size() != cb.size()) {
          throw std::runtime_error("feature rows do not match cloud sizes; pass the clouds written by --cloud-out");
        }
        auto ia = optional_indices(r_ka);
        auto ib = optional_indices(r_kb);
        if (ia.empty()) ia = all_indices(fa.size());
        if (ib.empty()) ib = all_indices(fb.size());
        matches = mutual_nn_matches(fa, fb, ia, ib);
      }
      const RegistrationResult result = ransac_register(ca, cb, matches, ransac);
      if (!result.success) throw std::runtime_error("RANSAC found no valid hypothesis");
      RigidTransform t = result.transform;
      if (r_icp) t = icp_refine(ca, cb, t).transform;
      write_pose_file(fs::path(r_out), {{{fs::path(r_ca).stem().string(), fs::path(r_cb).stem().string()}, t}});
      if (!r_inliers.empty()) {
        auto out = open_out(r_inliers);
        write_match_csv(out, result.inliers);
      }
      std::cout << matches.size() << " matches, " << result.inliers.size() << " inliers, "
                << result.iterations_used << " iterations\n";
    } else if (*eval) {
      const DatasetConfig config = e_flags.resolve();
      const std::string manifest_path = e_manifest.empty() ? config.pair_list : e_manifest;
      if (manifest_path.empty()) throw std::runtime_error("no manifest: give --manifest or set pair_list");
      PipelineOptions options;
      options.modes.clear();
      for (const auto& m : e_modes) options.modes.push_back(parse_mode(m));
      options.repeatability = !e_no_repeat;
      const BenchmarkReport report =
          run_pipeline(config, load_manifest(manifest_path), load_weights(e_model), options);
      auto out = open_out(e_out);
      write_report_csv(out, report);
      write_report_table(std::cout, report);
      if (!e_table.empty()) {
        auto tout = open_out(e_table);
        write_report_table(tout, report);
      }
    } else if (*cfg) {
      write_config(std::cout, c_flags.resolve());
    } else if (*perturb) {
      const PairManifest manifest = load_manifest(p_manifest);
      const fs::path root(p_out);
      std::map<std::string, RigidTransform> rotations;  // scene/id -> applied rotation
      auto rotated = [&](const std::string& scene, const std::string& id, const fs::path& src) {
        const std::string key = scene + "/" + id;
        if (auto it = rotations.find(key); it != rotations.end()) return it->second;
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : key) h = (h ^ c) * 0x100000001b3ULL;
        const Perturbation p = random_rotation_perturb(read_ply(src), derive_seed(p_seed, {h}));
        fs::create_directories(root / "scenes" / scene);
        write_ply(root / "scenes" / scene / (id + ".ply"), p.cloud, PlyFormat::kBinaryLittleEndian,
                  PlyScalar::kFloat64);
        rotations.emplace(key, p.transform);
        return p.transform;
      };
      std::map<std::string, std::vector<PoseEntry>> poses;
      std::ostringstream pairs;
      for (const auto& spec : manifest.pairs) {
        const RigidTransform ra = rotated(spec.scene, spec.id_a, spec.path_a);
        const RigidTransform rb = rotated(spec.scene, spec.id_b, spec.path_b);
        poses[spec.scene].push_back({{spec.id_a, spec.id_b}, compose(ra, compose(spec.t_gt, rb.inverse()))});
        pairs << "pair " << spec.scene << ' ' << spec.id_a << ' ' << spec.id_b << " scenes/" << spec.scene << '/'
              << spec.id_a << ".ply scenes/" << spec.scene << '/' << spec.id_b << ".ply "
              << format_number(spec.overlap) << '\n';
      }
      auto out = open_out(root / "manifest.txt");
      out << "# randomly rotated copy of " << p_manifest << ", seed " << p_seed << '\n';
      std::istringstream lines(pairs.str());
      std::string current_scene;
      for (std::string line; std::getline(lines, line);) {
        std::istringstream ls(line);
        std::string word, scene;
        ls >> word >> scene;
        if (scene != current_scene) {
          out << "poses scenes/" << scene << "/gt.log\n";
          current_scene = scene;
        }
        out << line << '\n';
      }
      for (const auto& [scene, entries] : poses) write_pose_file(root / "scenes" / scene / "gt.log", entries);
    } else if (*synth) {
      std::cout << write_synthetic_dataset(s_out, s_options, s_seed).string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "kpfeat: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
