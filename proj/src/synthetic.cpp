#include "kpfeat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Geometry>

#include "kpfeat/io.hpp"
#include "kpfeat/neighborhood.hpp"

namespace kpfeat {

namespace {

constexpr double kMinOverlap = 0.3;

class SurfaceSampler {
 public:
  SurfaceSampler(double density, std::mt19937_64& rng) : density_(density), rng_(rng) {}

  // Parallelogram o + a·u + b·v, a, b ∈ [0, 1].
  void patch(const Vec3& o, const Vec3& u, const Vec3& v) {
    const std::size_t n = count(u.cross(v).norm());
    for (std::size_t i = 0; i < n; ++i) {
      const double a = unit_(rng_);
      const double b = unit_(rng_);
      emit(o + a * u + b * v);
    }
  }

  // Open-bottom box resting on the floor, rotated by `yaw` about z.
  void box(const Vec3& center, const Vec3& half, double yaw) {
    const Mat3 r = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
    const Vec3 ex = r * Vec3(2 * half.x(), 0, 0);
    const Vec3 ey = r * Vec3(0, 2 * half.y(), 0);
    const Vec3 ez(0, 0, 2 * half.z());
    const Vec3 o = center - 0.5 * (ex + ey + ez);
    patch(o, ex, ez);
    patch(o + ey, ex, ez);
    patch(o, ey, ez);
    patch(o + ex, ey, ez);
    patch(o + ez, ex, ey);
  }

  // Sphere surface above the floor plane.
  void sphere(const Vec3& center, double radius) {
    const std::size_t n = count(4.0 * std::numbers::pi * radius * radius);
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 d(g(rng_), g(rng_), g(rng_));
      const double len = d.norm();
      if (len == 0.0) continue;
      const Vec3 p = center + radius * d / len;
      if (p.z() >= 0.0) emit(p);
    }
  }

  // Vertical cylinder standing on the floor, with a top cap.
  void cylinder(const Vec3& base, double radius, double height) {
    const std::size_t side = count(2.0 * std::numbers::pi * radius * height);
    for (std::size_t i = 0; i < side; ++i) {
      const double t = 2.0 * std::numbers::pi * unit_(rng_);
      emit(base + Vec3(radius * std::cos(t), radius * std::sin(t), height * unit_(rng_)));
    }
    const std::size_t cap = count(std::numbers::pi * radius * radius);
    for (std::size_t i = 0; i < cap; ++i) {
      const double t = 2.0 * std::numbers::pi * unit_(rng_);
      const double s = radius * std::sqrt(unit_(rng_));
      emit(base + Vec3(s * std::cos(t), s * std::sin(t), height));
    }
  }

  std::vector<Vec3> take() { return std::move(points_); }

 private:
  std::size_t count(double area) const {
    return static_cast<std::size_t>(std::llround(area * density_));
  }
  void emit(const Vec3& p) { points_.push_back(p); }

  double density_;
  std::mt19937_64& rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::vector<Vec3> points_;
};

std::vector<std::size_t> crop(const PointCloud& scene, const Vec3& center, double radius) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if ((scene[i] - center).norm() < radius) out.push_back(i);
  }
  return out;
}

std::string fragment_id(std::size_t i) {
  std::string s = std::to_string(i);
  return "frag_" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

}  // namespace

PointCloud synthetic_scene(const SyntheticOptions& options, std::uint64_t seed) {
  if (!(options.room_size > 0.0 && options.wall_height > 0.0 && options.points_per_m2 > 0.0)) {
    throw std::invalid_argument("synthetic scene dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  SurfaceSampler s(options.points_per_m2, rng);

  const double l = options.room_size;
  const double h = options.wall_height;
  s.patch(Vec3::Zero(), Vec3(l, 0, 0), Vec3(0, l, 0));
  s.patch(Vec3::Zero(), Vec3(l, 0, 0), Vec3(0, 0, h));
  s.patch(Vec3::Zero(), Vec3(0, l, 0), Vec3(0, 0, h));
  s.patch(Vec3(l, 0, 0), Vec3(0, l, 0), Vec3(0, 0, h));
  s.patch(Vec3(0, l, 0), Vec3(l, 0, 0), Vec3(0, 0, h));

  for (std::size_t k = 0; k < options.objects; ++k) {
    const Vec3 at(uniform(0.4, l - 0.4), uniform(0.4, l - 0.4), 0.0);
    switch (k % 3) {
      case 0: {
        const Vec3 half(uniform(0.1, 0.4), uniform(0.1, 0.4), uniform(0.1, 0.5));
        s.box(at + Vec3(0, 0, half.z()), half, uniform(0.0, std::numbers::pi));
        break;
      }
      case 1: {
        const double r = uniform(0.12, 0.35);
        s.sphere(at + Vec3(0, 0, uniform(0.5 * r, 1.2)), r);
        break;
      }
      default:
        s.cylinder(at, uniform(0.08, 0.3), uniform(0.3, 1.3));
        break;
    }
  }
  PointCloud scene(s.take());
  return options.scene_voxel > 0.0 ? voxel_downsample(scene, options.scene_voxel) : scene;
}

SyntheticPair synthetic_pair(const PointCloud& scene, const SyntheticOptions& options,
                             std::uint64_t seed) {
  require_non_empty(scene, "synthetic_pair");
  Vec3 lo = scene[0], hi = scene[0];
  for (const auto& p : scene.points()) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double margin = 0.25 * options.fragment_radius;

  for (int attempt = 0; attempt < 100; ++attempt) {
    const Vec3 ca(lo.x() + margin + (hi.x() - lo.x() - 2 * margin) * unit(rng),
                  lo.y() + margin + (hi.y() - lo.y() - 2 * margin) * unit(rng),
                  lo.z() + 0.4 * (hi.z() - lo.z()));
    const double heading = 2.0 * std::numbers::pi * unit(rng);
    const Vec3 cb = ca + options.center_offset * Vec3(std::cos(heading), std::sin(heading), 0.0);

    const auto ia = crop(scene, ca, options.fragment_radius);
    const auto ib = crop(scene, cb, options.fragment_radius);
    if (ia.empty() || ib.empty()) continue;
    std::vector<std::size_t> shared;
    std::set_intersection(ia.begin(), ia.end(), ib.begin(), ib.end(), std::back_inserter(shared));
    const double overlap =
        static_cast<double>(shared.size()) / static_cast<double>(std::min(ia.size(), ib.size()));
    if (!(overlap > kMinOverlap)) continue;

    Vec3 axis(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
    if (axis.norm() < 1e-6) axis = Vec3::UnitZ();
    const double angle = options.max_rotation_deg * std::numbers::pi / 180.0 * (2.0 * unit(rng) - 1.0);
    const Vec3 t = options.max_translation *
                   Vec3(2 * unit(rng) - 1, 2 * unit(rng) - 1, 2 * unit(rng) - 1);
    SyntheticPair pair;
    pair.t_gt = axis_angle(axis, angle, t);
    pair.a = scene.select(ia);
    pair.b = apply_transform(scene.select(ib), pair.t_gt.inverse());
    pair.overlap = overlap;
    return pair;
  }
  throw std::runtime_error("could not crop an overlapping fragment pair");
}

std::filesystem::path write_synthetic_dataset(const std::filesystem::path& directory,
                                              const SyntheticOptions& options,
                                              std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  const fs::path manifest_path = directory / "manifest.txt";
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + manifest_path.string());
  manifest << "# synthetic dataset, seed " << seed << "\n";

  for (std::size_t s = 0; s < options.scenes; ++s) {
    const std::string scene_name = "scene_" + std::to_string(s);
    const fs::path scene_dir = directory / "scenes" / scene_name;
    fs::create_directories(scene_dir);
    const PointCloud scene = synthetic_scene(options, derive_seed(seed, {0, s}));

    std::vector<PoseEntry> poses;
    manifest << "poses scenes/" << scene_name << "/gt.log\n";
    for (std::size_t k = 0; k < options.pairs_per_scene; ++k) {
      const SyntheticPair pair = synthetic_pair(scene, options, derive_seed(seed, {1, s, k}));
      const std::string id_a = fragment_id(2 * k);
      const std::string id_b = fragment_id(2 * k + 1);
      write_ply(scene_dir / (id_a + ".ply"), pair.a, PlyFormat::kBinaryLittleEndian, PlyScalar::kFloat64);
      write_ply(scene_dir / (id_b + ".ply"), pair.b, PlyFormat::kBinaryLittleEndian, PlyScalar::kFloat64);
      poses.push_back({{id_a, id_b}, pair.t_gt});
      manifest << "pair " << scene_name << ' ' << id_a << ' ' << id_b << " scenes/" << scene_name
               << '/' << id_a << ".ply scenes/" << scene_name << '/' << id_b << ".ply "
               << format_number(pair.overlap) << '\n';
    }
    write_pose_file(scene_dir / "gt.log", poses);
  }
  if (!manifest) throw std::runtime_error("failed writing " + manifest_path.string());
  return manifest_path;
}

}  // namespace kpfeat
