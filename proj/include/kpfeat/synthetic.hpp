#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "kpfeat/core.hpp"

namespace kpfeat {

// Procedural indoor scenes for tests and demos: a walled room with a floor and
// randomly placed boxes, spheres and cylinders, sampled uniformly by area.
struct SyntheticOptions {
  std::size_t scenes = 2;
  std::size_t pairs_per_scene = 5;
  double room_size = 4.0;          // meters, square footprint
  double wall_height = 2.5;
  std::size_t objects = 14;
  double points_per_m2 = 900.0;
  // Grid the whole scene is voxel-filtered with before cropping, so both
  // fragments of a pair carry the same samples; 0 disables.
  double scene_voxel = 0.03;
  double fragment_radius = 1.4;    // meters, crop around each fragment center
  double center_offset = 0.7;      // distance between the two crop centers
  double max_rotation_deg = 5.0;   // magnitude of the ground-truth rotation
  double max_translation = 0.5;
};

PointCloud synthetic_scene(const SyntheticOptions& options, std::uint64_t seed);

struct SyntheticPair {
  PointCloud a;
  PointCloud b;             // stored in its own frame: a-frame point = t_gt · b-frame point
  RigidTransform t_gt;
  double overlap = 0.0;     // shared source points / smaller fragment size
};

// Crops two overlapping fragments from `scene` and moves the second by a
// random rigid motion. Retries until the overlap exceeds 0.3.
SyntheticPair synthetic_pair(const PointCloud& scene, const SyntheticOptions& options,
                             std::uint64_t seed);

// Writes scenes/<scene>/<id>.ply fragments, one gt.log pose file per scene and
// a manifest.txt listing every pair. Returns the manifest path.
std::filesystem::path write_synthetic_dataset(const std::filesystem::path& directory,
                                              const SyntheticOptions& options,
                                              std::uint64_t seed);

}  // namespace kpfeat
