#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kpfeat/core.hpp"

namespace kpfeat {

// Per-query neighbor indices, each list sorted ascending.
using NeighborLists = std::vector<std::vector<std::size_t>>;

// Immutable kd-tree over a copy of the indexed points. Radius queries use the
// closed ball (distance <= r) and are exact.
class NeighborhoodIndex {
 public:
  explicit NeighborhoodIndex(std::span<const Vec3> points);

  std::size_t size() const { return points_.size(); }
  std::span<const Vec3> points() const { return points_; }

  // Indices within distance r of q, ascending.
  std::vector<std::size_t> radius_search(const Vec3& q, double r) const;

  struct Nearest {
    std::size_t index;
    double distance;
  };
  // Closest indexed point; equal distances resolve to the lowest index.
  Nearest nearest(const Vec3& q) const;

 private:
  struct Node {
    std::uint32_t begin;
    std::uint32_t end;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void radius_recurse(std::int32_t node, const Vec3& q, double r2, double r,
                      std::vector<std::size_t>& out) const;
  void nearest_recurse(std::int32_t node, const Vec3& q, Nearest& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

NeighborhoodIndex build_index(const PointCloud& cloud);

NeighborLists radius_neighbors(const NeighborhoodIndex& index, std::span<const Vec3> queries,
                               double r);
NeighborLists radius_neighbors(const NeighborhoodIndex& index, const PointCloud& queries,
                               double r);

// One barycenter per occupied cell of an origin-anchored grid
// (cell = floor(coordinate / voxel)). Output is ordered by cell index;
// attributes are averaged per cell.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

// Keeps indices 0, rate, 2·rate, ... in order.
PointCloud uniform_downsample(const PointCloud& cloud, std::size_t rate);

struct Perturbation {
  PointCloud cloud;
  RigidTransform transform;
};

// Rotates about the origin with independent angles about x, y and z drawn
// uniformly from [0, 2π). Deterministic for a given seed.
Perturbation random_rotation_perturb(const PointCloud& cloud, std::uint64_t seed);

}  // namespace kpfeat
