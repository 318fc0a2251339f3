#include "kpfeat/neighborhood.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Geometry>

namespace kpfeat {

namespace {

constexpr std::uint32_t kLeafSize = 12;

void check_radius(double r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw std::invalid_argument("radius must be positive and finite");
}

}  // namespace

NeighborhoodIndex::NeighborhoodIndex(std::span<const Vec3> points)
    : points_(points.begin(), points.end()) {
  if (points_.empty()) throw std::invalid_argument("cannot index an empty point cloud");
  if (points_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("point cloud too large to index");
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / kLeafSize + 1);
  build(0, static_cast<std::uint32_t>(points_.size()));
}

std::int32_t NeighborhoodIndex::build(std::uint32_t begin, std::uint32_t end) {
  auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  // split along the axis of largest extent
  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all points coincide

  std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  double split = points_[order_[mid]][axis];
  std::int32_t left = build(begin, mid);
  std::int32_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void NeighborhoodIndex::radius_recurse(std::int32_t node_id, const Vec3& q, double r2, double r,
                                       std::vector<std::size_t>& out) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      std::uint32_t idx = order_[i];
      if ((points_[idx] - q).squaredNorm() <= r2) out.push_back(idx);
    }
    return;
  }
  double d = q[node.axis] - node.split;
  if (d - r <= 0.0) radius_recurse(node.left, q, r2, r, out);
  if (d + r >= 0.0) radius_recurse(node.right, q, r2, r, out);
}

std::vector<std::size_t> NeighborhoodIndex::radius_search(const Vec3& q, double r) const {
  check_radius(r);
  std::vector<std::size_t> out;
  radius_recurse(0, q, r * r, r, out);
  std::sort(out.begin(), out.end());
  return out;
}

void NeighborhoodIndex::nearest_recurse(std::int32_t node_id, const Vec3& q, Nearest& best,
                                        double& best_d2) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      std::uint32_t idx = order_[i];
      double d2 = (points_[idx] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best.index)) {
        best_d2 = d2;
        best.index = idx;
      }
    }
    return;
  }
  double d = q[node.axis] - node.split;
  std::int32_t first = d <= 0.0 ? node.left : node.right;
  std::int32_t second = d <= 0.0 ? node.right : node.left;
  nearest_recurse(first, q, best, best_d2);
  // `<=` keeps equidistant candidates reachable for the lowest-index tie rule
  if (d * d <= best_d2) nearest_recurse(second, q, best, best_d2);
}

NeighborhoodIndex::Nearest NeighborhoodIndex::nearest(const Vec3& q) const {
  Nearest best{std::numeric_limits<std::size_t>::max(), 0.0};
  double best_d2 = std::numeric_limits<double>::infinity();
  nearest_recurse(0, q, best, best_d2);
  best.distance = std::sqrt(best_d2);
  return best;
}

NeighborhoodIndex build_index(const PointCloud& cloud) {
  require_non_empty(cloud, "build_index");
  return NeighborhoodIndex(cloud.view());
}

NeighborLists radius_neighbors(const NeighborhoodIndex& index, std::span<const Vec3> queries,
                               double r) {
  check_radius(r);
  NeighborLists lists(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) lists[i] = index.radius_search(queries[i], r);
  return lists;
}

NeighborLists radius_neighbors(const NeighborhoodIndex& index, const PointCloud& queries,
                               double r) {
  return radius_neighbors(index, queries.view(), r);
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0) || !std::isfinite(voxel)) {
    throw std::invalid_argument("voxel size must be positive and finite");
  }
  using Key = std::array<std::int64_t, 3>;
  const std::size_t n = cloud.size();
  std::vector<Key> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      keys[i][a] = static_cast<std::int64_t>(std::floor(cloud[i][a] / voxel));
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  std::vector<Vec3> out;
  PointCloud::Attributes attrs;
  for (const auto& [name, _] : cloud.attributes()) attrs[name];
  std::size_t begin = 0;
  while (begin < n) {
    std::size_t end = begin;
    Vec3 sum = Vec3::Zero();
    while (end < n && keys[order[end]] == keys[order[begin]]) sum += cloud[order[end++]];
    const double count = static_cast<double>(end - begin);
    out.push_back(sum / count);
    for (const auto& [name, values] : cloud.attributes()) {
      double acc = 0.0;
      for (std::size_t k = begin; k < end; ++k) acc += values[order[k]];
      attrs[name].push_back(acc / count);
    }
    begin = end;
  }
  return PointCloud(std::move(out), std::move(attrs));
}

PointCloud uniform_downsample(const PointCloud& cloud, std::size_t rate) {
  if (rate == 0) throw std::invalid_argument("sample rate must be at least 1");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < cloud.size(); i += rate) keep.push_back(i);
  return cloud.select(keep);
}

Perturbation random_rotation_perturb(const PointCloud& cloud, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const double ax = angle(rng);
  const double ay = angle(rng);
  const double az = angle(rng);
  Mat3 r = (Eigen::AngleAxisd(az, Vec3::UnitZ()) * Eigen::AngleAxisd(ay, Vec3::UnitY()) *
            Eigen::AngleAxisd(ax, Vec3::UnitX()))
               .toRotationMatrix();
  RigidTransform t(r, Vec3::Zero());
  return {apply_transform(cloud, t), t};
}

}  // namespace kpfeat
