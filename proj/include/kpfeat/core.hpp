#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace kpfeat {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Dense row-major matrix used for per-point features (one row per point).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Ordered set of 3D points in meters with optional per-point scalar channels.
// Coordinates are validated finite on construction.
class PointCloud {
 public:
  using Attributes = std::map<std::string, std::vector<double>>;

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> points);
  PointCloud(std::vector<Vec3> points, Attributes attributes);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<Vec3>& points() const { return points_; }
  std::span<const Vec3> view() const { return points_; }
  const Attributes& attributes() const { return attributes_; }

  // Subset in the order given by `indices`, attributes included.
  PointCloud select(std::span<const std::size_t> indices) const;

 private:
  std::vector<Vec3> points_;
  Attributes attributes_;
};

// Throws std::invalid_argument naming `what` when the cloud is empty.
void require_non_empty(const PointCloud& cloud, const char* what);

// SE(3) pose. The rotation is kept as a full matrix; construction checks
// RᵀR = I and det R = +1 within 1e-9.
class RigidTransform {
 public:
  static constexpr double kTolerance = 1e-9;

  RigidTransform();
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }

  // Projects a near-rigid matrix onto SO(3) when its orthonormality and
  // determinant errors are within `tolerance`; throws std::invalid_argument
  // otherwise.
  static RigidTransform nearest(const Mat3& rotation, const Vec3& translation,
                                double tolerance);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  RigidTransform inverse() const;
  Mat4 matrix() const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

// Rotation by `angle` radians about a (normalised) axis; zero translation.
RigidTransform axis_angle(const Vec3& axis, double angle, const Vec3& translation = Vec3::Zero());

// Result applies t2 first, then t1.
RigidTransform compose(const RigidTransform& t1, const RigidTransform& t2);

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t);

// Dense descriptors produced by the network. `responses` is the non-negative
// head output D, `descriptors` the row-wise L2-normalised F. A descriptor row
// is zero only when its response row is zero.
struct FeatureMap {
  Matrix responses;
  Matrix descriptors;

  std::size_t size() const { return static_cast<std::size_t>(responses.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(responses.cols()); }
};

// Builds a FeatureMap from raw responses. Throws on negative or non-finite
// entries.
FeatureMap make_feature_map(Matrix responses);

struct ScoreMap {
  Eigen::VectorXd scores;  // s_i
  Matrix saliency;         // α, N×c
  Matrix channel_max;      // β, N×c

  std::size_t size() const { return static_cast<std::size_t>(scores.size()); }
};

struct Correspondence {
  std::size_t p = 0;  // index into cloud P
  std::size_t q = 0;  // index into cloud Q
  double distance = 0.0;  // descriptor-space Euclidean distance

  friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

using CorrespondenceSet = std::vector<Correspondence>;

// Mixes a base seed with a list of stream ids (splitmix64 finalizer per step)
// so independent components can draw from unrelated streams.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> ids);

}  // namespace kpfeat
