#include "kpfeat/core.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Geometry>
#include <Eigen/SVD>

namespace kpfeat {

namespace {

void check_finite(const std::vector<Vec3>& points) {
  for (const auto& p : points) {
    if (!p.allFinite()) throw std::invalid_argument("point cloud contains non-finite coordinates");
  }
}

double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

}  // namespace

PointCloud::PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
  check_finite(points_);
}

PointCloud::PointCloud(std::vector<Vec3> points, Attributes attributes)
    : points_(std::move(points)), attributes_(std::move(attributes)) {
  check_finite(points_);
  for (const auto& [name, values] : attributes_) {
    if (values.size() != points_.size()) {
      throw std::invalid_argument("attribute '" + name + "' length does not match point count");
    }
  }
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
  std::vector<Vec3> pts;
  pts.reserve(indices.size());
  Attributes attrs;
  for (const auto& [name, values] : attributes_) attrs[name].reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= points_.size()) throw std::out_of_range("point index out of range");
    pts.push_back(points_[i]);
    for (const auto& [name, values] : attributes_) attrs[name].push_back(values[i]);
  }
  return PointCloud(std::move(pts), std::move(attrs));
}

void require_non_empty(const PointCloud& cloud, const char* what) {
  if (cloud.empty()) throw std::invalid_argument(std::string(what) + ": point cloud is empty");
}

RigidTransform::RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation_.allFinite() || !translation_.allFinite()) {
    throw std::invalid_argument("rigid transform has non-finite entries");
  }
  if (orthonormality_error(rotation_) > kTolerance) {
    throw std::invalid_argument("rotation is not orthonormal");
  }
  if (std::abs(rotation_.determinant() - 1.0) > kTolerance) {
    throw std::invalid_argument("rotation determinant is not +1");
  }
}

RigidTransform RigidTransform::nearest(const Mat3& rotation, const Vec3& translation,
                                       double tolerance) {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw std::invalid_argument("rigid transform has non-finite entries");
  }
  if (orthonormality_error(rotation) > tolerance ||
      std::abs(rotation.determinant() - 1.0) > tolerance) {
    throw std::invalid_argument("matrix is not a rigid transform within tolerance");
  }
  Eigen::JacobiSVD<Mat3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 projected = svd.matrixU() * svd.matrixV().transpose();
  return RigidTransform(projected, translation);
}

RigidTransform RigidTransform::inverse() const {
  Mat3 rt = rotation_.transpose();
  return RigidTransform(rt, -(rt * translation_));
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

RigidTransform axis_angle(const Vec3& axis, double angle, const Vec3& translation) {
  if (axis.norm() == 0.0) throw std::invalid_argument("rotation axis is zero");
  Mat3 r = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  return RigidTransform(r, translation);
}

RigidTransform compose(const RigidTransform& t1, const RigidTransform& t2) {
  return RigidTransform(t1.rotation() * t2.rotation(),
                        t1.rotation() * t2.translation() + t1.translation());
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points()) out.push_back(t.apply(p));
  return PointCloud(std::move(out), cloud.attributes());
}

FeatureMap make_feature_map(Matrix responses) {
  if (!responses.allFinite()) throw std::invalid_argument("responses contain non-finite values");
  if (responses.size() > 0 && responses.minCoeff() < 0.0) {
    throw std::invalid_argument("responses must be non-negative");
  }
  FeatureMap map;
  map.descriptors = Matrix::Zero(responses.rows(), responses.cols());
  for (Eigen::Index i = 0; i < responses.rows(); ++i) {
    double norm = responses.row(i).norm();
    if (norm > 0.0) map.descriptors.row(i) = responses.row(i) / norm;
  }
  map.responses = std::move(responses);
  return map;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t id : ids) h = splitmix64(h ^ id);
  return h;
}

}  // namespace kpfeat
