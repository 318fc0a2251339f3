#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "kpfeat/kpconv.hpp"
#include "oracles.hpp"

using namespace kpfeat;

namespace {

ConvLayer make_layer(std::size_t k, std::size_t din, std::size_t dout, std::uint64_t seed,
                     double extent = 0.075) {
  ConvLayer layer;
  layer.kernel = kernel_dispositions(k, extent);
  layer.radius = extent;
  layer.grid = extent / kRadiusScale;
  layer.weights = oracle::random_matrix(k * din, dout, seed, -1.0, 1.0);
  layer.affine = ChannelAffine::identity(dout);
  return layer;
}

std::vector<Vec3> ball_points(std::size_t n, double r, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-r, r);
  std::vector<Vec3> out;
  while (out.size() < n) {
    const Vec3 p(u(rng), u(rng), u(rng));
    if (p.norm() <= r) out.push_back(p);
  }
  return out;
}

PointCloud cloud_of(std::size_t n, std::uint64_t seed) {
  // points on a few planes so strided stages stay populated
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = u(rng), b = u(rng);
    switch (i % 3) {
      case 0: pts.emplace_back(a, b, 0.0); break;
      case 1: pts.emplace_back(a, 0.0, b); break;
      default: pts.emplace_back(0.0, a, b + 0.2 * a * a); break;
    }
  }
  return PointCloud(pts);
}

}  // namespace

TEST(KernelDispositions, SinglePointAtOrigin) {
  const auto k = kernel_dispositions(1, 0.1);
  ASSERT_EQ(k.size(), 1u);
  EXPECT_EQ(k.points[0], Vec3::Zero());
}

TEST(KernelDispositions, ShippedFifteenPointTable) {
  const double extent = 0.2;
  const auto k = kernel_dispositions(15, extent);
  ASSERT_EQ(k.size(), 15u);
  EXPECT_EQ(k.points[0], Vec3::Zero());
  EXPECT_DOUBLE_EQ(k.sigma, extent / kSigmaDivisor);
  double min_gap = INFINITY;
  for (std::size_t i = 0; i < k.size(); ++i) {
    EXPECT_LE(k.points[i].norm(), extent * (1 + 1e-12));
    for (std::size_t j = i + 1; j < k.size(); ++j) {
      min_gap = std::min(min_gap, (k.points[i] - k.points[j]).norm());
    }
  }
  EXPECT_GT(min_gap, 0.5 * extent / 2);
}

TEST(KernelDispositions, UnsupportedCount) {
  EXPECT_THROW(kernel_dispositions(7, 1.0), std::invalid_argument);
  EXPECT_THROW(kernel_dispositions(0, 1.0), std::invalid_argument);
}

TEST(Correlation, LinearProfile) {
  const Vec3 kp(0.1, 0.2, 0.3);
  EXPECT_DOUBLE_EQ(correlation(kp, kp, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(correlation(kp + Vec3(0.5, 0, 0), kp, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(correlation(kp + Vec3(0, 0.25, 0), kp, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(correlation(kp + Vec3(0, 0, 2), kp, 0.5), 0.0);
}

TEST(KpconvApply, MatchesDirectSum) {
  const auto layer = make_layer(15, 4, 6, 3);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto nb = ball_points(12, layer.radius, 100 + s);
    const Matrix f = oracle::random_matrix(nb.size(), 4, 200 + s);
    for (bool norm : {false, true}) {
      const auto got = kpconv_apply(Vec3::Zero(), nb, f, layer, norm);
      const auto want = oracle::kpconv(Vec3::Zero(), nb, f, layer, norm);
      EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(KpconvApply, NormalizedIsSumOverCount) {
  const auto layer = make_layer(15, 3, 5, 4);
  const Vec3 center(1, 2, 3);
  auto nb = ball_points(4, layer.radius, 9);
  for (auto& p : nb) p += center;
  const Matrix f = oracle::random_matrix(4, 3, 10);
  const auto sum = kpconv_apply(center, nb, f, layer, false);
  const auto mean = kpconv_apply(center, nb, f, layer, true);
  EXPECT_LT((mean - sum / 4.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(KpconvApply, DuplicationInvariance) {
  const auto layer = make_layer(15, 2, 3, 5);
  const auto nb = ball_points(7, layer.radius, 6);
  const Matrix f = oracle::random_matrix(7, 2, 7);
  const auto base = kpconv_apply(Vec3::Zero(), nb, f, layer, true);
  for (std::size_t m : {2u, 3u, 5u}) {
    std::vector<Vec3> dup;
    Matrix fd(static_cast<Eigen::Index>(7 * m), 2);
    for (std::size_t c = 0; c < m; ++c) {
      for (std::size_t i = 0; i < 7; ++i) {
        fd.row(static_cast<Eigen::Index>(dup.size())) = f.row(static_cast<Eigen::Index>(i));
        dup.push_back(nb[i]);
      }
    }
    EXPECT_LT((kpconv_apply(Vec3::Zero(), dup, fd, layer, true) - base).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(KpconvApply, SingleNeighborOnKernelPoint) {
  // one kernel point at the origin and the rest far beyond sigma
  ConvLayer layer;
  layer.kernel.points = {Vec3::Zero(), Vec3(10, 0, 0), Vec3(0, 10, 0)};
  layer.kernel.extent = 10.0;
  layer.kernel.sigma = 1.0;
  layer.radius = 10.0;
  const std::size_t d = 3;
  layer.weights = Matrix::Zero(3 * d, d);
  layer.weights.topRows(d).setIdentity();
  layer.weights.middleRows(d, d).setConstant(7.0);
  layer.weights.bottomRows(d).setConstant(-7.0);
  const Vec3 center(0.5, 0.5, 0.5);
  const std::vector<Vec3> nb{center};
  Matrix f(1, 3);
  f << 0.25, -1.5, 2.0;
  const auto out = kpconv_apply(center, nb, f, layer, true);
  EXPECT_LT((out - f.row(0).transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(KpconvApply, EmptyNeighborhoodIsZero) {
  const auto layer = make_layer(15, 2, 4, 1);
  const std::vector<Vec3> none;
  const auto out = kpconv_apply(Vec3::Zero(), none, Matrix(0, 2), layer, true);
  EXPECT_EQ(out, Eigen::VectorXd::Zero(4));
}

TEST(KpconvApply, DimensionMismatch) {
  const auto layer = make_layer(15, 2, 4, 1);
  const std::vector<Vec3> nb{Vec3::Zero()};
  EXPECT_THROW(kpconv_apply(Vec3::Zero(), nb, Matrix::Ones(1, 3), layer, true), std::invalid_argument);
}

TEST(LayerForward, ZeroInputZeroOutput) {
  const auto layer = make_layer(15, 3, 4, 2);
  const auto pts = oracle::random_points(30, 1, 0, 0.2);
  NeighborhoodIndex index(pts);
  const auto nb = radius_neighbors(index, std::span<const Vec3>(pts), layer.radius);
  const Matrix out = layer_forward(pts, pts, nb, Matrix::Zero(30, 3), layer);
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LayerForward, MatchesComposition) {
  auto layer = make_layer(15, 3, 5, 8);
  layer.affine.scale = oracle::random_matrix(1, 5, 12, 0.5, 2.0).row(0).transpose();
  layer.affine.shift = oracle::random_matrix(1, 5, 13, -0.3, 0.3).row(0).transpose();
  const auto pts = oracle::random_points(50, 14, 0, 0.25);
  const Matrix f = oracle::random_matrix(50, 3, 15, -1, 1);
  const auto nb = oracle::all_radius(pts, layer.radius);
  const Matrix out = layer_forward(pts, pts, nb, f, layer);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<Vec3> np;
    Matrix nf(static_cast<Eigen::Index>(nb[i].size()), 3);
    for (std::size_t j : nb[i]) {
      nf.row(static_cast<Eigen::Index>(np.size())) = f.row(static_cast<Eigen::Index>(j));
      np.push_back(pts[j]);
    }
    Eigen::VectorXd want = oracle::kpconv(pts[i], np, nf, layer, true);
    want = (want.cwiseProduct(layer.affine.scale) + layer.affine.shift).cwiseMax(0.0);
    EXPECT_LT((out.row(static_cast<Eigen::Index>(i)).transpose() - want).cwiseAbs().maxCoeff(), 1e-9);
  }
  EXPECT_GE(out.minCoeff(), 0.0);
}

TEST(NetworkForward, UnitDescriptorsAndShape) {
  const auto model = random_model({}, 1);
  const auto cloud = cloud_of(400, 2);
  const auto f = network_forward(model, cloud);
  ASSERT_EQ(f.size(), cloud.size());
  ASSERT_EQ(f.channels(), kDescriptorDim);
  EXPECT_GE(f.responses.minCoeff(), 0.0);
  for (Eigen::Index i = 0; i < f.descriptors.rows(); ++i) {
    const double n = f.descriptors.row(i).norm();
    if (f.responses.row(i).norm() == 0.0) {
      EXPECT_EQ(n, 0.0);
    } else {
      EXPECT_NEAR(n, 1.0, 1e-6);
    }
  }
}

TEST(NetworkForward, TranslationInvariant) {
  const auto model = random_model({}, 7);
  const auto cloud = cloud_of(300, 3);
  const auto moved = apply_transform(cloud, RigidTransform(Mat3::Identity(), Vec3(10, -7, 3)));
  const auto a = network_forward(model, cloud);
  const auto b = network_forward(model, moved);
  EXPECT_LT((a.descriptors - b.descriptors).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NetworkForward, PermutationEquivariant) {
  const auto model = random_model({}, 9);
  const auto cloud = cloud_of(100, 4);
  std::vector<std::size_t> perm(cloud.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
  const auto a = network_forward(model, cloud);
  const auto b = network_forward(model, cloud.select(perm));
  for (std::size_t i = 0; i < perm.size(); ++i) {
    EXPECT_EQ(b.responses.row(static_cast<Eigen::Index>(i)),
              a.responses.row(static_cast<Eigen::Index>(perm[i])));
  }
}

TEST(Weights, RoundTrip) {
  const auto model = random_model({}, 21);
  const auto path = std::filesystem::temp_directory_path() / "kpfeat_test_weights.kpw";
  save_weights(model, path);
  const auto loaded = load_weights(path);
  EXPECT_EQ(serialize_model(loaded), serialize_model(model));
  const auto cloud = cloud_of(200, 6);
  EXPECT_EQ(network_forward(model, cloud).responses, network_forward(loaded, cloud).responses);
  std::filesystem::remove(path);
}

TEST(Weights, DistinctErrors) {
  const auto bytes = serialize_model(random_model({0.05, 1, true}, 2));
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2));
  EXPECT_THROW(deserialize_model(cut), TruncatedFileError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_model(bad), BadMagicError);
  auto ver = bytes;
  ver[8] = static_cast<std::uint8_t>(kWeightFileVersion + 1);
  EXPECT_THROW(deserialize_model(ver), VersionMismatchError);
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(deserialize_model(longer), WeightFileError);
}

TEST(Weights, ShapeMismatch) {
  auto model = random_model({}, 3);
  model.head.weights = Matrix::Zero(5, kDescriptorDim);
  EXPECT_THROW(model.validate(), ShapeMismatchError);
}
