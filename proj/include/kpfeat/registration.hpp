#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "kpfeat/core.hpp"

namespace kpfeat {

class DegenerateConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Pairs (i, j) where descriptor j is i's nearest neighbor among the selected
// Q descriptors and i is j's nearest among the selected P descriptors.
// Indices refer to the full clouds; ties go to the lower index. Ordered by i.
CorrespondenceSet mutual_nn_matches(const FeatureMap& feat_p, const FeatureMap& feat_q,
                                    std::span<const std::size_t> sel_p,
                                    std::span<const std::size_t> sel_q);

// Least-squares rigid fit dst ≈ R·src + t (Kabsch with reflection
// correction). Needs at least 3 pairs spanning more than a line.
RigidTransform estimate_rigid(std::span<const Vec3> src, std::span<const Vec3> dst);

struct RansacOptions {
  std::size_t max_iterations = 50000;
  double inlier_threshold = 0.10;  // meters
  std::size_t sample_size = 3;
  std::uint64_t seed = 0;
  // Stop once the best inlier ratio guarantees `confidence` of having drawn
  // an all-inlier sample. Off by default: the evaluation protocol runs a
  // fixed iteration budget.
  bool adaptive = false;
  double confidence = 0.999;
};

struct RegistrationResult {
  bool success = false;
  RigidTransform transform;       // maps Q into P's frame
  CorrespondenceSet inliers;      // |p_i - T q_j| <= threshold under `transform`
  std::size_t iterations_used = 0;
  double inlier_threshold = 0.0;
};

// Hypotheses are scored by inlier count, ties by lower inlier RMSE, then by
// iteration order. The winner is refit on its inliers. Deterministic for a
// given seed.
RegistrationResult ransac_register(const PointCloud& cloud_p, const PointCloud& cloud_q,
                                   const CorrespondenceSet& matches, const RansacOptions& options);

// Iterations needed so that at least one sample of `sample_size` correct
// correspondences is drawn with probability `confidence`.
std::size_t ransac_iterations_for_confidence(double inlier_ratio, std::size_t sample_size,
                                             double confidence);

// 1 - (1 - w^s)^k
double ransac_success_probability(double inlier_ratio, std::size_t sample_size,
                                  std::size_t iterations);

struct IcpOptions {
  std::size_t max_iterations = 50;
  double convergence_eps = 1e-8;
};

struct IcpResult {
  RigidTransform transform;
  std::size_t iterations = 0;
  bool converged = false;
  // RMS nearest-neighbor distance of the association at each iteration; the
  // alternating fit never lets it increase.
  std::vector<double> rms_history;
};

// Point-to-point ICP refining a transform that maps cloud_q into cloud_p.
IcpResult icp_refine(const PointCloud& cloud_p, const PointCloud& cloud_q,
                     const RigidTransform& initial, const IcpOptions& options = {});

}  // namespace kpfeat
