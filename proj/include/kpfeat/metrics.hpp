#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kpfeat/core.hpp"
#include "kpfeat/detector.hpp"

namespace kpfeat {

// Protocol constants for 3DMatch-style and KITTI-style evaluation.
inline constexpr double kInlierDistance = 0.10;        // τ1, meters
inline constexpr double kInlierRatioThreshold = 0.05;  // τ2
inline constexpr double kRegistrationRmse = 0.2;       // meters
inline constexpr double kSuccessRte = 2.0;             // meters
inline constexpr double kSuccessRre = 5.0;             // degrees
inline constexpr double kMinOverlap = 0.30;

struct InlierRatio {
  double value = 0.0;
  bool empty_matches = false;  // set when there were no matches (value is 0)
};

// Fraction of matches with |p_i - T_gt q_j| < τ1 (strict).
InlierRatio inlier_ratio(const CorrespondenceSet& matches, const PointCloud& cloud_p,
                         const PointCloud& cloud_q, const RigidTransform& t_gt, double tau1);

struct PairEvaluation {
  std::string pair_id;
  std::string scene;
  bool in_evaluation_set = true;  // overlap above the minimum
  double inlier_ratio = 0.0;
  bool matched = false;     // inlier ratio > τ2
  double rmse = 0.0;        // over ground-truth correspondences, estimated pose
  double rte = 0.0;         // meters
  double rre = 0.0;         // degrees
  double repeatability = 0.0;
};

enum class Aggregation { kScene, kPair };

struct RecallSummary {
  double recall = 0.0;
  double std_dev = 0.0;  // population std of scene-level recalls
  std::map<std::string, double> scene_recalls;
  std::size_t pair_count = 0;
};

// Pairs outside the evaluation set are skipped. With Aggregation::kScene the
// recall is the mean of per-scene recalls; kPair averages all pairs directly.
// Throws when no pair is in the evaluation set.
RecallSummary feature_matching_recall(std::span<const PairEvaluation> pairs, double tau2,
                                      Aggregation aggregation = Aggregation::kScene);

// sqrt(mean |p* - T q*|²)
double correspondence_rmse(std::span<const std::pair<Vec3, Vec3>> gt_correspondences,
                           const RigidTransform& t_est);

struct RegistrationCase {
  std::vector<std::pair<Vec3, Vec3>> gt_correspondences;  // (p*, q*)
  RigidTransform estimate;
};

// Fraction of cases with RMSE strictly below `rmse_threshold`.
double registration_recall(std::span<const RegistrationCase> cases,
                           double rmse_threshold = kRegistrationRmse);

struct PoseError {
  double rte = 0.0;  // meters
  double rre = 0.0;  // degrees, in [0, 180]
};

// Errors of ΔT = T_gt⁻¹ · T_est.
PoseError rte_rre(const RigidTransform& t_est, const RigidTransform& t_gt);

// Fraction of pairs with rte < rte_max and rre < rre_max.
double success_rate(std::span<const PoseError> errors, double rte_max = kSuccessRte,
                    double rre_max = kSuccessRre);

enum class RepeatabilityMode { kOneWay, kSymmetric };

// Fraction of P keypoints whose nearest Q keypoint, mapped into P's frame by
// t_gt, lies strictly closer than `threshold`. Symmetric mode averages the
// P→Q and Q→P fractions.
double relative_repeatability(const KeypointSet& kp_p, const KeypointSet& kp_q,
                              const PointCloud& cloud_p, const PointCloud& cloud_q,
                              const RigidTransform& t_gt, double threshold,
                              RepeatabilityMode mode = RepeatabilityMode::kOneWay);

}  // namespace kpfeat
