#include "kpfeat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "kpfeat/neighborhood.hpp"

namespace kpfeat {

InlierRatio inlier_ratio(const CorrespondenceSet& matches, const PointCloud& cloud_p,
                         const PointCloud& cloud_q, const RigidTransform& t_gt, double tau1) {
  if (matches.empty()) return {0.0, true};
  std::size_t inliers = 0;
  for (const auto& m : matches) {
    if (m.p >= cloud_p.size() || m.q >= cloud_q.size()) {
      throw std::out_of_range("correspondence index out of range");
    }
    if ((cloud_p[m.p] - t_gt.apply(cloud_q[m.q])).norm() < tau1) ++inliers;
  }
  return {static_cast<double>(inliers) / static_cast<double>(matches.size()), false};
}

RecallSummary feature_matching_recall(std::span<const PairEvaluation> pairs, double tau2,
                                      Aggregation aggregation) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_scene;  // matched, total
  std::size_t matched = 0, total = 0;
  for (const auto& pair : pairs) {
    if (!pair.in_evaluation_set) continue;
    const bool ok = pair.inlier_ratio > tau2;
    auto& [m, t] = per_scene[pair.scene];
    m += ok ? 1 : 0;
    ++t;
    matched += ok ? 1 : 0;
    ++total;
  }
  if (total == 0) throw std::invalid_argument("no pairs in the evaluation set");

  RecallSummary summary;
  summary.pair_count = total;
  double sum = 0.0;
  for (const auto& [scene, counts] : per_scene) {
    const double r = static_cast<double>(counts.first) / static_cast<double>(counts.second);
    summary.scene_recalls[scene] = r;
    sum += r;
  }
  const double scenes = static_cast<double>(per_scene.size());
  const double scene_mean = sum / scenes;
  double var = 0.0;
  for (const auto& [scene, r] : summary.scene_recalls) var += (r - scene_mean) * (r - scene_mean);
  summary.std_dev = std::sqrt(var / scenes);
  summary.recall = aggregation == Aggregation::kScene
                       ? scene_mean
                       : static_cast<double>(matched) / static_cast<double>(total);
  return summary;
}

double correspondence_rmse(std::span<const std::pair<Vec3, Vec3>> gt_correspondences,
                           const RigidTransform& t_est) {
  if (gt_correspondences.empty()) throw std::invalid_argument("empty ground-truth correspondence set");
  double sse = 0.0;
  for (const auto& [p, q] : gt_correspondences) sse += (p - t_est.apply(q)).squaredNorm();
  return std::sqrt(sse / static_cast<double>(gt_correspondences.size()));
}

double registration_recall(std::span<const RegistrationCase> cases, double rmse_threshold) {
  if (cases.empty()) throw std::invalid_argument("no registration cases");
  std::size_t ok = 0;
  for (const auto& c : cases) {
    if (correspondence_rmse(c.gt_correspondences, c.estimate) < rmse_threshold) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(cases.size());
}

PoseError rte_rre(const RigidTransform& t_est, const RigidTransform& t_gt) {
  const RigidTransform delta = compose(t_gt.inverse(), t_est);
  const Mat3& r = delta.rotation();
  // Same angle as arccos((tr - 1) / 2), but well conditioned near 0° and 180°.
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double s = std::min(1.0, (r - r.transpose()).norm() / std::sqrt(8.0));
  return {delta.translation().norm(), std::atan2(s, c) * 180.0 / std::numbers::pi};
}

double success_rate(std::span<const PoseError> errors, double rte_max, double rre_max) {
  if (errors.empty()) throw std::invalid_argument("no pose errors");
  std::size_t ok = 0;
  for (const auto& e : errors) {
    if (e.rte < rte_max && e.rre < rre_max) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(errors.size());
}

namespace {

double one_way_repeatability(std::span<const Vec3> from, std::span<const Vec3> to, double threshold) {
  const NeighborhoodIndex index(to);
  std::size_t repeatable = 0;
  for (const auto& p : from) {
    if (index.nearest(p).distance < threshold) ++repeatable;
  }
  return static_cast<double>(repeatable) / static_cast<double>(from.size());
}

}  // namespace

double relative_repeatability(const KeypointSet& kp_p, const KeypointSet& kp_q,
                              const PointCloud& cloud_p, const PointCloud& cloud_q,
                              const RigidTransform& t_gt, double threshold,
                              RepeatabilityMode mode) {
  if (kp_p.indices.empty() || kp_q.indices.empty()) {
    throw std::invalid_argument("repeatability needs non-empty keypoint sets");
  }
  std::vector<Vec3> ps, qs;
  ps.reserve(kp_p.size());
  qs.reserve(kp_q.size());
  for (std::size_t i : kp_p.indices) ps.push_back(cloud_p.points().at(i));
  for (std::size_t j : kp_q.indices) qs.push_back(t_gt.apply(cloud_q.points().at(j)));
  const double forward = one_way_repeatability(ps, qs, threshold);
  if (mode == RepeatabilityMode::kOneWay) return forward;
  return 0.5 * (forward + one_way_repeatability(qs, ps, threshold));
}

}  // namespace kpfeat
