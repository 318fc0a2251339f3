#include "kpfeat/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "kpfeat/neighborhood.hpp"

namespace kpfeat {

namespace {

constexpr double kDegenerateRatio = 1e-12;

// Exact squared Euclidean distance between two descriptor rows.
double row_d2(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  return (a.row(static_cast<Eigen::Index>(i)) - b.row(static_cast<Eigen::Index>(j))).squaredNorm();
}

constexpr Eigen::Index kBlockRows = 512;

// For every row of `a` (restricted to `rows`) the nearest row of `b`
// (restricted to `cols`) under exact squared distance, ties to the lower
// index. Distances are screened blockwise with |x|² + |y|² - 2x·y and every
// candidate within a rounding margin of the screened minimum is re-evaluated
// exactly, so the result equals a direct scan.
std::vector<std::size_t> nearest_rows(const Matrix& a, std::span<const std::size_t> rows,
                                      const Matrix& b, std::span<const std::size_t> cols) {
  const auto nc = static_cast<Eigen::Index>(cols.size());
  Matrix bs(nc, b.cols());
  Eigen::VectorXd bn(nc);
  double max_norm = 0.0;
  for (Eigen::Index j = 0; j < nc; ++j) {
    bs.row(j) = b.row(static_cast<Eigen::Index>(cols[static_cast<std::size_t>(j)]));
    bn[j] = bs.row(j).squaredNorm();
    max_norm = std::max(max_norm, bn[j]);
  }
  std::vector<std::size_t> out(rows.size());
  for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(rows.size()); start += kBlockRows) {
    const Eigen::Index count = std::min<Eigen::Index>(kBlockRows, static_cast<Eigen::Index>(rows.size()) - start);
    Matrix as(count, a.cols());
    for (Eigen::Index i = 0; i < count; ++i) {
      as.row(i) = a.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(start + i)]));
    }
    const Matrix dots = as * bs.transpose();
    for (Eigen::Index i = 0; i < count; ++i) {
      const double an = as.row(i).squaredNorm();
      Eigen::RowVectorXd approx = (bn.transpose().array() - 2.0 * dots.row(i).array()).matrix();
      const double margin = 1e-9 * (1.0 + an + max_norm);
      const double cutoff = approx.minCoeff() + margin;
      const std::size_t row = rows[static_cast<std::size_t>(start + i)];
      std::size_t best = 0;
      double best_d2 = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < nc; ++j) {
        if (approx[j] > cutoff) continue;
        const std::size_t col = cols[static_cast<std::size_t>(j)];
        const double d2 = row_d2(a, row, b, col);
        if (d2 < best_d2 || (d2 == best_d2 && col < best)) {
          best_d2 = d2;
          best = col;
        }
      }
      out[static_cast<std::size_t>(start + i)] = best;
    }
  }
  return out;
}

bool spans_plane(std::span<const Vec3> pts, const Vec3& centroid) {
  Mat3 scatter = Mat3::Zero();
  for (const auto& p : pts) scatter += (p - centroid) * (p - centroid).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter, Eigen::EigenvaluesOnly);
  const Vec3 ev = eig.eigenvalues();  // ascending
  return ev[2] > 0.0 && ev[1] > kDegenerateRatio * ev[2];
}

std::optional<RigidTransform> try_estimate_rigid(std::span<const Vec3> src,
                                                 std::span<const Vec3> dst) {
  const double n = static_cast<double>(src.size());
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= n;
  cd /= n;
  if (!spans_plane(src, cs) || !spans_plane(dst, cd)) return std::nullopt;

  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  Mat3 r = v * d * u.transpose();
  return RigidTransform(r, cd - r * cs);
}

struct Score {
  std::size_t count = 0;
  double sse = 0.0;
};

Score score_hypothesis(const RigidTransform& t, std::span<const Vec3> ps, std::span<const Vec3> qs,
                       double threshold2) {
  Score s;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double d2 = (ps[i] - t.apply(qs[i])).squaredNorm();
    if (d2 <= threshold2) {
      ++s.count;
      s.sse += d2;
    }
  }
  return s;
}

bool better(const Score& a, const Score& b) {
  if (a.count != b.count) return a.count > b.count;
  if (a.count == 0) return false;
  // lower mean squared error; cross-multiplied to stay exact for equal counts
  return a.sse * static_cast<double>(b.count) < b.sse * static_cast<double>(a.count);
}

}  // namespace

CorrespondenceSet mutual_nn_matches(const FeatureMap& feat_p, const FeatureMap& feat_q,
                                    std::span<const std::size_t> sel_p,
                                    std::span<const std::size_t> sel_q) {
  if (sel_p.empty() || sel_q.empty()) throw std::invalid_argument("empty descriptor selection");
  if (feat_p.channels() != feat_q.channels()) {
    throw std::invalid_argument("descriptor dimensions differ");
  }
  for (std::size_t i : sel_p) {
    if (i >= feat_p.size()) throw std::out_of_range("selection index out of range for P");
  }
  for (std::size_t j : sel_q) {
    if (j >= feat_q.size()) throw std::out_of_range("selection index out of range for Q");
  }
  // Ties resolve to the lower point index, independent of selection order.
  std::vector<std::size_t> ps(sel_p.begin(), sel_p.end());
  std::vector<std::size_t> qs(sel_q.begin(), sel_q.end());
  std::sort(ps.begin(), ps.end());
  ps.erase(std::unique(ps.begin(), ps.end()), ps.end());
  std::sort(qs.begin(), qs.end());
  qs.erase(std::unique(qs.begin(), qs.end()), qs.end());

  const Matrix& fp = feat_p.descriptors;
  const Matrix& fq = feat_q.descriptors;
  const auto forward = nearest_rows(fp, ps, fq, qs);
  const auto backward = nearest_rows(fq, qs, fp, ps);
  std::vector<std::size_t> q_slot(feat_q.size());
  for (std::size_t k = 0; k < qs.size(); ++k) q_slot[qs[k]] = k;

  CorrespondenceSet matches;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const std::size_t j = forward[k];
    if (backward[q_slot[j]] == ps[k]) matches.push_back({ps[k], j, std::sqrt(row_d2(fp, ps[k], fq, j))});
  }
  return matches;
}

RigidTransform estimate_rigid(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) throw std::invalid_argument("point set sizes differ");
  if (src.size() < 3) throw std::invalid_argument("rigid estimation needs at least 3 pairs");
  auto t = try_estimate_rigid(src, dst);
  if (!t) throw DegenerateConfigurationError("collinear or coincident point configuration");
  return *t;
}

RegistrationResult ransac_register(const PointCloud& cloud_p, const PointCloud& cloud_q,
                                   const CorrespondenceSet& matches, const RansacOptions& options) {
  if (options.sample_size < 3) throw std::invalid_argument("sample size must be at least 3");
  if (matches.size() < options.sample_size) {
    throw std::invalid_argument("too few correspondences for RANSAC");
  }
  if (!(options.inlier_threshold > 0.0)) throw std::invalid_argument("inlier threshold must be positive");

  std::vector<Vec3> ps, qs;
  ps.reserve(matches.size());
  qs.reserve(matches.size());
  for (const auto& m : matches) {
    if (m.p >= cloud_p.size() || m.q >= cloud_q.size()) {
      throw std::out_of_range("correspondence index out of range");
    }
    ps.push_back(cloud_p[m.p]);
    qs.push_back(cloud_q[m.q]);
  }
  const double threshold2 = options.inlier_threshold * options.inlier_threshold;

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, matches.size() - 1);
  std::vector<std::size_t> sample(options.sample_size);
  std::vector<Vec3> sp(options.sample_size), sq(options.sample_size);

  RegistrationResult result;
  result.inlier_threshold = options.inlier_threshold;
  std::optional<RigidTransform> best;
  Score best_score;
  std::size_t limit = options.max_iterations;
  std::size_t it = 0;
  for (; it < limit; ++it) {
    for (std::size_t k = 0; k < sample.size(); ++k) {
      std::size_t idx;
      do {
        idx = pick(rng);
      } while (std::find(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(k), idx) !=
               sample.begin() + static_cast<std::ptrdiff_t>(k));
      sample[k] = idx;
      sp[k] = ps[idx];
      sq[k] = qs[idx];
    }
    auto hypothesis = try_estimate_rigid(sq, sp);
    if (!hypothesis) continue;
    const Score s = score_hypothesis(*hypothesis, ps, qs, threshold2);
    if (s.count >= options.sample_size && better(s, best_score)) {
      best_score = s;
      best = hypothesis;
      if (options.adaptive) {
        const double ratio = static_cast<double>(s.count) / static_cast<double>(matches.size());
        limit = std::min(options.max_iterations,
                         ransac_iterations_for_confidence(ratio, options.sample_size,
                                                          options.confidence));
      }
    }
  }
  result.iterations_used = it;
  if (!best) return result;

  std::vector<Vec3> in_p, in_q;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if ((ps[i] - best->apply(qs[i])).squaredNorm() <= threshold2) {
      in_p.push_back(ps[i]);
      in_q.push_back(qs[i]);
    }
  }
  RigidTransform chosen = *best;
  if (auto refit = try_estimate_rigid(in_q, in_p)) {
    if (score_hypothesis(*refit, ps, qs, threshold2).count >= best_score.count) chosen = *refit;
  }

  result.success = true;
  result.transform = chosen;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if ((ps[i] - chosen.apply(qs[i])).squaredNorm() <= threshold2) {
      result.inliers.push_back(matches[i]);
    }
  }
  return result;
}

std::size_t ransac_iterations_for_confidence(double inlier_ratio, std::size_t sample_size,
                                             double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw std::invalid_argument("confidence must be in (0, 1)");
  if (inlier_ratio >= 1.0) return 1;
  const double good = std::pow(inlier_ratio, static_cast<double>(sample_size));
  if (!(good > 0.0)) return std::numeric_limits<std::size_t>::max();
  const double k = std::log(1.0 - confidence) / std::log1p(-good);
  return static_cast<std::size_t>(std::ceil(k));
}

double ransac_success_probability(double inlier_ratio, std::size_t sample_size,
                                  std::size_t iterations) {
  const double good = std::pow(inlier_ratio, static_cast<double>(sample_size));
  return -std::expm1(static_cast<double>(iterations) * std::log1p(-good));
}

IcpResult icp_refine(const PointCloud& cloud_p, const PointCloud& cloud_q,
                     const RigidTransform& initial, const IcpOptions& options) {
  require_non_empty(cloud_p, "icp_refine");
  require_non_empty(cloud_q, "icp_refine");
  const NeighborhoodIndex index(cloud_p.view());

  IcpResult result;
  result.transform = initial;
  std::vector<Vec3> matched(cloud_q.size());
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    double sse = 0.0;
    for (std::size_t i = 0; i < cloud_q.size(); ++i) {
      const auto nn = index.nearest(result.transform.apply(cloud_q[i]));
      matched[i] = cloud_p[nn.index];
      sse += nn.distance * nn.distance;
    }
    result.rms_history.push_back(std::sqrt(sse / static_cast<double>(cloud_q.size())));
    ++result.iterations;

    const RigidTransform next = estimate_rigid(cloud_q.view(), matched);
    const Mat3 dr = next.rotation() * result.transform.rotation().transpose();
    const double angle = std::atan2((dr - dr.transpose()).norm() / std::sqrt(8.0), (dr.trace() - 1.0) / 2.0);
    const double delta = std::abs(angle) + (next.translation() - result.transform.translation()).norm();
    result.transform = next;
    if (delta < options.convergence_eps) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace kpfeat
