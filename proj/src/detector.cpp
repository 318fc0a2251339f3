#include "kpfeat/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace kpfeat {

namespace {

void check_neighbors(const Matrix& responses, const NeighborLists& neighbors) {
  if (neighbors.size() != static_cast<std::size_t>(responses.rows())) {
    throw std::invalid_argument("neighbor lists do not match response rows");
  }
  for (const auto& list : neighbors) {
    if (list.empty()) throw std::invalid_argument("empty neighborhood in score computation");
    for (std::size_t j : list) {
      if (j >= neighbors.size()) throw std::out_of_range("neighbor index out of range");
    }
  }
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

Matrix saliency_scores(const Matrix& responses, const NeighborLists& neighbors) {
  check_neighbors(responses, neighbors);
  Matrix alpha(responses.rows(), responses.cols());
  Eigen::RowVectorXd mean(responses.cols());
  for (Eigen::Index i = 0; i < responses.rows(); ++i) {
    const auto& list = neighbors[static_cast<std::size_t>(i)];
    mean.setZero();
    for (std::size_t j : list) mean += responses.row(static_cast<Eigen::Index>(j));
    mean /= static_cast<double>(list.size());
    for (Eigen::Index k = 0; k < responses.cols(); ++k) {
      alpha(i, k) = softplus(responses(i, k) - mean[k]);
    }
  }
  return alpha;
}

Matrix d2_saliency_scores(const Matrix& responses, const NeighborLists& neighbors) {
  check_neighbors(responses, neighbors);
  Matrix alpha(responses.rows(), responses.cols());
  for (Eigen::Index i = 0; i < responses.rows(); ++i) {
    const auto& list = neighbors[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < responses.cols(); ++k) {
      // shift by the neighborhood max so exp cannot overflow
      double top = -INFINITY;
      for (std::size_t j : list) top = std::max(top, responses(static_cast<Eigen::Index>(j), k));
      double denom = 0.0;
      for (std::size_t j : list) denom += std::exp(responses(static_cast<Eigen::Index>(j), k) - top);
      alpha(i, k) = std::exp(responses(i, k) - top) / denom;
    }
  }
  return alpha;
}

Matrix channel_max_scores(const Matrix& responses) {
  if (responses.size() > 0 && responses.minCoeff() < 0.0) {
    throw std::invalid_argument("channel max score needs non-negative responses");
  }
  Matrix beta = Matrix::Zero(responses.rows(), responses.cols());
  for (Eigen::Index i = 0; i < responses.rows(); ++i) {
    const double top = responses.row(i).maxCoeff();
    if (top > 0.0) beta.row(i) = responses.row(i) / top;
  }
  return beta;
}

ScoreMap detection_scores(const Matrix& saliency, const Matrix& channel_max) {
  if (saliency.rows() != channel_max.rows() || saliency.cols() != channel_max.cols()) {
    throw std::invalid_argument("saliency and channel max shapes differ");
  }
  ScoreMap map;
  map.scores = saliency.cwiseProduct(channel_max).rowwise().maxCoeff();
  map.saliency = saliency;
  map.channel_max = channel_max;
  return map;
}

ScoreMap score_responses(const Matrix& responses, const NeighborLists& neighbors) {
  return detection_scores(saliency_scores(responses, neighbors), channel_max_scores(responses));
}

KeypointSet select_keypoints(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) throw std::invalid_argument("keypoint count out of range");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  KeypointSet set;
  set.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  set.scores.reserve(k);
  for (std::size_t i : set.indices) set.scores.push_back(scores[i]);
  return set;
}

KeypointSet select_keypoints(const ScoreMap& score_map, std::size_t k) {
  return select_keypoints(std::span<const double>(score_map.scores.data(), score_map.size()), k);
}

std::vector<std::size_t> hard_keypoints(const Matrix& responses, const NeighborLists& neighbors) {
  check_neighbors(responses, neighbors);
  std::vector<std::size_t> keypoints;
  for (Eigen::Index i = 0; i < responses.rows(); ++i) {
    Eigen::Index channel = 0;
    for (Eigen::Index t = 1; t < responses.cols(); ++t) {
      if (responses(i, t) > responses(i, channel)) channel = t;
    }
    std::size_t best = neighbors[static_cast<std::size_t>(i)].front();
    for (std::size_t j : neighbors[static_cast<std::size_t>(i)]) {
      const double v = responses(static_cast<Eigen::Index>(j), channel);
      const double b = responses(static_cast<Eigen::Index>(best), channel);
      if (v > b || (v == b && j < best)) best = j;
    }
    if (best == static_cast<std::size_t>(i)) keypoints.push_back(best);
  }
  return keypoints;
}

}  // namespace kpfeat
