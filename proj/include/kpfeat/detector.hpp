#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kpfeat/core.hpp"
#include "kpfeat/neighborhood.hpp"

namespace kpfeat {

// Keypoints in descending score order (ties by lower point index).
struct KeypointSet {
  std::vector<std::size_t> indices;
  std::vector<double> scores;

  std::size_t size() const { return indices.size(); }
};

// Density-invariant saliency: α_i^k = softplus(D_i^k - mean_{j∈N_i} D_j^k).
// Every neighbor list must be non-empty (self-queries include the point).
Matrix saliency_scores(const Matrix& responses, const NeighborLists& neighbors);

// Softmax-style local-max baseline: α_i^k = exp(D_i^k) / Σ_{j∈N_i} exp(D_j^k).
// Depends on neighborhood size; kept for the density ablation.
Matrix d2_saliency_scores(const Matrix& responses, const NeighborLists& neighbors);

// β_i^k = D_i^k / max_t D_i^t; all-zero rows give all-zero β.
Matrix channel_max_scores(const Matrix& responses);

// s_i = max_k α_i^k β_i^k.
ScoreMap detection_scores(const Matrix& saliency, const Matrix& channel_max);

// Convenience: saliency + channel max + detection score from raw responses.
ScoreMap score_responses(const Matrix& responses, const NeighborLists& neighbors);

KeypointSet select_keypoints(const ScoreMap& score_map, std::size_t k);
KeypointSet select_keypoints(std::span<const double> scores, std::size_t k);

// Points that are the spatial maximum of their own preeminent channel within
// their neighborhood. Both argmaxes break ties by lowest index. Ascending.
std::vector<std::size_t> hard_keypoints(const Matrix& responses, const NeighborLists& neighbors);

}  // namespace kpfeat
