#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "kpfeat/kpconv.hpp"

namespace kpfeat {

namespace {

void apply_affine(Matrix& out, const ChannelAffine& affine, bool rectify) {
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    row = row.cwiseProduct(affine.scale.transpose()) + affine.shift.transpose();
    if (rectify) row = row.cwiseMax(0.0);
  }
}

void check_affine(const ChannelAffine& affine, std::size_t channels, const char* what) {
  if (static_cast<std::size_t>(affine.scale.size()) != channels ||
      static_cast<std::size_t>(affine.shift.size()) != channels) {
    throw std::invalid_argument(std::string(what) + ": affine size does not match output channels");
  }
}

Matrix max_pool(const Matrix& features, const NeighborLists& neighbors) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(neighbors.size()), features.cols());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    if (neighbors[i].empty()) continue;
    auto row = out.row(static_cast<Eigen::Index>(i));
    row.setConstant(-std::numeric_limits<double>::infinity());
    for (std::size_t j : neighbors[i]) row = row.cwiseMax(features.row(static_cast<Eigen::Index>(j)));
  }
  return out;
}

}  // namespace

ChannelAffine ChannelAffine::identity(std::size_t channels) {
  return {Eigen::VectorXd::Ones(static_cast<Eigen::Index>(channels)),
          Eigen::VectorXd::Zero(static_cast<Eigen::Index>(channels))};
}

std::size_t ConvLayer::in_dim() const {
  return kernel.size() == 0 ? 0 : static_cast<std::size_t>(weights.rows()) / kernel.size();
}

void ConvLayer::validate() const {
  if (kernel.size() == 0) throw std::invalid_argument("conv layer has no kernel points");
  if (!(kernel.sigma > 0.0)) throw std::invalid_argument("conv layer sigma must be positive");
  if (!(radius > 0.0)) throw std::invalid_argument("conv layer radius must be positive");
  if (static_cast<std::size_t>(weights.rows()) % kernel.size() != 0 || weights.rows() == 0 ||
      weights.cols() == 0) {
    throw std::invalid_argument("conv weights are not K stacked D_in x D_out matrices");
  }
  for (const auto& p : kernel.points) {
    if (p.norm() > kernel.extent * (1.0 + 1e-6)) {
      throw std::invalid_argument("kernel point outside the kernel extent");
    }
  }
  check_affine(affine, out_dim(), "conv layer");
}

void UnaryLayer::validate() const {
  if (weights.rows() == 0 || weights.cols() == 0) throw std::invalid_argument("unary layer is empty");
  check_affine(affine, out_dim(), "unary layer");
}

Eigen::VectorXd kpconv_apply(const Vec3& center, std::span<const Vec3> support_points,
                             const Matrix& support_features,
                             std::span<const std::size_t> neighbors, const ConvLayer& layer,
                             bool normalized) {
  const std::size_t kernel_count = layer.kernel_count();
  const std::size_t din = layer.in_dim();
  if (static_cast<std::size_t>(support_features.cols()) != din) {
    throw std::invalid_argument("feature dimension does not match layer input dimension");
  }
  if (static_cast<std::size_t>(support_features.rows()) != support_points.size()) {
    throw std::invalid_argument("feature rows do not match supporting point count");
  }
  Matrix gathered = Matrix::Zero(static_cast<Eigen::Index>(kernel_count),
                                 static_cast<Eigen::Index>(din));
  for (std::size_t idx : neighbors) {
    if (idx >= support_points.size()) throw std::out_of_range("neighbor index out of range");
    const Vec3 offset = support_points[idx] - center;
    for (std::size_t k = 0; k < kernel_count; ++k) {
      const double h = correlation(offset, layer.kernel.points[k], layer.kernel.sigma);
      if (h > 0.0) {
        gathered.row(static_cast<Eigen::Index>(k)) +=
            h * support_features.row(static_cast<Eigen::Index>(idx));
      }
    }
  }
  Eigen::Map<const Eigen::RowVectorXd> flat(gathered.data(), gathered.size());
  Eigen::VectorXd out = (flat * layer.weights).transpose();
  if (normalized && !neighbors.empty()) out /= static_cast<double>(neighbors.size());
  return out;
}

Eigen::VectorXd kpconv_apply(const Vec3& center, std::span<const Vec3> neighbor_points,
                             const Matrix& neighbor_features, const ConvLayer& layer,
                             bool normalized) {
  std::vector<std::size_t> all(neighbor_points.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return kpconv_apply(center, neighbor_points, neighbor_features, all, layer, normalized);
}

Matrix layer_forward(std::span<const Vec3> query_points, std::span<const Vec3> support_points,
                     const NeighborLists& neighbors, const Matrix& support_features,
                     const ConvLayer& layer) {
  if (neighbors.size() != query_points.size()) {
    throw std::invalid_argument("neighbor lists do not match query count");
  }
  Matrix out(static_cast<Eigen::Index>(query_points.size()),
             static_cast<Eigen::Index>(layer.out_dim()));
  for (std::size_t i = 0; i < query_points.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        kpconv_apply(query_points[i], support_points, support_features, neighbors[i], layer,
                     layer.density_normalized)
            .transpose();
  }
  apply_affine(out, layer.affine, layer.rectify);
  return out;
}

Matrix unary_forward(const Matrix& features, const UnaryLayer& layer) {
  if (static_cast<std::size_t>(features.cols()) != layer.in_dim()) {
    throw std::invalid_argument("feature dimension does not match unary layer input");
  }
  Matrix out = features * layer.weights;
  apply_affine(out, layer.affine, layer.rectify);
  return out;
}

Matrix block_forward(const ResnetBlock& block, std::span<const Vec3> query_points,
                     std::span<const Vec3> support_points, const NeighborLists& neighbors,
                     const Matrix& support_features) {
  if (!block.strided && query_points.size() != support_points.size()) {
    throw std::invalid_argument("non-strided block needs identical query and support sets");
  }
  Matrix reduced = unary_forward(support_features, block.reduce);
  Matrix conv = layer_forward(query_points, support_points, neighbors, reduced, block.conv);
  Matrix out = unary_forward(conv, block.expand);

  Matrix pooled = block.strided ? max_pool(support_features, neighbors) : support_features;
  if (block.shortcut) {
    out += unary_forward(pooled, *block.shortcut);
  } else {
    if (pooled.cols() != out.cols()) {
      throw std::invalid_argument("identity shortcut needs matching channel counts");
    }
    out += pooled;
  }
  return out.cwiseMax(0.0);
}

}  // namespace kpfeat
