#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "kpfeat/kpconv.hpp"

namespace kpfeat {

namespace {

// The volatile store keeps GCC 11's -O3 SLP vectorizer from folding the
// narrowing away when neighbouring fields are rounded together.
double to_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

void shape_check(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatchError(what);
}

void check_unary(const UnaryLayer& layer, std::size_t in, std::size_t out, const std::string& what) {
  shape_check(layer.in_dim() == in && layer.out_dim() == out,
              what + ": expected " + std::to_string(in) + "x" + std::to_string(out) + ", got " +
                  std::to_string(layer.in_dim()) + "x" + std::to_string(layer.out_dim()));
  try {
    layer.validate();
  } catch (const std::invalid_argument& e) {
    throw ShapeMismatchError(what + ": " + e.what());
  }
}

void check_conv(const ConvLayer& layer, std::size_t in, std::size_t out, const std::string& what) {
  try {
    layer.validate();
  } catch (const std::invalid_argument& e) {
    throw ShapeMismatchError(what + ": " + e.what());
  }
  shape_check(layer.in_dim() == in && layer.out_dim() == out,
              what + ": expected " + std::to_string(in) + "x" + std::to_string(out) + ", got " +
                  std::to_string(layer.in_dim()) + "x" + std::to_string(layer.out_dim()));
  shape_check(layer.grid > 0.0, what + ": grid size must be positive");
}

void check_block(const ResnetBlock& block, std::size_t in, std::size_t out, bool strided,
                 const std::string& what) {
  shape_check(block.strided == strided, what + ": unexpected stride flag");
  const std::size_t mid = block.reduce.out_dim();
  check_unary(block.reduce, in, mid, what + " reduce");
  check_conv(block.conv, mid, mid, what + " conv");
  check_unary(block.expand, mid, out, what + " expand");
  if (in != out) shape_check(block.shortcut.has_value(), what + ": missing shortcut projection");
  if (block.shortcut) check_unary(*block.shortcut, in, out, what + " shortcut");
}

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Matrix weights(std::size_t rows, std::size_t cols, double fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = to_f32(dist(rng_));
    return m;
  }

  ChannelAffine affine(std::size_t channels) {
    std::uniform_real_distribution<double> scale(0.8, 1.2);
    std::uniform_real_distribution<double> shift(-0.05, 0.05);
    ChannelAffine a = ChannelAffine::identity(channels);
    for (Eigen::Index i = 0; i < a.scale.size(); ++i) {
      a.scale[i] = to_f32(scale(rng_));
      a.shift[i] = to_f32(shift(rng_));
    }
    return a;
  }

  UnaryLayer unary(std::size_t in, std::size_t out, bool rectify) {
    UnaryLayer layer;
    layer.weights = weights(in, out, static_cast<double>(in));
    layer.affine = affine(out);
    layer.rectify = rectify;
    return layer;
  }

  ConvLayer conv(std::size_t in, std::size_t out, double grid, double support_grid,
                 const ModelOptions& options) {
    ConvLayer layer;
    layer.grid = to_f32(grid);
    layer.radius = to_f32(kRadiusScale * support_grid);
    layer.kernel = kernel_dispositions(options.kernel_count, layer.radius);
    layer.kernel.extent = layer.radius;
    layer.kernel.sigma = to_f32(layer.radius / kSigmaDivisor);
    for (auto& p : layer.kernel.points) p = p.unaryExpr([](double v) { return to_f32(v); });
    layer.weights = weights(options.kernel_count * in, out, static_cast<double>(in));
    layer.affine = affine(out);
    layer.rectify = true;
    layer.density_normalized = options.density_normalized;
    return layer;
  }

  ResnetBlock block(std::size_t in, std::size_t out, double grid, double support_grid,
                    bool strided, const ModelOptions& options) {
    ResnetBlock b;
    const std::size_t mid = out / 4;
    b.reduce = unary(in, mid, true);
    b.conv = conv(mid, mid, grid, support_grid, options);
    b.expand = unary(mid, out, false);
    if (strided || in != out) b.shortcut = unary(in, out, false);
    b.strided = strided;
    return b;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

double KpConvModel::grid(std::size_t stage) const {
  if (stage >= kStageCount) throw std::out_of_range("stage index out of range");
  return stage == 0 ? stem.grid : encoder.at(2 * stage - 1).conv.grid;
}

double KpConvModel::radius(std::size_t stage) const {
  if (stage >= kStageCount) throw std::out_of_range("stage index out of range");
  return stage == 0 ? stem.radius : encoder.at(2 * stage).conv.radius;
}

void KpConvModel::validate() const {
  shape_check(encoder.size() == 2 * kStageCount - 1, "encoder must hold 9 residual blocks");
  shape_check(decoder.size() == kStageCount - 1, "decoder must hold 4 layers");
  check_conv(stem, kInputDim, kEncoderChannels[0], "stem");
  check_block(encoder[0], kEncoderChannels[0], kEncoderChannels[0], false, "stage 0 block");
  shape_check(encoder[0].conv.grid == stem.grid, "stage 0 block grid differs from stem");
  for (std::size_t s = 1; s < kStageCount; ++s) {
    const std::string tag = "stage " + std::to_string(s);
    check_block(encoder[2 * s - 1], kEncoderChannels[s - 1], kEncoderChannels[s], true,
                tag + " strided block");
    check_block(encoder[2 * s], kEncoderChannels[s], kEncoderChannels[s], false, tag + " block");
    shape_check(encoder[2 * s].conv.grid == encoder[2 * s - 1].conv.grid,
                tag + ": block grids disagree");
    shape_check(grid(s) > grid(s - 1), tag + ": grid sizes must increase with depth");
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::size_t s = kStageCount - 1 - i;
    check_unary(decoder[i], kEncoderChannels[s] + kEncoderChannels[s - 1],
                kEncoderChannels[s - 1], "decoder " + std::to_string(i));
  }
  check_unary(head, kEncoderChannels[0], kDescriptorDim, "head");
  shape_check(head.rectify, "head must end with a rectifier");
}

KpConvModel random_model(const ModelOptions& options, std::uint64_t seed) {
  if (!(options.first_grid > 0.0)) throw std::invalid_argument("first grid size must be positive");
  Initializer init(seed);
  KpConvModel model;
  std::array<double, kStageCount> grids{};
  for (std::size_t s = 0; s < kStageCount; ++s) grids[s] = options.first_grid * std::ldexp(1.0, static_cast<int>(s));

  model.stem = init.conv(kInputDim, kEncoderChannels[0], grids[0], grids[0], options);
  model.encoder.push_back(init.block(kEncoderChannels[0], kEncoderChannels[0], grids[0], grids[0],
                                     false, options));
  for (std::size_t s = 1; s < kStageCount; ++s) {
    model.encoder.push_back(init.block(kEncoderChannels[s - 1], kEncoderChannels[s], grids[s],
                                       grids[s - 1], true, options));
    model.encoder.push_back(
        init.block(kEncoderChannels[s], kEncoderChannels[s], grids[s], grids[s], false, options));
  }
  for (std::size_t s = kStageCount - 1; s >= 1; --s) {
    model.decoder.push_back(
        init.unary(kEncoderChannels[s] + kEncoderChannels[s - 1], kEncoderChannels[s - 1], true));
  }
  model.head = init.unary(kEncoderChannels[0], kDescriptorDim, true);
  model.head.affine = ChannelAffine::identity(kDescriptorDim);
  model.head.affine.shift.setConstant(to_f32(0.01));
  model.validate();
  return model;
}

FeatureMap network_forward(const KpConvModel& model, const PointCloud& cloud) {
  require_non_empty(cloud, "network_forward");
  model.validate();

  const std::size_t n = cloud.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Vec3& pa = cloud[a];
    const Vec3& pb = cloud[b];
    if (pa.x() != pb.x()) return pa.x() < pb.x();
    if (pa.y() != pb.y()) return pa.y() < pb.y();
    if (pa.z() != pb.z()) return pa.z() < pb.z();
    return a < b;
  });
  Vec3 lo = cloud[0];
  for (const auto& p : cloud.points()) lo = lo.cwiseMin(p);

  std::array<std::vector<Vec3>, kStageCount> stages;
  stages[0].reserve(n);
  for (std::size_t i : order) stages[0].push_back(cloud[i] - lo);
  for (std::size_t s = 1; s < kStageCount; ++s) {
    stages[s] = voxel_downsample(PointCloud(stages[s - 1]), model.grid(s)).points();
  }
  std::vector<NeighborhoodIndex> trees;
  trees.reserve(kStageCount);
  for (const auto& pts : stages) trees.emplace_back(pts);

  NeighborLists local = radius_neighbors(trees[0], stages[0], model.radius(0));
  Matrix x = Matrix::Ones(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kInputDim));
  x = layer_forward(stages[0], stages[0], local, x, model.stem);
  x = block_forward(model.encoder[0], stages[0], stages[0], local, x);

  std::array<Matrix, kStageCount> skips;
  skips[0] = x;
  for (std::size_t s = 1; s < kStageCount; ++s) {
    const ResnetBlock& strided = model.encoder[2 * s - 1];
    NeighborLists pool = radius_neighbors(trees[s - 1], stages[s], strided.conv.radius);
    x = block_forward(strided, stages[s], stages[s - 1], pool, x);
    local = radius_neighbors(trees[s], stages[s], model.radius(s));
    x = block_forward(model.encoder[2 * s], stages[s], stages[s], local, x);
    skips[s] = x;
  }

  for (std::size_t s = kStageCount - 1; s >= 1; --s) {
    const auto& fine = stages[s - 1];
    Matrix cat(static_cast<Eigen::Index>(fine.size()), x.cols() + skips[s - 1].cols());
    for (std::size_t i = 0; i < fine.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      cat.row(row).head(x.cols()) = x.row(static_cast<Eigen::Index>(trees[s].nearest(fine[i]).index));
      cat.row(row).tail(skips[s - 1].cols()) = skips[s - 1].row(row);
    }
    x = unary_forward(cat, model.decoder[kStageCount - 1 - s]);
  }
  Matrix sorted_responses = unary_forward(x, model.head);

  Matrix responses(sorted_responses.rows(), sorted_responses.cols());
  for (std::size_t i = 0; i < n; ++i) {
    responses.row(static_cast<Eigen::Index>(order[i])) = sorted_responses.row(static_cast<Eigen::Index>(i));
  }
  return make_feature_map(std::move(responses));
}

}  // namespace kpfeat
