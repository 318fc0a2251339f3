#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kpfeat/core.hpp"
#include "kpfeat/neighborhood.hpp"

namespace kpfeat {

// Kernel point counts with a shipped disposition table.
inline constexpr std::array<std::size_t, 2> kShippedKernelCounts{1, 15};
inline constexpr std::size_t kDefaultKernelCount = 15;

// Neighborhood radius per stage is this multiple of the stage grid size, and
// the kernel extent equals that radius; sigma = extent / kSigmaDivisor.
inline constexpr double kRadiusScale = 2.5;
inline constexpr double kSigmaDivisor = 2.5;

struct KernelLayout {
  std::vector<Vec3> points;  // \hat x_k, meters
  double extent = 0.0;       // radius of the ball holding the points
  double sigma = 0.0;        // influence length of the linear correlation

  std::size_t size() const { return points.size(); }
};

// Loads the shipped unit-extent table for `count` points and scales it to
// `extent`. Throws std::invalid_argument for counts without a table.
KernelLayout kernel_dispositions(std::size_t count, double extent);

// Linear correlation max(0, 1 - |offset - kernel_point| / sigma).
double correlation(const Vec3& offset, const Vec3& kernel_point, double sigma);

// Batch normalisation folded into a per-channel affine map.
struct ChannelAffine {
  Eigen::VectorXd scale;
  Eigen::VectorXd shift;

  static ChannelAffine identity(std::size_t channels);
};

// Kernel point convolution layer. `weights` stacks the K matrices W_k
// (each D_in × D_out) vertically, so row k·D_in + i of `weights` is row i of W_k.
struct ConvLayer {
  KernelLayout kernel;
  double radius = 0.0;
  double grid = 0.0;  // subsampling cell of the stage the layer outputs to
  Matrix weights;
  ChannelAffine affine;
  bool rectify = true;
  bool density_normalized = true;

  std::size_t kernel_count() const { return kernel.size(); }
  std::size_t in_dim() const;
  std::size_t out_dim() const { return static_cast<std::size_t>(weights.cols()); }
  void validate() const;
};

// Pointwise (1×1) layer.
struct UnaryLayer {
  Matrix weights;  // D_in × D_out
  ChannelAffine affine;
  bool rectify = true;

  std::size_t in_dim() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weights.cols()); }
  void validate() const;
};

// Kernel point convolution at `center` over the supporting points selected
// by `neighbors` (indices into `support_points` / rows of `support_features`).
// Returns the raw sum, divided by |N_x| when `normalized`. An empty
// neighborhood yields the zero vector.
Eigen::VectorXd kpconv_apply(const Vec3& center, std::span<const Vec3> support_points,
                             const Matrix& support_features,
                             std::span<const std::size_t> neighbors, const ConvLayer& layer,
                             bool normalized);

// Overload over an explicit neighborhood (row i of `neighbor_features`
// belongs to `neighbor_points[i]`).
Eigen::VectorXd kpconv_apply(const Vec3& center, std::span<const Vec3> neighbor_points,
                             const Matrix& neighbor_features, const ConvLayer& layer,
                             bool normalized);

// Convolution at every query point followed by the folded affine and, when
// enabled, the rectifier.
Matrix layer_forward(std::span<const Vec3> query_points, std::span<const Vec3> support_points,
                     const NeighborLists& neighbors, const Matrix& support_features,
                     const ConvLayer& layer);

Matrix unary_forward(const Matrix& features, const UnaryLayer& layer);

// Bottleneck residual block: reduce (1×1) -> kernel point conv -> expand (1×1),
// plus a shortcut, then a rectifier. Strided blocks move features from the
// support stage to the (coarser) query stage and max-pool the shortcut over
// the same neighborhoods.
struct ResnetBlock {
  UnaryLayer reduce;
  ConvLayer conv;
  UnaryLayer expand;
  std::optional<UnaryLayer> shortcut;  // projection when dims differ
  bool strided = false;

  std::size_t in_dim() const { return reduce.in_dim(); }
  std::size_t out_dim() const { return expand.out_dim(); }
};

Matrix block_forward(const ResnetBlock& block, std::span<const Vec3> query_points,
                     std::span<const Vec3> support_points, const NeighborLists& neighbors,
                     const Matrix& support_features);

inline constexpr std::array<std::size_t, 5> kEncoderChannels{64, 128, 256, 512, 1024};
inline constexpr std::size_t kStageCount = kEncoderChannels.size();
inline constexpr std::size_t kDescriptorDim = 32;
inline constexpr std::size_t kInputDim = 1;

// UNet-style fully convolutional network:
//   stage 0: stem conv (1 -> 64) + residual block
//   stage s = 1..4: strided residual block + residual block
//   decoder: nearest upsample, concatenate the encoder skip, 1×1 layer
//   head: 1×1 layer to 32 channels followed by a rectifier
struct KpConvModel {
  ConvLayer stem;
  std::vector<ResnetBlock> encoder;  // 2·kStageCount - 1 blocks
  std::vector<UnaryLayer> decoder;   // kStageCount - 1 layers, coarse to fine
  UnaryLayer head;

  // Subsampling cell size of stage `s` (stage 0 is the input cloud itself).
  double grid(std::size_t stage) const;
  // Convolution radius used at stage `s`.
  double radius(std::size_t stage) const;

  // Throws ShapeMismatchError on any structural inconsistency.
  void validate() const;
};

struct ModelOptions {
  double first_grid = 0.03;
  std::size_t kernel_count = kDefaultKernelCount;
  bool density_normalized = true;
};

// Seeded random initialisation. Weights are float32-representable so models
// survive a save/load cycle unchanged.
KpConvModel random_model(const ModelOptions& options, std::uint64_t seed);

// Dense descriptors for every input point. Row i of the result belongs to
// point i. Uses relative coordinates only; the internal subsampling grid is
// anchored at the cloud's bounding-box minimum and points are processed in
// lexicographic order, so the output is translation invariant and
// permutation equivariant.
FeatureMap network_forward(const KpConvModel& model, const PointCloud& cloud);

// Weight file errors.
class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};
class VersionMismatchError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};
class ShapeMismatchError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};
class TruncatedFileError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};

inline constexpr std::uint32_t kWeightFileVersion = 1;

std::vector<std::uint8_t> serialize_model(const KpConvModel& model);
KpConvModel deserialize_model(std::span<const std::uint8_t> bytes);

void save_weights(const KpConvModel& model, const std::filesystem::path& path);
KpConvModel load_weights(const std::filesystem::path& path);

}  // namespace kpfeat
