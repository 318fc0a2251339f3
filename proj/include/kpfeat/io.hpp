#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "kpfeat/core.hpp"
#include "kpfeat/detector.hpp"

namespace kpfeat {

// ---------------------------------------------------------------- PLY

class PlyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class PlyHeaderError : public PlyError {
 public:
  using PlyError::PlyError;
};
class PlyTruncatedError : public PlyError {
 public:
  using PlyError::PlyError;
};
class PlyMissingCoordinatesError : public PlyError {
 public:
  using PlyError::PlyError;
};
class PlyBodyError : public PlyError {
 public:
  using PlyError::PlyError;
};

enum class PlyFormat { kAscii, kBinaryLittleEndian };
enum class PlyScalar { kFloat32, kFloat64 };

// Reads the vertex element's x/y/z (any numeric property type) from an ASCII
// or binary little-endian PLY file. Other vertex properties are skipped and
// reported through `notes` when given.
PointCloud read_ply(const std::filesystem::path& path, std::vector<std::string>* notes = nullptr);
PointCloud read_ply(std::istream& in, std::vector<std::string>* notes = nullptr);

void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
               PlyFormat format = PlyFormat::kBinaryLittleEndian,
               PlyScalar scalar = PlyScalar::kFloat32);
void write_ply(std::ostream& out, const PointCloud& cloud, PlyFormat format, PlyScalar scalar);

// ---------------------------------------------------------------- poses
//
// One entry per pair: a header line of whitespace-separated tokens (the first
// two are the fragment ids, anything after is kept verbatim), then the 4×4
// row-major homogeneous matrix on four lines. Blank lines and lines starting
// with '#' are ignored. The layout matches 3DMatch's gt.log files.

class PoseFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PoseEntry {
  std::vector<std::string> header;
  RigidTransform transform;
};

inline constexpr double kPoseTolerance = 1e-6;

std::vector<PoseEntry> read_pose_file(const std::filesystem::path& path);
std::vector<PoseEntry> read_pose_file(std::istream& in);
void write_pose_file(const std::filesystem::path& path, const std::vector<PoseEntry>& entries);
void write_pose_file(std::ostream& out, const std::vector<PoseEntry>& entries);

// ---------------------------------------------------------------- features
//
// "K3FT", u32 N, u32 c, N×c f32 responses, N×c f32 descriptors (row-major,
// little-endian).

class FeatureFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_features(const std::filesystem::path& path, const FeatureMap& features);
FeatureMap read_features(const std::filesystem::path& path);

// ---------------------------------------------------------------- CSV

// Shortest round-trip decimal form.
std::string format_number(double value);

void write_descriptor_csv(std::ostream& out, const FeatureMap& features);
void write_keypoint_csv(std::ostream& out, const KeypointSet& keypoints);
void write_score_csv(std::ostream& out, const ScoreMap& scores);
void write_match_csv(std::ostream& out, const CorrespondenceSet& matches);

// Reads the `index` column of a keypoint or score CSV.
std::vector<std::size_t> read_index_csv(const std::filesystem::path& path);
CorrespondenceSet read_match_csv(const std::filesystem::path& path);

}  // namespace kpfeat
