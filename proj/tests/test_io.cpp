#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "kpfeat/config.hpp"
#include "kpfeat/io.hpp"
#include "oracles.hpp"

using namespace kpfeat;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "kpfeat_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

PointCloud parse_ply(const std::string& text) {
  std::istringstream in(text);
  return read_ply(in);
}

const char* kThreePoints =
    "ply\n"
    "format ascii 1.0\n"
    "comment three points\n"
    "element vertex 3\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "end_header\n"
    "0 0 0\n"
    "1 2 3\n"
    "-1.5 0.25 4\n";

}  // namespace

TEST(Ply, AsciiThreePoints) {
  const auto c = parse_ply(kThreePoints);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[1], Vec3(1, 2, 3));
  EXPECT_EQ(c[2], Vec3(-1.5, 0.25, 4));
}

TEST(Ply, ExtraPropertiesAndElementsSkipped) {
  const std::string text =
      "ply\nformat ascii 1.0\n"
      "element camera 1\nproperty float fx\n"
      "element vertex 2\nproperty uchar red\nproperty double x\nproperty double y\n"
      "property double z\nproperty list uchar int ids\n"
      "element face 0\nproperty list uchar int vertex_indices\n"
      "end_header\n"
      "500\n"
      "255 1 2 3 2 7 8\n"
      "0 4 5 6 0\n";
  std::istringstream in(text);
  std::vector<std::string> notes;
  const auto c = read_ply(in, &notes);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0], Vec3(1, 2, 3));
  EXPECT_EQ(c[1], Vec3(4, 5, 6));
  EXPECT_FALSE(notes.empty());
}

TEST(Ply, BinaryRoundTripIsBitExact) {
  const PointCloud c(oracle::random_points(257, 3, -100, 100));
  std::stringstream buf;
  write_ply(buf, c, PlyFormat::kBinaryLittleEndian, PlyScalar::kFloat64);
  EXPECT_EQ(read_ply(buf).points(), c.points());
}

TEST(Ply, AsciiAndBinaryAgree) {
  const PointCloud c(oracle::random_points(100, 4, -3, 3));
  std::stringstream a, b;
  write_ply(a, c, PlyFormat::kAscii, PlyScalar::kFloat32);
  write_ply(b, c, PlyFormat::kBinaryLittleEndian, PlyScalar::kFloat32);
  const auto ca = read_ply(a);
  const auto cb = read_ply(b);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_LT((ca[i] - cb[i]).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((ca[i] - c[i]).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Ply, AttributesWritten) {
  const PointCloud c({Vec3(0, 0, 0), Vec3(1, 1, 1)}, {{"intensity", {0.5, 2.0}}});
  std::stringstream buf;
  write_ply(buf, c, PlyFormat::kAscii, PlyScalar::kFloat64);
  EXPECT_NE(buf.str().find("property double intensity"), std::string::npos);
  EXPECT_EQ(read_ply(buf).size(), 2u);
}

TEST(Ply, DistinctErrors) {
  EXPECT_THROW(parse_ply("plx\n"), PlyHeaderError);
  EXPECT_THROW(parse_ply("ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n"), PlyHeaderError);
  EXPECT_THROW(parse_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                         "end_header\n1 2\n"),
               PlyMissingCoordinatesError);
  EXPECT_THROW(parse_ply("ply\nformat ascii 1.0\nelement face 1\nproperty float x\nend_header\n1\n"),
               PlyMissingCoordinatesError);
  std::string cut(kThreePoints);
  cut.resize(cut.size() - 8);
  EXPECT_THROW(parse_ply(cut), PlyTruncatedError);
  std::string bad(kThreePoints);
  bad.replace(bad.find("1 2 3"), 5, "1 x 3");
  EXPECT_THROW(parse_ply(bad), PlyBodyError);
  std::stringstream bin;
  write_ply(bin, PointCloud(oracle::random_points(10, 1)), PlyFormat::kBinaryLittleEndian, PlyScalar::kFloat32);
  std::string bytes = bin.str();
  bytes.resize(bytes.size() - 5);
  EXPECT_THROW(parse_ply(bytes), PlyTruncatedError);
  EXPECT_THROW(read_ply(scratch("missing.ply")), PlyError);
}

TEST(PoseFile, IdentityAndQuarterTurn) {
  std::istringstream in(
      "# two poses\n"
      "0 1 60\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n\n"
      "0 2 60\n0 -1 0 0.5\n1 0 0 0\n0 0 1 -2\n0 0 0 1\n");
  const auto e = read_pose_file(in);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].header, (std::vector<std::string>{"0", "1", "60"}));
  EXPECT_TRUE(e[0].transform.matrix().isIdentity(0.0));
  const auto want = axis_angle(Vec3::UnitZ(), std::numbers::pi / 2, Vec3(0.5, 0, -2));
  EXPECT_LT((e[1].transform.matrix() - want.matrix()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PoseFile, WriterRoundTrip) {
  const std::vector<PoseEntry> entries{
      {{"a", "b"}, axis_angle(Vec3(1, 2, 3), 0.77, Vec3(1.5, -2, 0.1))},
      {{"c", "d", "extra"}, RigidTransform::identity()}};
  std::stringstream buf;
  write_pose_file(buf, entries);
  const auto back = read_pose_file(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].header, entries[1].header);
  EXPECT_LT((back[0].transform.matrix() - entries[0].transform.matrix()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PoseFile, Rejections) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return read_pose_file(in);
  };
  EXPECT_THROW(parse("0 1\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0.5 1\n"), PoseFileError);
  EXPECT_THROW(parse("0 1\n1.01 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n"), PoseFileError);
  EXPECT_THROW(parse("0 1\n1 0 0 0\n0 1 0 0\n"), PoseFileError);
  EXPECT_THROW(parse("0\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n"), PoseFileError);
  EXPECT_THROW(parse("0 1\n1 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n"), PoseFileError);
  // a tiny orthonormality error is projected instead of rejected
  EXPECT_NO_THROW(parse("0 1\n1.0000001 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n"));
}

TEST(FeatureFile, RoundTripAndErrors) {
  const auto f = make_feature_map(oracle::random_matrix(40, 32, 5));
  const auto path = scratch("f.k3ft");
  write_features(path, f);
  const auto back = read_features(path);
  EXPECT_EQ(back.size(), 40u);
  EXPECT_LT((back.descriptors - f.descriptors).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_LT((back.responses - f.responses).cwiseAbs().maxCoeff(), 1e-7);
  {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    out << 'x';
  }
  EXPECT_THROW(read_features(path), FeatureFileError);
  {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    out << "NOPE";
  }
  EXPECT_THROW(read_features(path), FeatureFileError);
}

TEST(Csv, KeypointAndMatchRoundTrip) {
  KeypointSet k{{7, 2, 9}, {0.9, 0.5, 0.1}};
  const auto kp = scratch("k.csv");
  {
    std::ofstream out(kp);
    write_keypoint_csv(out, k);
  }
  EXPECT_EQ(read_index_csv(kp), k.indices);
  const CorrespondenceSet m{{1, 4, 0.25}, {3, 0, 0.125}};
  const auto mp = scratch("m.csv");
  {
    std::ofstream out(mp);
    write_match_csv(out, m);
  }
  EXPECT_EQ(read_match_csv(mp), m);
}

TEST(Csv, NumbersRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0}) {
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
}

TEST(Config, DefaultsAndProfiles) {
  const auto in = indoor_profile();
  EXPECT_EQ(in.voxel_size, 0.03);
  EXPECT_EQ(in.tau1, 0.10);
  EXPECT_EQ(in.tau2, 0.05);
  EXPECT_EQ(in.ransac_iterations, 50000u);
  EXPECT_EQ(in.keypoint_counts, (std::vector<std::size_t>{5000, 2500, 1000, 500, 250}));
  EXPECT_EQ(in.repeatability_counts, (std::vector<std::size_t>{4, 8, 16, 32, 64, 128, 256, 512}));
  EXPECT_EQ(outdoor_profile().voxel_size, 0.30);
  EXPECT_THROW(profile_named("underwater"), ConfigError);
}

TEST(Config, TextRoundTrip) {
  std::istringstream in(
      "voxel_size = 0.05  # coarser\n"
      "profile = outdoor\n"
      "keypoint_counts = 100, 50\n"
      "seed = 42\n");
  const auto c = read_config(in);
  EXPECT_EQ(c.profile, "outdoor");
  EXPECT_EQ(c.voxel_size, 0.05);
  EXPECT_EQ(c.ransac_threshold, 0.5);
  EXPECT_EQ(c.keypoint_counts, (std::vector<std::size_t>{100, 50}));
  EXPECT_EQ(c.seed, 42u);
  std::stringstream buf;
  write_config(buf, c);
  const auto back = read_config(buf);
  std::stringstream again;
  write_config(again, back);
  EXPECT_EQ(again.str(), buf.str());
}

TEST(Config, Errors) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return read_config(in);
  };
  EXPECT_THROW(parse("nonsense = 1\n"), ConfigError);
  EXPECT_THROW(parse("voxel_size = abc\n"), ConfigError);
  EXPECT_THROW(parse("voxel_size = -1\n"), ConfigError);
  EXPECT_THROW(parse("just words\n"), ConfigError);
  EXPECT_THROW(parse("keypoint_counts = \n"), ConfigError);
}

TEST(Manifest, ResolvesPathsAndPoses) {
  const fs::path dir = scratch("manifest_case");
  fs::create_directories(dir / "s");
  {
    std::ofstream gt(dir / "s" / "gt.log");
    gt << "a b\n1 0 0 0.5\n0 1 0 0\n0 0 1 0\n0 0 0 1\n";
    std::ofstream m(dir / "manifest.txt");
    m << "# demo\nposes s/gt.log\npair s a b s/a.ply /abs/b.ply 0.6\n";
  }
  const auto man = load_manifest(dir / "manifest.txt");
  ASSERT_EQ(man.pairs.size(), 1u);
  const auto& p = man.pairs[0];
  EXPECT_EQ(p.pair_id(), "s/a_b");
  EXPECT_EQ(p.path_a, dir / "s/a.ply");
  EXPECT_EQ(p.path_b, fs::path("/abs/b.ply"));
  EXPECT_EQ(p.overlap, 0.6);
  EXPECT_EQ(p.t_gt.translation(), Vec3(0.5, 0, 0));
  {
    std::ofstream m(dir / "bad.txt");
    m << "poses s/gt.log\npair s a c s/a.ply s/c.ply 0.6\n";
  }
  EXPECT_THROW(load_manifest(dir / "bad.txt"), ConfigError);
}
