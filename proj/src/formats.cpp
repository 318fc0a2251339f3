#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "kpfeat/io.hpp"

namespace kpfeat {

namespace {

std::vector<std::string> tokens_of(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string t; ss >> t;) out.push_back(t);
  return out;
}

bool skippable(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

double parse_double(const std::string& s, const char* what) {
  double v = 0.0;
  const char* first = s.data();
  if (!s.empty() && s[0] == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw std::invalid_argument(std::string("bad ") + what + " value '" + s + "'");
  }
  return v;
}

std::size_t parse_index(const std::string& s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("bad index '" + s + "'");
  }
  return v;
}

template <class T>
void put(std::ostream& out, T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw FeatureFileError("feature file truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

constexpr char kFeatureMagic[4] = {'K', '3', 'F', 'T'};

// Splits one CSV line on commas; no quoting is needed for numeric tables.
std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(field);
  }
  return out;
}

}  // namespace

std::vector<PoseEntry> read_pose_file(std::istream& in) {
  std::vector<PoseEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  auto next_content = [&](std::string& out) {
    while (std::getline(in, out)) {
      ++line_no;
      if (!skippable(out)) return true;
    }
    return false;
  };
  while (next_content(line)) {
    PoseEntry entry;
    entry.header = tokens_of(line);
    if (entry.header.size() < 2) {
      throw PoseFileError("pose header at line " + std::to_string(line_no) +
                          " needs at least two ids");
    }
    Mat4 m;
    for (int r = 0; r < 4; ++r) {
      if (!next_content(line)) throw PoseFileError("pose matrix truncated after line " + std::to_string(line_no));
      const auto row = tokens_of(line);
      if (row.size() != 4) {
        throw PoseFileError("pose matrix row at line " + std::to_string(line_no) + " needs 4 values");
      }
      for (int c = 0; c < 4; ++c) {
        try {
          m(r, c) = parse_double(row[static_cast<std::size_t>(c)], "pose");
        } catch (const std::invalid_argument& e) {
          throw PoseFileError(std::string(e.what()) + " at line " + std::to_string(line_no));
        }
      }
    }
    if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > kPoseTolerance) {
      throw PoseFileError("pose bottom row is not 0 0 0 1 near line " + std::to_string(line_no));
    }
    try {
      entry.transform = RigidTransform::nearest(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>(),
                                                kPoseTolerance);
    } catch (const std::invalid_argument& e) {
      throw PoseFileError(std::string("pose is not rigid near line ") + std::to_string(line_no) +
                          ": " + e.what());
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<PoseEntry> read_pose_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PoseFileError("cannot open pose file " + path.string());
  return read_pose_file(in);
}

void write_pose_file(std::ostream& out, const std::vector<PoseEntry>& entries) {
  for (const auto& e : entries) {
    for (std::size_t i = 0; i < e.header.size(); ++i) out << (i ? " " : "") << e.header[i];
    out << '\n';
    const Mat4 m = e.transform.matrix();
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) out << (c ? " " : "") << format_number(m(r, c));
      out << '\n';
    }
  }
}

void write_pose_file(const std::filesystem::path& path, const std::vector<PoseEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PoseFileError("cannot open " + path.string() + " for writing");
  write_pose_file(out, entries);
}

void write_features(const std::filesystem::path& path, const FeatureMap& features) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FeatureFileError("cannot open " + path.string() + " for writing");
  out.write(kFeatureMagic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.channels()));
  for (const Matrix* m : {&features.responses, &features.descriptors}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) put<float>(out, static_cast<float>(m->data()[i]));
  }
  if (!out) throw FeatureFileError("failed writing " + path.string());
}

FeatureMap read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureFileError("cannot open feature file " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw FeatureFileError(path.string() + " is not a feature file");
  }
  const auto n = get<std::uint32_t>(in);
  const auto c = get<std::uint32_t>(in);
  FeatureMap f;
  f.responses.resize(n, c);
  f.descriptors.resize(n, c);
  for (Matrix* m : {&f.responses, &f.descriptors}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = get<float>(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FeatureFileError("trailing bytes in " + path.string());
  return f;
}

std::string format_number(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_descriptor_csv(std::ostream& out, const FeatureMap& features) {
  out << "index";
  for (std::size_t k = 0; k < features.channels(); ++k) out << ",f" << k;
  out << '\n';
  for (std::size_t i = 0; i < features.size(); ++i) {
    out << i;
    for (std::size_t k = 0; k < features.channels(); ++k) {
      out << ',' << format_number(features.descriptors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    }
    out << '\n';
  }
}

void write_keypoint_csv(std::ostream& out, const KeypointSet& keypoints) {
  out << "rank,index,score\n";
  for (std::size_t r = 0; r < keypoints.size(); ++r) {
    out << r << ',' << keypoints.indices[r] << ',' << format_number(keypoints.scores[r]) << '\n';
  }
}

void write_score_csv(std::ostream& out, const ScoreMap& scores) {
  out << "index,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out << i << ',' << format_number(scores.scores[static_cast<Eigen::Index>(i)]) << '\n';
  }
}

void write_match_csv(std::ostream& out, const CorrespondenceSet& matches) {
  out << "p,q,distance\n";
  for (const auto& m : matches) out << m.p << ',' << m.q << ',' << format_number(m.distance) << '\n';
}

std::vector<std::size_t> read_index_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + " is empty");
  const auto header = csv_fields(line);
  std::size_t column = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "index") column = i;
  }
  if (column == header.size()) throw std::runtime_error(path.string() + " has no 'index' column");
  std::vector<std::size_t> out;
  while (std::getline(in, line)) {
    if (skippable(line)) continue;
    const auto f = csv_fields(line);
    if (f.size() <= column) throw std::runtime_error("short row in " + path.string());
    out.push_back(parse_index(f[column]));
  }
  return out;
}

CorrespondenceSet read_match_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || csv_fields(line).size() < 2) {
    throw std::runtime_error(path.string() + " lacks a match header");
  }
  CorrespondenceSet out;
  while (std::getline(in, line)) {
    if (skippable(line)) continue;
    const auto f = csv_fields(line);
    if (f.size() < 2) throw std::runtime_error("short row in " + path.string());
    Correspondence c{parse_index(f[0]), parse_index(f[1]), 0.0};
    if (f.size() > 2) c.distance = parse_double(f[2], "distance");
    out.push_back(c);
  }
  return out;
}

}  // namespace kpfeat
