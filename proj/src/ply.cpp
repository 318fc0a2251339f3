#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include "kpfeat/io.hpp"

namespace kpfeat {

namespace {

enum class Type { kInt8, kUint8, kInt16, kUint16, kInt32, kUint32, kFloat32, kFloat64 };

std::optional<Type> parse_type(const std::string& s) {
  if (s == "char" || s == "int8") return Type::kInt8;
  if (s == "uchar" || s == "uint8") return Type::kUint8;
  if (s == "short" || s == "int16") return Type::kInt16;
  if (s == "ushort" || s == "uint16") return Type::kUint16;
  if (s == "int" || s == "int32") return Type::kInt32;
  if (s == "uint" || s == "uint32") return Type::kUint32;
  if (s == "float" || s == "float32") return Type::kFloat32;
  if (s == "double" || s == "float64") return Type::kFloat64;
  return std::nullopt;
}

std::size_t type_size(Type t) {
  switch (t) {
    case Type::kInt8:
    case Type::kUint8: return 1;
    case Type::kInt16:
    case Type::kUint16: return 2;
    case Type::kInt32:
    case Type::kUint32:
    case Type::kFloat32: return 4;
    case Type::kFloat64: return 8;
  }
  return 0;
}

struct Property {
  std::string name;
  Type type = Type::kFloat32;
  bool is_list = false;
  Type count_type = Type::kUint8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  PlyFormat format = PlyFormat::kAscii;
  std::vector<Element> elements;
};

std::vector<std::string> split(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> tokens;
  for (std::string t; ss >> t;) tokens.push_back(t);
  return tokens;
}

Header read_header(std::istream& in) {
  std::string line;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || line != "ply") throw PlyHeaderError("missing 'ply' signature");
  Header header;
  bool have_format = false;
  while (true) {
    if (!next()) throw PlyHeaderError("header ended before end_header");
    const auto tok = split(line);
    if (tok.empty()) continue;
    const std::string& key = tok[0];
    if (key == "end_header") break;
    if (key == "comment" || key == "obj_info") continue;
    if (key == "format") {
      if (tok.size() != 3) throw PlyHeaderError("malformed format line");
      if (tok[1] == "ascii") {
        header.format = PlyFormat::kAscii;
      } else if (tok[1] == "binary_little_endian") {
        header.format = PlyFormat::kBinaryLittleEndian;
      } else {
        throw PlyHeaderError("unsupported PLY format '" + tok[1] + "'");
      }
      have_format = true;
    } else if (key == "element") {
      if (tok.size() != 3) throw PlyHeaderError("malformed element line");
      Element e;
      e.name = tok[1];
      auto [ptr, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), e.count);
      if (ec != std::errc() || ptr != tok[2].data() + tok[2].size()) {
        throw PlyHeaderError("bad element count '" + tok[2] + "'");
      }
      header.elements.push_back(std::move(e));
    } else if (key == "property") {
      if (header.elements.empty()) throw PlyHeaderError("property before any element");
      Property p;
      if (tok.size() == 5 && tok[1] == "list") {
        auto ct = parse_type(tok[2]);
        auto it = parse_type(tok[3]);
        if (!ct || !it) throw PlyHeaderError("unknown list property type");
        p.is_list = true;
        p.count_type = *ct;
        p.type = *it;
        p.name = tok[4];
      } else if (tok.size() == 3) {
        auto t = parse_type(tok[1]);
        if (!t) throw PlyHeaderError("unknown property type '" + tok[1] + "'");
        p.type = *t;
        p.name = tok[2];
      } else {
        throw PlyHeaderError("malformed property line");
      }
      header.elements.back().properties.push_back(std::move(p));
    } else {
      throw PlyHeaderError("unexpected header keyword '" + key + "'");
    }
  }
  if (!have_format) throw PlyHeaderError("missing format line");
  return header;
}

double decode(Type t, const unsigned char* bytes) {
  std::array<unsigned char, 8> buf{};
  const std::size_t n = type_size(t);
  std::memcpy(buf.data(), bytes, n);
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.begin() + n);
  switch (t) {
    case Type::kInt8: return std::bit_cast<std::int8_t>(buf[0]);
    case Type::kUint8: return buf[0];
    case Type::kInt16: { std::int16_t v; std::memcpy(&v, buf.data(), 2); return v; }
    case Type::kUint16: { std::uint16_t v; std::memcpy(&v, buf.data(), 2); return v; }
    case Type::kInt32: { std::int32_t v; std::memcpy(&v, buf.data(), 4); return v; }
    case Type::kUint32: { std::uint32_t v; std::memcpy(&v, buf.data(), 4); return v; }
    case Type::kFloat32: { float v; std::memcpy(&v, buf.data(), 4); return v; }
    case Type::kFloat64: { double v; std::memcpy(&v, buf.data(), 8); return v; }
  }
  return 0.0;
}

class BinarySource {
 public:
  explicit BinarySource(std::istream& in) : in_(in) {}
  double value(Type t) {
    unsigned char bytes[8];
    const auto n = static_cast<std::streamsize>(type_size(t));
    if (!in_.read(reinterpret_cast<char*>(bytes), n)) throw PlyTruncatedError("PLY body truncated");
    return decode(t, bytes);
  }

 private:
  std::istream& in_;
};

class AsciiSource {
 public:
  explicit AsciiSource(std::istream& in) : in_(in) {}
  double value(Type) {
    if (!(in_ >> token_)) throw PlyTruncatedError("PLY body truncated");
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(token_.data(), token_.data() + token_.size(), v);
    if (ec != std::errc() || ptr != token_.data() + token_.size()) {
      throw PlyBodyError("non-numeric value '" + token_ + "' in PLY body");
    }
    return v;
  }

 private:
  std::istream& in_;
  std::string token_;
};

template <class Source>
void skip_element(Source& src, const Element& e) {
  for (std::size_t i = 0; i < e.count; ++i) {
    for (const auto& p : e.properties) {
      if (p.is_list) {
        const double count = src.value(p.count_type);
        if (count < 0) throw PlyBodyError("negative list length");
        for (std::size_t k = 0; k < static_cast<std::size_t>(count); ++k) src.value(p.type);
      } else {
        src.value(p.type);
      }
    }
  }
}

template <class Source>
std::vector<Vec3> read_vertices(Source& src, const Element& e, const std::array<std::size_t, 3>& xyz) {
  std::vector<Vec3> points;
  points.reserve(std::min<std::size_t>(e.count, 1u << 24));
  for (std::size_t i = 0; i < e.count; ++i) {
    Vec3 p = Vec3::Zero();
    for (std::size_t k = 0; k < e.properties.size(); ++k) {
      const auto& prop = e.properties[k];
      if (prop.is_list) {
        const double count = src.value(prop.count_type);
        if (count < 0) throw PlyBodyError("negative list length");
        for (std::size_t j = 0; j < static_cast<std::size_t>(count); ++j) src.value(prop.type);
        continue;
      }
      const double v = src.value(prop.type);
      for (int a = 0; a < 3; ++a) {
        if (xyz[a] == k) p[a] = v;
      }
    }
    if (!p.allFinite()) throw PlyBodyError("non-finite vertex coordinate");
    points.push_back(p);
  }
  return points;
}

template <class Source>
PointCloud read_body(Source& src, const Header& header, std::size_t vertex_element,
                     const std::array<std::size_t, 3>& xyz) {
  for (std::size_t i = 0; i < vertex_element; ++i) skip_element(src, header.elements[i]);
  return PointCloud(read_vertices(src, header.elements[vertex_element], xyz));
}

template <class T>
void put_binary(std::ostream& out, T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

void put_ascii(std::ostream& out, double v, PlyScalar scalar) {
  char buf[64];
  auto res = scalar == PlyScalar::kFloat32
                 ? std::to_chars(buf, buf + sizeof(buf), static_cast<float>(v))
                 : std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, res.ptr - buf);
}

}  // namespace

PointCloud read_ply(std::istream& in, std::vector<std::string>* notes) {
  const Header header = read_header(in);
  std::size_t vertex_element = header.elements.size();
  for (std::size_t i = 0; i < header.elements.size(); ++i) {
    if (header.elements[i].name == "vertex") {
      vertex_element = i;
      break;
    }
  }
  if (vertex_element == header.elements.size()) {
    throw PlyMissingCoordinatesError("PLY file has no vertex element");
  }
  const Element& vertex = header.elements[vertex_element];
  constexpr std::size_t kMissing = std::numeric_limits<std::size_t>::max();
  std::array<std::size_t, 3> xyz{kMissing, kMissing, kMissing};
  const std::array<const char*, 3> names{"x", "y", "z"};
  for (std::size_t k = 0; k < vertex.properties.size(); ++k) {
    const auto& p = vertex.properties[k];
    bool used = false;
    for (int a = 0; a < 3; ++a) {
      if (p.name == names[a] && !p.is_list) {
        xyz[a] = k;
        used = true;
      }
    }
    if (!used && notes) notes->push_back("ignored vertex property '" + p.name + "'");
  }
  for (int a = 0; a < 3; ++a) {
    if (xyz[a] == kMissing) {
      throw PlyMissingCoordinatesError(std::string("vertex element lacks scalar property '") +
                                       names[a] + "'");
    }
  }
  if (header.format == PlyFormat::kAscii) {
    AsciiSource src(in);
    return read_body(src, header, vertex_element, xyz);
  }
  BinarySource src(in);
  return read_body(src, header, vertex_element, xyz);
}

PointCloud read_ply(const std::filesystem::path& path, std::vector<std::string>* notes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PlyError("cannot open PLY file " + path.string());
  return read_ply(in, notes);
}

void write_ply(std::ostream& out, const PointCloud& cloud, PlyFormat format, PlyScalar scalar) {
  const char* type = scalar == PlyScalar::kFloat32 ? "float" : "double";
  out << "ply\n"
      << (format == PlyFormat::kAscii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n")
      << "element vertex " << cloud.size() << "\n"
      << "property " << type << " x\n"
      << "property " << type << " y\n"
      << "property " << type << " z\n";
  for (const auto& [name, _] : cloud.attributes()) out << "property " << type << " " << name << "\n";
  out << "end_header\n";

  std::vector<double> row;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    row.assign({cloud[i].x(), cloud[i].y(), cloud[i].z()});
    for (const auto& [name, values] : cloud.attributes()) row.push_back(values[i]);
    if (format == PlyFormat::kAscii) {
      for (std::size_t k = 0; k < row.size(); ++k) {
        if (k) out << ' ';
        put_ascii(out, row[k], scalar);
      }
      out << '\n';
    } else {
      for (double v : row) {
        if (scalar == PlyScalar::kFloat32) {
          put_binary(out, static_cast<float>(v));
        } else {
          put_binary(out, v);
        }
      }
    }
  }
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyFormat format,
               PlyScalar scalar) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PlyError("cannot open " + path.string() + " for writing");
  write_ply(out, cloud, format, scalar);
  if (!out) throw PlyError("failed writing " + path.string());
}

}  // namespace kpfeat
