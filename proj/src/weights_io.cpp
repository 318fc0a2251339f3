// Weight file layout (little-endian):
//
//   char[8]  magic "KP3FEAT\0"
//   u32      version
//   u32      layer count
//   per layer:
//     u32 kind (1 = kernel point conv, 2 = unary)
//     u32 role (0 stem, 1 reduce, 2 conv, 3 expand, 4 shortcut, 5 decoder, 6 head)
//     u32 stage
//     u32 flags (bit 0 rectify, bit 1 density normalised, bit 2 strided block)
//     u32 in_dim, u32 out_dim
//     kind 1 only: u32 K, f32 grid, f32 radius, f32 extent, f32 sigma, f32[K*3] kernel points
//     f32[rows*out_dim] weights, row-major (rows = K*in_dim for kind 1, in_dim for kind 2)
//     f32[out_dim] scale, f32[out_dim] shift
//
// Layers appear in network order: stem, encoder blocks (reduce, conv, expand,
// optional shortcut), decoder layers coarse to fine, head.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "kpfeat/kpconv.hpp"

namespace kpfeat {

namespace {

constexpr char kMagic[8] = {'K', 'P', '3', 'F', 'E', 'A', 'T', '\0'};

enum class Kind : std::uint32_t { kConv = 1, kUnary = 2 };
enum class Role : std::uint32_t {
  kStem = 0,
  kReduce = 1,
  kConv = 2,
  kExpand = 3,
  kShortcut = 4,
  kDecoder = 5,
  kHead = 6
};

constexpr std::uint32_t kFlagRectify = 1u << 0;
constexpr std::uint32_t kFlagNormalized = 1u << 1;
constexpr std::uint32_t kFlagStrided = 1u << 2;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void raw(const char* data, std::size_t n) { bytes_.insert(bytes_.end(), data, data + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  void raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedFileError("weight file truncated at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_affine(Writer& w, const ChannelAffine& a) {
  for (double v : a.scale) w.f32(v);
  for (double v : a.shift) w.f32(v);
}

void write_matrix(Writer& w, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(m.data()[i]);
}

void write_unary(Writer& w, const UnaryLayer& layer, Role role, std::uint32_t stage, bool strided) {
  w.u32(static_cast<std::uint32_t>(Kind::kUnary));
  w.u32(static_cast<std::uint32_t>(role));
  w.u32(stage);
  w.u32((layer.rectify ? kFlagRectify : 0u) | (strided ? kFlagStrided : 0u));
  w.u32(static_cast<std::uint32_t>(layer.in_dim()));
  w.u32(static_cast<std::uint32_t>(layer.out_dim()));
  write_matrix(w, layer.weights);
  write_affine(w, layer.affine);
}

void write_conv(Writer& w, const ConvLayer& layer, Role role, std::uint32_t stage, bool strided) {
  w.u32(static_cast<std::uint32_t>(Kind::kConv));
  w.u32(static_cast<std::uint32_t>(role));
  w.u32(stage);
  w.u32((layer.rectify ? kFlagRectify : 0u) | (layer.density_normalized ? kFlagNormalized : 0u) |
        (strided ? kFlagStrided : 0u));
  w.u32(static_cast<std::uint32_t>(layer.in_dim()));
  w.u32(static_cast<std::uint32_t>(layer.out_dim()));
  w.u32(static_cast<std::uint32_t>(layer.kernel_count()));
  w.f32(layer.grid);
  w.f32(layer.radius);
  w.f32(layer.kernel.extent);
  w.f32(layer.kernel.sigma);
  for (const auto& p : layer.kernel.points) {
    for (int a = 0; a < 3; ++a) w.f32(p[a]);
  }
  write_matrix(w, layer.weights);
  write_affine(w, layer.affine);
}

struct Record {
  Kind kind;
  Role role;
  std::uint32_t stage;
  std::uint32_t flags;
  ConvLayer conv;
  UnaryLayer unary;
};

constexpr std::uint32_t kMaxDim = 1u << 16;

Matrix read_matrix(Reader& r, std::size_t rows, std::size_t cols) {
  if (rows * cols * 4 > r.remaining()) {
    throw TruncatedFileError("weight file truncated inside a weight tensor");
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f32();
  return m;
}

ChannelAffine read_affine(Reader& r, std::size_t n) {
  ChannelAffine a = ChannelAffine::identity(n);
  for (Eigen::Index i = 0; i < a.scale.size(); ++i) a.scale[i] = r.f32();
  for (Eigen::Index i = 0; i < a.shift.size(); ++i) a.shift[i] = r.f32();
  return a;
}

Record read_record(Reader& r) {
  Record rec{};
  const std::uint32_t kind = r.u32();
  const std::uint32_t role = r.u32();
  if (kind != 1 && kind != 2) throw ShapeMismatchError("unknown layer kind " + std::to_string(kind));
  if (role > 6) throw ShapeMismatchError("unknown layer role " + std::to_string(role));
  rec.kind = static_cast<Kind>(kind);
  rec.role = static_cast<Role>(role);
  rec.stage = r.u32();
  rec.flags = r.u32();
  const std::uint32_t in = r.u32();
  const std::uint32_t out = r.u32();
  if (in == 0 || out == 0 || in > kMaxDim || out > kMaxDim) {
    throw ShapeMismatchError("layer dimensions out of range");
  }
  const bool rectify = (rec.flags & kFlagRectify) != 0;
  if (rec.kind == Kind::kConv) {
    const std::uint32_t k = r.u32();
    if (k == 0 || k > 1024) throw ShapeMismatchError("kernel point count out of range");
    ConvLayer& c = rec.conv;
    c.grid = r.f32();
    c.radius = r.f32();
    c.kernel.extent = r.f32();
    c.kernel.sigma = r.f32();
    c.kernel.points.resize(k);
    for (auto& p : c.kernel.points) {
      for (int a = 0; a < 3; ++a) p[a] = r.f32();
    }
    c.weights = read_matrix(r, static_cast<std::size_t>(k) * in, out);
    c.affine = read_affine(r, out);
    c.rectify = rectify;
    c.density_normalized = (rec.flags & kFlagNormalized) != 0;
  } else {
    UnaryLayer& u = rec.unary;
    u.weights = read_matrix(r, in, out);
    u.affine = read_affine(r, out);
    u.rectify = rectify;
  }
  return rec;
}

class RecordCursor {
 public:
  explicit RecordCursor(std::vector<Record> records) : records_(std::move(records)) {}

  bool at(Role role) const { return pos_ < records_.size() && records_[pos_].role == role; }

  const Record& take(Kind kind, Role role, std::uint32_t stage) {
    if (pos_ >= records_.size()) throw ShapeMismatchError("weight file has too few layers");
    const Record& rec = records_[pos_];
    if (rec.kind != kind || rec.role != role || rec.stage != stage) {
      throw ShapeMismatchError("unexpected layer at position " + std::to_string(pos_));
    }
    ++pos_;
    return rec;
  }

  bool exhausted() const { return pos_ == records_.size(); }

 private:
  std::vector<Record> records_;
  std::size_t pos_ = 0;
};

ResnetBlock read_block(RecordCursor& cur, std::uint32_t stage) {
  ResnetBlock b;
  const Record& reduce = cur.take(Kind::kUnary, Role::kReduce, stage);
  b.strided = (reduce.flags & kFlagStrided) != 0;
  b.reduce = reduce.unary;
  b.conv = cur.take(Kind::kConv, Role::kConv, stage).conv;
  b.expand = cur.take(Kind::kUnary, Role::kExpand, stage).unary;
  if (cur.at(Role::kShortcut)) b.shortcut = cur.take(Kind::kUnary, Role::kShortcut, stage).unary;
  return b;
}

void write_block(Writer& w, const ResnetBlock& b, std::uint32_t stage) {
  write_unary(w, b.reduce, Role::kReduce, stage, b.strided);
  write_conv(w, b.conv, Role::kConv, stage, b.strided);
  write_unary(w, b.expand, Role::kExpand, stage, b.strided);
  if (b.shortcut) write_unary(w, *b.shortcut, Role::kShortcut, stage, b.strided);
}

std::uint32_t layer_count(const KpConvModel& m) {
  std::uint32_t n = 1 + static_cast<std::uint32_t>(m.decoder.size()) + 1;
  for (const auto& b : m.encoder) n += b.shortcut ? 4 : 3;
  return n;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const KpConvModel& model) {
  model.validate();
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kWeightFileVersion);
  w.u32(layer_count(model));
  write_conv(w, model.stem, Role::kStem, 0, false);
  for (std::size_t i = 0; i < model.encoder.size(); ++i) {
    write_block(w, model.encoder[i], static_cast<std::uint32_t>((i + 1) / 2));
  }
  for (std::size_t i = 0; i < model.decoder.size(); ++i) {
    write_unary(w, model.decoder[i], Role::kDecoder,
                static_cast<std::uint32_t>(kStageCount - 2 - i), false);
  }
  write_unary(w, model.head, Role::kHead, 0, false);
  return w.take();
}

KpConvModel deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw BadMagicError("not a KP3FEAT weight file");
  const std::uint32_t version = r.u32();
  if (version != kWeightFileVersion) {
    throw VersionMismatchError("unsupported weight file version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  if (count > 4096) throw ShapeMismatchError("implausible layer count");
  std::vector<Record> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) records.push_back(read_record(r));
  if (!r.done()) throw ShapeMismatchError("trailing bytes after the last layer");

  RecordCursor cur(std::move(records));
  KpConvModel model;
  model.stem = cur.take(Kind::kConv, Role::kStem, 0).conv;
  model.encoder.push_back(read_block(cur, 0));
  for (std::uint32_t s = 1; s < kStageCount; ++s) {
    model.encoder.push_back(read_block(cur, s));
    model.encoder.push_back(read_block(cur, s));
  }
  for (std::size_t i = 0; i + 1 < kStageCount; ++i) {
    model.decoder.push_back(
        cur.take(Kind::kUnary, Role::kDecoder, static_cast<std::uint32_t>(kStageCount - 2 - i)).unary);
  }
  model.head = cur.take(Kind::kUnary, Role::kHead, 0).unary;
  if (!cur.exhausted()) throw ShapeMismatchError("weight file has extra layers");
  model.validate();
  return model;
}

void save_weights(const KpConvModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

KpConvModel load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weight file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace kpfeat
