#include "dipa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dipa/error.hpp"

namespace dipa {

using ad::Shape;
using ad::Tensor;
using ad::Value;

Checkpoint Checkpoint::clone() const {
  Checkpoint c;
  c.net = net.clone();
  c.antitypes = antitypes;
  c.push = push;
  c.meta_json = meta_json;
  return c;
}

namespace {

constexpr char kMagic[8] = {'D', 'I', 'P', 'A', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> v) {
    for (float x : v) f32(x);
  }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void str(const std::string& s) {
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t>& buffer() { return buf_; }
  void patch_u64(std::size_t at, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  void patch_u32(std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, std::size_t pos = 0, std::size_t end = SIZE_MAX)
      : b_(b), pos_(pos), end_(std::min(end, b.size())) {}
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw FormatError("checkpoint: truncated data at offset " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::vector<float> f32s(std::size_t n) {
    need(n * 4);
    std::vector<float> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_;
  std::size_t end_;
};

void write_section(Writer& w, Section tag, const Checkpoint& c) {
  const auto& protos = c.net.prototypes();
  switch (tag) {
    case Section::Encoder: {
      const auto& params = c.net.encoder().parameters();
      w.u32(static_cast<std::uint32_t>(params.size()));
      for (const auto& p : params) {
        w.u32(static_cast<std::uint32_t>(p.shape().size()));
        for (auto d : p.shape()) w.u64(static_cast<std::uint64_t>(d));
        w.f32s(p.data().values());
      }
      break;
    }
    case Section::Prototypes: w.f32s(protos.vectors.data().values()); break;
    case Section::Active:
      for (auto a : protos.active) w.u8(a ? 1 : 0);
      break;
    case Section::ClassOf:
      for (int k : protos.class_of) w.u32(static_cast<std::uint32_t>(k));
      break;
    case Section::Head: w.f32s(c.net.head().w.data().values()); break;
    case Section::Antitypes:
      w.u32(static_cast<std::uint32_t>(c.antitypes.size()));
      w.u32(static_cast<std::uint32_t>(c.antitypes.dim()));
      w.f32s(c.antitypes.raw());
      for (int s = 0; s < c.antitypes.size(); ++s) {
        w.u32(static_cast<std::uint32_t>(c.antitypes.provenance(s).round));
        w.u32(static_cast<std::uint32_t>(c.antitypes.provenance(s).prototype));
      }
      break;
    case Section::Push:
      w.u32(static_cast<std::uint32_t>(c.push.records.size()));
      for (const auto& r : c.push.records) {
        w.i32(r.image_index);
        w.u32(static_cast<std::uint32_t>(r.cell_row));
        w.u32(static_cast<std::uint32_t>(r.cell_col));
        w.f32(r.distance_moved);
        w.u32(static_cast<std::uint32_t>(r.image_id.size()));
        w.str(r.image_id);
      }
      break;
    case Section::Meta: w.str(c.meta_json); break;
  }
}

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& c) {
  const auto& cfg = c.net.config();
  const auto& enc = cfg.encoder;
  Writer w;
  for (char m : kMagic) w.u8(static_cast<std::uint8_t>(m));
  w.u32(kCheckpointVersion);
  const std::size_t header_size_at = w.size();
  w.u32(0);
  w.u32(static_cast<std::uint32_t>(enc.input_height));
  w.u32(static_cast<std::uint32_t>(enc.input_width));
  w.u32(static_cast<std::uint32_t>(enc.input_channels));
  w.u32(static_cast<std::uint32_t>(enc.conv_blocks.size()));
  for (const auto& b : enc.conv_blocks) {
    w.u32(static_cast<std::uint32_t>(b.channels));
    w.u32(static_cast<std::uint32_t>(b.stride));
  }
  w.u32(static_cast<std::uint32_t>(enc.grid_height));
  w.u32(static_cast<std::uint32_t>(enc.grid_width));
  w.u32(static_cast<std::uint32_t>(enc.latent_dim));
  w.u32(static_cast<std::uint32_t>(c.net.prototypes().size()));
  w.u32(static_cast<std::uint32_t>(enc.latent_dim));
  w.u32(static_cast<std::uint32_t>(cfg.num_classes));
  w.u32(static_cast<std::uint32_t>(cfg.per_class));
  w.f32(cfg.epsilon);
  w.patch_u32(header_size_at, static_cast<std::uint32_t>(w.size()));

  constexpr Section order[] = {Section::Encoder, Section::Prototypes, Section::Active,
                               Section::ClassOf, Section::Head,       Section::Antitypes,
                               Section::Push,    Section::Meta};
  w.u32(static_cast<std::uint32_t>(std::size(order)));
  const std::size_t table_at = w.size();
  for (Section s : order) {
    w.u32(static_cast<std::uint32_t>(s));
    w.u32(0);
    w.u64(0);
    w.u64(0);
  }
  for (std::size_t i = 0; i < std::size(order); ++i) {
    const std::size_t start = w.size();
    write_section(w, order[i], c);
    w.patch_u64(table_at + i * 24 + 8, start);
    w.patch_u64(table_at + i * 24 + 16, w.size() - start);
  }
  return std::move(w.buffer());
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic");
  Reader r(bytes, 8);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto header_size = r.u32();
  model::ModelConfig cfg;
  auto& enc = cfg.encoder;
  enc.input_height = static_cast<int>(r.u32());
  enc.input_width = static_cast<int>(r.u32());
  enc.input_channels = static_cast<int>(r.u32());
  const auto blocks = r.u32();
  if (blocks > 64) throw FormatError("checkpoint: implausible conv block count");
  enc.conv_blocks.clear();
  for (std::uint32_t i = 0; i < blocks; ++i) {
    model::ConvBlock b;
    b.channels = static_cast<int>(r.u32());
    b.stride = static_cast<int>(r.u32());
    enc.conv_blocks.push_back(b);
  }
  enc.grid_height = static_cast<int>(r.u32());
  enc.grid_width = static_cast<int>(r.u32());
  enc.latent_dim = static_cast<int>(r.u32());
  const auto N = r.u32(), D = r.u32(), K = r.u32();
  cfg.num_classes = static_cast<int>(K);
  cfg.per_class = static_cast<int>(r.u32());
  cfg.epsilon = r.f32();
  if (r.pos() != header_size) throw FormatError("checkpoint: header size mismatch");
  if (D != static_cast<std::uint32_t>(enc.latent_dim) ||
      N != static_cast<std::uint32_t>(cfg.num_prototypes()))
    throw FormatError("checkpoint: inconsistent N/D in header");

  Checkpoint c;
  c.net = model::ProtoPNet(cfg, 0);
  const auto sections = r.u32();
  struct Entry {
    std::uint32_t tag;
    std::uint64_t offset, size;
  };
  std::vector<Entry> table;
  for (std::uint32_t i = 0; i < sections; ++i) {
    Entry e;
    e.tag = r.u32();
    r.u32();
    e.offset = r.u64();
    e.size = r.u64();
    if (e.offset + e.size > bytes.size()) throw FormatError("checkpoint: section out of bounds");
    table.push_back(e);
  }
  auto& protos = c.net.prototypes();
  for (const auto& e : table) {
    Reader s(bytes, e.offset, e.offset + e.size);
    switch (static_cast<Section>(e.tag)) {
      case Section::Encoder: {
        auto& params = c.net.encoder().parameters();
        const auto count = s.u32();
        if (count != params.size()) throw FormatError("checkpoint: encoder tensor count mismatch");
        for (auto& p : params) {
          Shape shape(s.u32());
          for (auto& d : shape) d = static_cast<std::int64_t>(s.u64());
          if (shape != p.shape()) throw FormatError("checkpoint: encoder tensor shape mismatch");
          p = Value::parameter(Tensor(shape, s.f32s(static_cast<std::size_t>(ad::numel(shape)))));
        }
        break;
      }
      case Section::Prototypes:
        protos.vectors = Value::parameter(Tensor(Shape{N, D}, s.f32s(std::size_t{N} * D)));
        break;
      case Section::Active:
        for (auto& a : protos.active) a = s.u8() ? 1 : 0;
        break;
      case Section::ClassOf:
        for (auto& k : protos.class_of) {
          k = static_cast<int>(s.u32());
          if (k < 0 || k >= cfg.num_classes) throw FormatError("checkpoint: class id out of range");
        }
        break;
      case Section::Head:
        c.net.head().w = Value::parameter(Tensor(Shape{N, K}, s.f32s(std::size_t{N} * K)));
        break;
      case Section::Antitypes: {
        const auto S = s.u32(), dim = s.u32();
        const auto vec = s.f32s(std::size_t{S} * dim);
        c.antitypes = loss::AntitypeSet(static_cast<int>(dim));
        std::vector<loss::AntitypeProvenance> prov(S);
        for (auto& p : prov) {
          p.round = static_cast<int>(s.u32());
          p.prototype = static_cast<int>(s.u32());
        }
        for (std::uint32_t i = 0; i < S; ++i)
          c.antitypes.insert(std::span<const float>(vec.data() + std::size_t{i} * dim, dim), prov[i]);
        break;
      }
      case Section::Push: {
        const auto count = s.u32();
        c.push.records.clear();
        for (std::uint32_t i = 0; i < count; ++i) {
          model::PushRecord rec;
          rec.prototype = static_cast<int>(i);
          rec.image_index = s.i32();
          rec.cell_row = static_cast<int>(s.u32());
          rec.cell_col = static_cast<int>(s.u32());
          rec.distance_moved = s.f32();
          rec.image_id = s.str(s.u32());
          c.push.records.push_back(std::move(rec));
        }
        break;
      }
      case Section::Meta: c.meta_json = s.str(static_cast<std::size_t>(e.size)); break;
      default: break;  // unknown sections are skipped
    }
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::string content_hash(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = hex[h & 0xf];
  return s;
}

}  // namespace dipa
