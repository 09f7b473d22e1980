#include "asvr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace asvr {

namespace {

constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }
  const std::string& buffer() const { return out_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view v(s_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  std::size_t remaining() const { return s_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrc::malformed, "checkpoint: truncated");
    }
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void feed(std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
};

}  // namespace

std::string encode_checkpoint(const nn::ParamList& tensors) {
  Writer w;
  w.bytes("ASVR");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  Fnv1a sum;
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw std::invalid_argument("checkpoint: name too long");
    if (t.rank() > 0xff) throw std::invalid_argument("checkpoint: rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(kDtypeF64);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    const std::size_t start = w.size();
    for (double v : t.data()) w.u64(std::bit_cast<std::uint64_t>(v));
    sum.feed(std::string_view(w.buffer()).substr(start));
  }
  w.u64(sum.h);
  return w.take();
}

nn::ParamList decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || r.bytes(4) != "ASVR") {
    throw CheckpointError(CheckpointErrc::bad_magic, "checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrc::bad_version,
                          "checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  nn::ParamList out;
  Fnv1a sum;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    std::string name(r.bytes(len));
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF64) {
      throw CheckpointError(CheckpointErrc::malformed,
                            "checkpoint: unknown dtype " + std::to_string(dtype) + " for '" + name + "'");
    }
    const std::uint8_t rank = r.u8();
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(r.u32());
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / 8) {
      throw CheckpointError(CheckpointErrc::malformed, "checkpoint: truncated payload for '" + name + "'");
    }
    auto payload = r.bytes(n * 8);
    sum.feed(payload);
    std::vector<double> values(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[k * 8 + b])) << (8 * b);
      values[k] = std::bit_cast<double>(bits);
    }
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  const std::uint64_t stored = r.u64();
  if (stored != sum.h) {
    throw CheckpointError(CheckpointErrc::bad_checksum, "checkpoint: payload checksum mismatch");
  }
  if (r.remaining() != 0) {
    throw CheckpointError(CheckpointErrc::malformed, "checkpoint: trailing bytes");
  }
  return out;
}

void save_checkpoint(const nn::ParamList& tensors, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointErrc::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrc::io, "failed writing " + path.string());
}

nn::ParamList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrc::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace asvr
