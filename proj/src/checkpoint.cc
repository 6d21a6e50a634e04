#include "selm/checkpoint.h"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "selm/errors.h"

namespace selm {

void ByteReader::require(std::size_t n, const char* what) {
  if (bytes_.size() - pos_ < n) {
    throw FormatError(std::string("truncated input while reading ") + what, pos_);
  }
}

std::uint32_t ByteReader::u32() {
  require(4, "u32");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + i];
  pos_ += 4;
  return v;
}

std::uint16_t ByteReader::u16() {
  require(2, "u16");
  auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::int64_t ByteReader::i64() {
  require(8, "i64");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes_[pos_ + i];
  pos_ += 8;
  return static_cast<std::int64_t>(v);
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::bytes(std::size_t n) {
  require(n, "byte string");
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u16(std::uint16_t v) {
  out_.push_back(static_cast<std::uint8_t>(v));
  out_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::i64(std::int64_t v) {
  auto u = static_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 8));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(data.config.size()));
  for (const auto& [key, value] : data.config) {
    w.u32(static_cast<std::uint32_t>(key.size()));
    w.bytes(key);
    w.i64(value);
  }
  w.u32(static_cast<std::uint32_t>(data.metadata.size()));
  for (const auto& [key, value] : data.metadata) {
    w.u32(static_cast<std::uint32_t>(key.size()));
    w.bytes(key);
    w.u32(static_cast<std::uint32_t>(value.size()));
    w.bytes(value);
  }
  w.u32(static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& [name, t] : data.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  return std::move(w.buffer());
}

CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(8) != std::string_view(kCheckpointMagic, 8)) {
    throw FormatError("bad checkpoint magic", 0);
  }
  const std::size_t version_at = r.offset();
  if (r.u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version", version_at);
  CheckpointData data;
  const std::uint32_t n_config = r.u32();
  for (std::uint32_t i = 0; i < n_config; ++i) {
    std::string key = r.bytes(r.u32());
    data.config[key] = r.i64();
  }
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string key = r.bytes(r.u32());
    data.metadata[key] = r.bytes(r.u32());
  }
  const std::uint32_t n_tensors = r.u32();
  std::string previous;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::size_t at = r.offset();
    std::string name = r.bytes(r.u32());
    if (i > 0 && name <= previous) throw FormatError("tensor names not in lexicographic order", at);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank", at);
    std::vector<std::int64_t> shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = r.u32();
      count *= static_cast<std::uint64_t>(d);
    }
    if (count * 4 > bytes.size() - r.offset()) throw FormatError("truncated tensor payload", r.offset());
    std::vector<float> values(count);
    for (auto& v : values) v = r.f32();
    data.tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
    previous = std::move(name);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.offset());
  return data;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path);
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

}  // namespace selm
