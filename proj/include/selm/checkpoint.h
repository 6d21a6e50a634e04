#ifndef SELM_CHECKPOINT_H_
#define SELM_CHECKPOINT_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "selm/tensor.h"

namespace selm {

inline constexpr char kCheckpointMagic[9] = "SELMCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Container shared by language-model and SELM checkpoints.
//
//   magic "SELMCKPT" | u32 version
//   u32 n_config  { u32 len, key bytes, i64 value }*
//   u32 n_meta    { u32 len, key bytes, u32 len, value bytes }*
//   u32 n_tensors { u32 len, name bytes, u32 rank, u32 dims[rank], f32 values }*
//
// All integers and floats little-endian; tensors in lexicographic name order.
struct CheckpointData {
  std::map<std::string, std::int64_t> config;
  std::map<std::string, std::string> metadata;
  std::map<std::string, Tensor> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

// Little-endian cursor over a byte buffer; every read bounds-checks and
// reports the failing offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32();
  std::uint16_t u16();
  std::int64_t i64();
  float f32();
  std::string bytes(std::size_t n);
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void require(std::size_t n, const char* what);

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u16(std::uint16_t v);
  void i64(std::int64_t v);
  void f32(float v);
  void bytes(std::string_view s);
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

}  // namespace selm

#endif  // SELM_CHECKPOINT_H_
