#ifndef SELM_TOKENIZER_H_
#define SELM_TOKENIZER_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace selm {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kFirstByteId = 3;
inline constexpr int kSpecialCount = 3;
inline constexpr int kMinVocabSize = 256 + kSpecialCount;

// Splits text into pre-tokenization chunks: a run of letters, digits or
// punctuation, optionally led by one space, or a run of whitespace. Merges
// never cross chunk boundaries.
std::vector<std::string_view> split_chunks(std::string_view text);

// Byte-level BPE vocabulary. Ids: 0..2 specials, 3..258 raw bytes, then one
// id per merge in creation order.
class Vocabulary {
 public:
  Vocabulary();

  // Greedy highest-count pair merging until `target_size` ids exist or no
  // pair occurs at least twice. Ties go to the lexicographically smaller
  // (left bytes, right bytes) pair.
  static Vocabulary train(const std::vector<std::string>& corpus, int target_size);

  TokenSequence encode(std::string_view text) const;
  // Special ids decode to nothing.
  std::string decode(std::span<const TokenId> ids) const;

  int size() const { return static_cast<int>(pieces_.size()); }
  const std::string& piece(TokenId id) const;
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }
  bool is_special(TokenId id) const { return id >= 0 && id < kSpecialCount; }

  // Line-oriented text form; see README for the grammar.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& other) const {
    return pieces_ == other.pieces_ && merges_ == other.merges_;
  }

 private:
  void add_merge(TokenId left, TokenId right);
  void encode_chunk(std::string_view chunk, TokenSequence& out) const;

  std::vector<std::string> pieces_;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::map<std::pair<TokenId, TokenId>, TokenId> merge_result_;
};

}  // namespace selm

#endif  // SELM_TOKENIZER_H_
