#include "selm/tokenizer.h"

#include <fstream>
#include <limits>
#include <sstream>

#include "selm/errors.h"

namespace selm {
namespace {

enum class CharClass { kLetter, kDigit, kSpace, kOther };

CharClass classify(unsigned char c) {
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) return CharClass::kLetter;
  if (c >= '0' && c <= '9') return CharClass::kDigit;
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
    return CharClass::kSpace;
  }
  return CharClass::kOther;
}

const char* const kSpecialNames[kSpecialCount] = {"<pad>", "<bos>", "<eos>"};
constexpr std::string_view kHeader = "#selm-bpe v1";

std::string escape_bytes(std::string_view bytes) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : bytes) {
    if (c > 0x20 && c < 0x7f && c != '\\') {
      out.push_back(static_cast<char>(c));
    } else {
      out += "\\x";
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 15]);
    }
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string unescape_bytes(std::string_view text, std::uint64_t offset) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '\\') {
      out.push_back(text[i]);
      continue;
    }
    if (i + 3 >= text.size()) {
      throw FormatError("truncated byte escape", offset + i);
    }
    if (text[i + 1] != 'x') throw FormatError("unknown escape", offset + i);
    int hi = hex_value(text[i + 2]), lo = hex_value(text[i + 3]);
    if (hi < 0 || lo < 0) throw FormatError("bad hex escape", offset + i);
    out.push_back(static_cast<char>(hi * 16 + lo));
    i += 3;
  }
  return out;
}

}  // namespace

std::vector<std::string_view> split_chunks(std::string_view text) {
  std::vector<std::string_view> chunks;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto cls = [&](std::size_t k) { return classify(static_cast<unsigned char>(text[k])); };
  while (i < n) {
    const std::size_t start = i;
    if (text[i] == ' ' && i + 1 < n && cls(i + 1) != CharClass::kSpace) ++i;
    const CharClass c = cls(i);
    if (c == CharClass::kSpace) {
      std::size_t j = i;
      while (j < n && cls(j) == CharClass::kSpace) ++j;
      // Leave a trailing single space to lead the next word.
      if (j < n && j - i > 1 && text[j - 1] == ' ') --j;
      i = j;
    } else {
      while (i < n && cls(i) == c) ++i;
    }
    chunks.push_back(text.substr(start, i - start));
  }
  return chunks;
}

Vocabulary::Vocabulary() {
  for (int s = 0; s < kSpecialCount; ++s) pieces_.emplace_back();
  for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
}

const std::string& Vocabulary::piece(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(size()));
  }
  return pieces_[id];
}

void Vocabulary::add_merge(TokenId left, TokenId right) {
  const auto id = static_cast<TokenId>(pieces_.size());
  pieces_.push_back(pieces_[left] + pieces_[right]);
  merges_.emplace_back(left, right);
  merge_result_.emplace(std::make_pair(left, right), id);
}

Vocabulary Vocabulary::train(const std::vector<std::string>& corpus, int target_size) {
  if (target_size < kMinVocabSize) {
    throw ConfigError("target vocabulary " + std::to_string(target_size) + " below minimum " +
                      std::to_string(kMinVocabSize));
  }
  if (corpus.empty()) throw DataError("empty corpus for BPE training");
  Vocabulary vocab;
  std::map<std::string, std::int64_t> chunk_counts;
  for (const auto& line : corpus) {
    for (auto chunk : split_chunks(line)) chunk_counts[std::string(chunk)] += 1;
  }
  std::vector<std::pair<TokenSequence, std::int64_t>> words;
  for (const auto& [chunk, count] : chunk_counts) {
    TokenSequence ids;
    for (unsigned char c : chunk) ids.push_back(kFirstByteId + c);
    words.emplace_back(std::move(ids), count);
  }
  while (vocab.size() < target_size) {
    std::map<std::pair<TokenId, TokenId>, std::int64_t> pair_counts;
    for (const auto& [ids, count] : words) {
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) pair_counts[{ids[i], ids[i + 1]}] += count;
    }
    const std::pair<TokenId, TokenId>* best = nullptr;
    std::int64_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      } else if (count == best_count && best != nullptr) {
        const auto& a = vocab.pieces_;
        if (std::make_pair(a[pair.first], a[pair.second]) <
            std::make_pair(a[best->first], a[best->second])) {
          best = &pair;
        }
      }
    }
    if (best == nullptr || best_count < 2) break;
    const auto [left, right] = *best;
    vocab.add_merge(left, right);
    const TokenId merged = vocab.size() - 1;
    for (auto& [ids, _] : words) {
      TokenSequence next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == left && ids[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids = std::move(next);
    }
  }
  return vocab;
}

void Vocabulary::encode_chunk(std::string_view chunk, TokenSequence& out) const {
  TokenSequence ids;
  ids.reserve(chunk.size());
  for (unsigned char c : chunk) ids.push_back(kFirstByteId + c);
  while (ids.size() > 1) {
    TokenId best = std::numeric_limits<TokenId>::max();
    std::pair<TokenId, TokenId> best_pair{};
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = merge_result_.find({ids[i], ids[i + 1]});
      if (it != merge_result_.end() && it->second < best) {
        best = it->second;
        best_pair = it->first;
      }
    }
    if (best == std::numeric_limits<TokenId>::max()) break;
    TokenSequence next;
    next.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i + 1 < ids.size() && ids[i] == best_pair.first && ids[i + 1] == best_pair.second) {
        next.push_back(best);
        ++i;
      } else {
        next.push_back(ids[i]);
      }
    }
    ids = std::move(next);
  }
  out.insert(out.end(), ids.begin(), ids.end());
}

TokenSequence Vocabulary::encode(std::string_view text) const {
  TokenSequence out;
  for (auto chunk : split_chunks(text)) encode_chunk(chunk, out);
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += piece(id);
  return out;
}

std::string Vocabulary::serialize() const {
  std::ostringstream os;
  os << kHeader << '\n';
  os << "size " << size() << '\n';
  for (int s = 0; s < kSpecialCount; ++s) os << "special " << s << ' ' << kSpecialNames[s] << '\n';
  for (std::size_t m = 0; m < merges_.size(); ++m) {
    const int id = kMinVocabSize + static_cast<int>(m);
    os << "merge " << id << ' ' << merges_[m].first << ' ' << merges_[m].second << ' '
       << escape_bytes(pieces_[id]) << '\n';
  }
  return os.str();
}

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary vocab;
  std::uint64_t offset = 0;
  int line_no = 0;
  int declared_size = -1;
  while (offset < text.size()) {
    std::size_t end = text.find('\n', offset);
    if (end == std::string_view::npos) throw FormatError("missing final newline", offset);
    std::string_view line = text.substr(offset, end - offset);
    std::istringstream is{std::string(line)};
    std::string kind;
    is >> kind;
    if (line_no == 0) {
      if (line != kHeader) throw FormatError("bad vocabulary header", offset);
    } else if (kind == "size") {
      if (!(is >> declared_size)) throw FormatError("bad size record", offset);
    } else if (kind == "special") {
      int id = -1;
      std::string name;
      if (!(is >> id >> name) || id < 0 || id >= kSpecialCount || name != kSpecialNames[id]) {
        throw FormatError("bad special record", offset);
      }
    } else if (kind == "merge") {
      int id = -1, left = -1, right = -1;
      std::string escaped;
      if (!(is >> id >> left >> right >> escaped)) throw FormatError("bad merge record", offset);
      if (id != vocab.size() || left < kSpecialCount || right < kSpecialCount ||
          left >= vocab.size() || right >= vocab.size()) {
        throw FormatError("merge record out of order", offset);
      }
      vocab.add_merge(left, right);
      if (unescape_bytes(escaped, offset) != vocab.pieces_.back()) {
        throw FormatError("merge bytes disagree with merge pair", offset);
      }
    } else {
      throw FormatError("unknown record '" + kind + "'", offset);
    }
    offset = end + 1;
    ++line_no;
  }
  if (line_no == 0) throw FormatError("empty vocabulary file", 0);
  if (declared_size != vocab.size()) throw FormatError("size record disagrees with merges", 0);
  return vocab;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << serialize();
  if (!f) throw IoError("write failed for " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

}  // namespace selm
