#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace udarc {

// Half-open character offsets of one token into the source text.
struct TokenSpan {
  int token_index = 0;
  int char_start = 0;
  int char_end = 0;
};

// Subword vocabulary with six reserved ids. Continuation pieces carry a "##"
// prefix. Immutable after construction.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kLm = 5;
  static constexpr int kNumSpecials = 6;

  static const std::array<std::string, kNumSpecials>& specials();

  // Frequency-ranked construction: specials, every single character seen,
  // whole words by frequency, then "##" suffix pieces by frequency. Ties
  // break lexicographically. Deterministic for a given corpus.
  static Vocabulary build(const std::vector<std::string>& corpus, int target_size);

  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(const std::string& token) const;
  // -1 when absent.
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

  // Construct directly from an ordered token list (line order = id).
  static Vocabulary from_tokens(std::vector<std::string> tokens);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Pre-tokens: maximal runs of non-space non-punctuation characters, plus each
// punctuation character on its own. Offsets reference the original text.
struct PreToken {
  std::string lower;
  int char_start = 0;
  int char_end = 0;
};
std::vector<PreToken> pre_tokenize(const std::string& text);

// Greedy longest-match subword segmentation with offset tracking. Total and
// deterministic; unmatched residues map to [UNK].
std::vector<std::pair<int, TokenSpan>> tokenize(const std::string& text,
                                                const Vocabulary& vocab);

// Inverse of tokenize up to lowercasing: fuses "##" continuations, joins with
// single spaces, drops the reserved specials.
std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

}  // namespace udarc
