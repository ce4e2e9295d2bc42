#include "udarc/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "udarc/errors.hpp"

namespace udarc {

namespace {

constexpr int kMaxPieceChars = 100;  // longer pre-tokens map straight to [UNK]

bool is_word_char(unsigned char c) {
  return !std::isspace(c) && !std::ispunct(c);
}

std::string lower_ascii(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

const std::array<std::string, Vocabulary::kNumSpecials>& Vocabulary::specials() {
  static const std::array<std::string, kNumSpecials> kSpecials = {
      "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[LM]"};
  return kSpecials;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumSpecials) {
    throw InputError("vocabulary must hold at least the " +
                     std::to_string(kNumSpecials) + " reserved tokens");
  }
  for (int i = 0; i < kNumSpecials; ++i) {
    if (tokens[static_cast<std::size_t>(i)] != specials()[static_cast<std::size_t>(i)]) {
      throw InputError("vocabulary id " + std::to_string(i) + " must be " +
                       specials()[static_cast<std::size_t>(i)] + ", got " +
                       tokens[static_cast<std::size_t>(i)]);
    }
  }
  Vocabulary v;
  v.id_to_token_ = std::move(tokens);
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    auto [it, inserted] = v.token_to_id_.emplace(v.id_to_token_[i], static_cast<int>(i));
    if (!inserted) throw InputError("duplicate vocabulary token: " + v.id_to_token_[i]);
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, int target_size) {
  bool any_text = false;
  // word -> frequency over the whole corpus
  std::map<std::string, long long> word_freq;
  std::map<std::string, long long> char_freq;
  for (const std::string& text : corpus) {
    for (const PreToken& pt : pre_tokenize(text)) {
      any_text = true;
      word_freq[pt.lower] += 1;
      for (char c : pt.lower) char_freq[std::string(1, c)] += 1;
    }
  }
  if (!any_text) throw InputError("build_vocab: empty corpus");

  const int min_size = kNumSpecials + static_cast<int>(char_freq.size());
  if (target_size < min_size) {
    throw InputError("build_vocab: target_size " + std::to_string(target_size) +
                     " below minimum " + std::to_string(min_size) +
                     " (specials plus distinct characters)");
  }

  std::vector<std::string> tokens(specials().begin(), specials().end());
  auto ranked = [](const std::map<std::string, long long>& freq) {
    std::vector<std::pair<std::string, long long>> v(freq.begin(), freq.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    return v;
  };

  std::unordered_map<std::string, bool> present;
  for (const std::string& t : tokens) present[t] = true;
  auto push = [&](const std::string& t) {
    if (static_cast<int>(tokens.size()) >= target_size) return false;
    if (!present.emplace(t, true).second) return true;  // already in
    tokens.push_back(t);
    return true;
  };

  for (const auto& [c, f] : ranked(char_freq)) push(c);
  for (const auto& [w, f] : ranked(word_freq)) {
    if (static_cast<int>(tokens.size()) >= target_size) break;
    push(w);
  }

  if (static_cast<int>(tokens.size()) < target_size) {
    std::map<std::string, long long> suffix_freq;
    for (const auto& [w, f] : word_freq) {
      for (std::size_t i = 1; i < w.size(); ++i) {
        suffix_freq["##" + w.substr(i)] += f;
      }
    }
    for (const auto& [s, f] : ranked(suffix_freq)) {
      if (static_cast<int>(tokens.size()) >= target_size) break;
      push(s);
    }
  }

  if (static_cast<int>(tokens.size()) < target_size) {
    throw InputError("build_vocab: corpus yields only " + std::to_string(tokens.size()) +
                     " distinct pieces, below target_size " + std::to_string(target_size));
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open vocabulary file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);  // binary keeps newlines LF everywhere
  if (!out) throw InputError("cannot write vocabulary file: " + path);
  for (const std::string& t : id_to_token_) out << t << '\n';
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range [0," +
                     std::to_string(size()) + ")");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<PreToken> pre_tokenize(const std::string& text) {
  std::vector<PreToken> out;
  const int n = static_cast<int>(text.size());
  int i = 0;
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[static_cast<std::size_t>(i)]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (std::ispunct(c)) {
      out.push_back({lower_ascii(text.substr(static_cast<std::size_t>(i), 1)), i, i + 1});
      ++i;
      continue;
    }
    int j = i + 1;
    while (j < n && is_word_char(static_cast<unsigned char>(text[static_cast<std::size_t>(j)]))) {
      ++j;
    }
    out.push_back({lower_ascii(text.substr(static_cast<std::size_t>(i),
                                           static_cast<std::size_t>(j - i))),
                   i, j});
    i = j;
  }
  return out;
}

std::vector<std::pair<int, TokenSpan>> tokenize(const std::string& text,
                                                const Vocabulary& vocab) {
  std::vector<std::pair<int, TokenSpan>> out;
  auto emit = [&out](int id, int start, int end) {
    TokenSpan span;
    span.token_index = static_cast<int>(out.size());
    span.char_start = start;
    span.char_end = end;
    out.emplace_back(id, span);
  };

  for (const PreToken& pt : pre_tokenize(text)) {
    const std::string& w = pt.lower;
    const int len = static_cast<int>(w.size());
    if (len > kMaxPieceChars) {
      emit(Vocabulary::kUnk, pt.char_start, pt.char_end);
      continue;
    }
    int pos = 0;
    bool first = true;
    while (pos < len) {
      int match_len = 0;
      int match_id = -1;
      for (int l = len - pos; l >= 1; --l) {
        std::string piece = w.substr(static_cast<std::size_t>(pos), static_cast<std::size_t>(l));
        if (!first) piece = "##" + piece;
        const int id = vocab.id(piece);
        if (id >= 0) {
          match_len = l;
          match_id = id;
          break;
        }
      }
      if (match_id < 0) {
        // No piece matches here: the whole residue becomes one [UNK].
        emit(Vocabulary::kUnk, pt.char_start + pos, pt.char_end);
        break;
      }
      emit(match_id, pt.char_start + pos, pt.char_start + pos + match_len);
      pos += match_len;
      first = false;
    }
  }
  return out;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);  // throws on unknown id
    if (vocab.is_special(id)) continue;
    if (tok.rfind("##", 0) == 0) {
      out += tok.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

}  // namespace udarc
