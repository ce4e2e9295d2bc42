#include "udarc/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "udarc/errors.hpp"

namespace udarc {

using nlohmann::json;

namespace {

json parse_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

const json& field(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) throw ParseError("expected object at " + path);
  auto it = j.find(key);
  if (it == j.end()) throw ParseError("missing field '" + std::string(key) + "' at " + path);
  return *it;
}

std::string str_field(const json& j, const char* key, const std::string& path) {
  const json& v = field(j, key, path);
  if (!v.is_string()) throw ParseError("field '" + std::string(key) + "' at " + path +
                                       " is not a string");
  return v.get<std::string>();
}

void check_alignment(const std::string& context, const GoldAnswer& gold,
                     const std::string& example_id) {
  if (gold.text.empty() || gold.char_start < 0 ||
      gold.char_start + gold.text.size() > context.size() ||
      context.compare(static_cast<std::size_t>(gold.char_start), gold.text.size(), gold.text) !=
          0) {
    throw InputError("answer alignment failed for example " + example_id + ": \"" + gold.text +
                     "\" not at offset " + std::to_string(gold.char_start));
  }
}

}  // namespace

PassageCorpus PassageCorpus::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open passage corpus: " + path);
  PassageCorpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    corpus.passages.push_back(line);
  }
  return corpus;
}

std::vector<RCExample> parse_squad(const std::string& path) {
  const json root = parse_json_file(path);
  const json& data = field(root, "data", path);
  if (!data.is_array()) throw ParseError("'data' is not an array in " + path);

  std::vector<RCExample> examples;
  for (std::size_t a = 0; a < data.size(); ++a) {
    const std::string apath = "data[" + std::to_string(a) + "]";
    const json& paragraphs = field(data[a], "paragraphs", apath);
    if (!paragraphs.is_array()) throw ParseError(apath + ".paragraphs is not an array");
    for (std::size_t p = 0; p < paragraphs.size(); ++p) {
      const std::string ppath = apath + ".paragraphs[" + std::to_string(p) + "]";
      const std::string context = str_field(paragraphs[p], "context", ppath);
      const json& qas = field(paragraphs[p], "qas", ppath);
      if (!qas.is_array()) throw ParseError(ppath + ".qas is not an array");
      for (std::size_t q = 0; q < qas.size(); ++q) {
        const std::string qpath = ppath + ".qas[" + std::to_string(q) + "]";
        RCExample ex;
        ex.id = str_field(qas[q], "id", qpath);
        ex.passage = context;
        ex.query = str_field(qas[q], "question", qpath);
        if (ex.query.empty()) throw ParseError("empty question at " + qpath);
        const json& answers = field(qas[q], "answers", qpath);
        if (!answers.is_array() || answers.empty()) {
          throw ParseError("missing or empty 'answers' at " + qpath);
        }
        for (std::size_t an = 0; an < answers.size(); ++an) {
          const std::string anpath = qpath + ".answers[" + std::to_string(an) + "]";
          GoldAnswer gold;
          gold.text = str_field(answers[an], "text", anpath);
          const json& start = field(answers[an], "answer_start", anpath);
          if (!start.is_number_integer()) {
            throw ParseError("'answer_start' at " + anpath + " is not an integer");
          }
          gold.char_start = start.get<int>();
          check_alignment(context, gold, ex.id);
          ex.golds.push_back(std::move(gold));
        }
        examples.push_back(std::move(ex));
      }
    }
  }
  return examples;
}

std::vector<RCExample> parse_mrqa(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open file: " + path);
  std::vector<RCExample> examples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string lpath = path + ":" + std::to_string(lineno);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(lpath + ": " + e.what());
    }
    if (record.is_object() && record.contains("header")) continue;  // leading header record

    const std::string context = str_field(record, "context", lpath);
    const json& qas = field(record, "qas", lpath);
    if (!qas.is_array()) throw ParseError(lpath + ".qas is not an array");
    for (std::size_t q = 0; q < qas.size(); ++q) {
      const std::string qpath = lpath + ".qas[" + std::to_string(q) + "]";
      RCExample ex;
      ex.id = str_field(qas[q], "qid", qpath);
      ex.passage = context;
      ex.query = str_field(qas[q], "question", qpath);
      if (ex.query.empty()) throw ParseError("empty question at " + qpath);
      const json& detected = field(qas[q], "detected_answers", qpath);
      if (!detected.is_array() || detected.empty()) {
        throw ParseError("missing or empty 'detected_answers' at " + qpath);
      }
      for (std::size_t d = 0; d < detected.size(); ++d) {
        const std::string dpath = qpath + ".detected_answers[" + std::to_string(d) + "]";
        const json& spans = field(detected[d], "char_spans", dpath);
        if (!spans.is_array() || spans.empty()) {
          throw ParseError("missing or empty 'char_spans' at " + dpath);
        }
        for (std::size_t s = 0; s < spans.size(); ++s) {
          const json& span = spans[s];
          if (!span.is_array() || span.size() != 2 || !span[0].is_number_integer() ||
              !span[1].is_number_integer()) {
            throw ParseError("malformed char span at " + dpath + ".char_spans[" +
                             std::to_string(s) + "]");
          }
          const int begin = span[0].get<int>();
          const int end = span[1].get<int>();  // inclusive
          if (begin < 0 || end < begin || end >= static_cast<int>(context.size())) {
            throw InputError("answer alignment failed for example " + ex.id +
                             ": char span [" + std::to_string(begin) + "," +
                             std::to_string(end) + "] outside context");
          }
          GoldAnswer gold;
          gold.char_start = begin;
          gold.text = context.substr(static_cast<std::size_t>(begin),
                                     static_cast<std::size_t>(end - begin + 1));
          ex.golds.push_back(std::move(gold));
        }
      }
      examples.push_back(std::move(ex));
    }
  }
  return examples;
}

std::vector<RCFeature> build_rc_features(const RCExample& example, const Vocabulary& vocab,
                                         int max_len, int stride) {
  if (max_len < 8) throw ConfigError("max_len must be at least 8");
  if (stride < 1) throw ConfigError("stride must be positive");

  auto query_tokens = tokenize(example.query, vocab);
  // Keep the query head; always leave room for at least one passage token.
  const int qlen = std::min(static_cast<int>(query_tokens.size()), max_len - 4);
  const int capacity = max_len - 3 - qlen;
  if (stride > capacity) {
    throw ConfigError("stride " + std::to_string(stride) + " exceeds window capacity " +
                      std::to_string(capacity) + "; windows would skip passage tokens");
  }

  auto passage_tokens = tokenize(example.passage, vocab);
  const int n_passage = static_cast<int>(passage_tokens.size());

  // Answer span in passage-token indices, from the first gold answer.
  int ans_start_tok = -1, ans_end_tok = -1;
  if (!example.golds.empty()) {
    const GoldAnswer& gold = example.golds.front();
    const int s = gold.char_start;
    const int e = s + static_cast<int>(gold.text.size());  // half-open
    for (int i = 0; i < n_passage; ++i) {
      const TokenSpan& sp = passage_tokens[static_cast<std::size_t>(i)].second;
      if (ans_start_tok < 0 && sp.char_end > s) ans_start_tok = i;
      if (sp.char_start < e) ans_end_tok = i;
    }
    if (ans_start_tok < 0 || ans_end_tok < ans_start_tok) {
      ans_start_tok = ans_end_tok = -1;
    }
  }

  std::vector<RCFeature> features;
  int offset = 0;
  while (true) {
    const int wlen = std::min(capacity, n_passage - offset);
    RCFeature f;
    f.example_id = example.id;
    f.window_offset = offset;
    f.passage_begin = qlen + 2;
    f.passage_len = std::max(wlen, 0);
    f.real_len = qlen + 2 + f.passage_len + 1;

    f.input_ids.assign(static_cast<std::size_t>(max_len), Vocabulary::kPad);
    f.segment_ids.assign(static_cast<std::size_t>(max_len), 0);
    f.attention_mask.assign(static_cast<std::size_t>(max_len), 0);
    int pos = 0;
    f.input_ids[static_cast<std::size_t>(pos++)] = Vocabulary::kCls;
    for (int i = 0; i < qlen; ++i) {
      f.input_ids[static_cast<std::size_t>(pos++)] = query_tokens[static_cast<std::size_t>(i)].first;
    }
    f.input_ids[static_cast<std::size_t>(pos++)] = Vocabulary::kSep;
    for (int i = 0; i < f.passage_len; ++i) {
      const auto& [id, span] = passage_tokens[static_cast<std::size_t>(offset + i)];
      f.input_ids[static_cast<std::size_t>(pos)] = id;
      f.segment_ids[static_cast<std::size_t>(pos)] = 1;
      TokenSpan local = span;
      local.token_index = i;
      f.token_spans.push_back(local);
      ++pos;
    }
    f.input_ids[static_cast<std::size_t>(pos)] = Vocabulary::kSep;
    f.segment_ids[static_cast<std::size_t>(pos)] = 1;
    ++pos;
    for (int i = 0; i < pos; ++i) f.attention_mask[static_cast<std::size_t>(i)] = 1;

    if (ans_start_tok >= offset && ans_end_tok < offset + f.passage_len && ans_start_tok >= 0) {
      f.start_position = f.passage_begin + (ans_start_tok - offset);
      f.end_position = f.passage_begin + (ans_end_tok - offset);
    }
    features.push_back(std::move(f));

    if (offset + capacity >= n_passage) break;  // this window reached the last token
    offset += stride;
  }
  return features;
}

void apply_mlm_mask(std::vector<int>& input_ids, const std::vector<int>& maskable_positions,
                    const Vocabulary& vocab, Rng& rng, const MlmConfig& mlm,
                    std::vector<int>& labels_out) {
  labels_out.assign(input_ids.size(), kNoLabel);
  const int n_regular = vocab.size() - Vocabulary::kNumSpecials;
  for (int pos : maskable_positions) {
    const std::size_t p = static_cast<std::size_t>(pos);
    if (rng.uniform() >= mlm.select_prob) continue;
    labels_out[p] = input_ids[p];
    const double action = rng.uniform();
    if (action < mlm.mask_frac) {
      input_ids[p] = Vocabulary::kMask;
    } else if (action < mlm.mask_frac + mlm.random_frac && n_regular > 0) {
      input_ids[p] = Vocabulary::kNumSpecials + rng.uniform_int(n_regular);
    }
    // else: position stays unchanged but is still predicted
  }
}

LMFeature build_lm_feature(const std::string& passage, const Vocabulary& vocab, int max_len,
                           Rng& rng, const MlmConfig& mlm) {
  if (passage.empty()) throw ContractError("build_lm_feature: empty passage");
  if (max_len < 4) throw ConfigError("max_len must be at least 4 for LM instances");
  auto tokens = tokenize(passage, vocab);
  const int cap = max_len - 3;  // [CLS] [LM] ... [SEP]
  const int n = std::min(static_cast<int>(tokens.size()), cap);

  LMFeature f;
  f.input_ids.assign(static_cast<std::size_t>(max_len), Vocabulary::kPad);
  f.segment_ids.assign(static_cast<std::size_t>(max_len), 0);
  f.attention_mask.assign(static_cast<std::size_t>(max_len), 0);
  f.input_ids[0] = Vocabulary::kCls;
  f.input_ids[1] = Vocabulary::kLm;
  std::vector<int> maskable;
  for (int i = 0; i < n; ++i) {
    const int id = tokens[static_cast<std::size_t>(i)].first;
    f.input_ids[static_cast<std::size_t>(2 + i)] = id;
    if (!vocab.is_special(id)) maskable.push_back(2 + i);
  }
  f.input_ids[static_cast<std::size_t>(2 + n)] = Vocabulary::kSep;
  f.real_len = n + 3;
  for (int i = 0; i < f.real_len; ++i) f.attention_mask[static_cast<std::size_t>(i)] = 1;
  apply_mlm_mask(f.input_ids, maskable, vocab, rng, mlm, f.mlm_labels);
  return f;
}

std::vector<std::string> split_sentences(const std::string& passage) {
  std::vector<std::string> out;
  const int n = static_cast<int>(passage.size());
  int begin = 0;
  for (int i = 0; i < n; ++i) {
    const char c = passage[static_cast<std::size_t>(i)];
    if (c == '.' || c == '!' || c == '?') {
      const bool at_end = i + 1 >= n;
      const bool before_space =
          !at_end && std::isspace(static_cast<unsigned char>(passage[static_cast<std::size_t>(i + 1)]));
      if (at_end || before_space) {
        std::string sent = passage.substr(static_cast<std::size_t>(begin),
                                          static_cast<std::size_t>(i - begin + 1));
        const std::size_t first = sent.find_first_not_of(" \t");
        if (first != std::string::npos) out.push_back(sent.substr(first));
        begin = i + 1;
      }
    }
  }
  if (begin < n) {
    std::string rest = passage.substr(static_cast<std::size_t>(begin));
    const std::size_t first = rest.find_first_not_of(" \t");
    if (first != std::string::npos) out.push_back(rest.substr(first));
  }
  return out;
}

NspPairStream::NspPairStream(const PassageCorpus& corpus, const Vocabulary& vocab, int max_len,
                             MlmConfig mlm)
    : vocab_(vocab), max_len_(max_len), mlm_(mlm) {
  if (max_len < 8) throw ConfigError("pretrain max_len must be at least 8");
  for (const std::string& p : corpus.passages) {
    sentences_.push_back(split_sentences(p));
  }
  for (std::size_t i = 0; i < sentences_.size(); ++i) {
    if (sentences_[i].size() >= 2) pair_sources_.push_back(static_cast<int>(i));
  }
  if (pair_sources_.empty()) {
    throw InputError("corpus has no passage with two sentences; cannot build sentence pairs");
  }
}

NSPPairFeature NspPairStream::next(Rng& rng) {
  const int src = pair_sources_[static_cast<std::size_t>(
      rng.uniform_int(static_cast<int>(pair_sources_.size())))];
  const auto& sents = sentences_[static_cast<std::size_t>(src)];
  const int boundary = 1 + rng.uniform_int(static_cast<int>(sents.size()) - 1);
  const std::string& a_text = sents[static_cast<std::size_t>(boundary - 1)];
  std::string b_text = sents[static_cast<std::size_t>(boundary)];

  bool is_next = rng.uniform() < 0.5;
  if (!is_next) {
    // Replacement must come from a different passage that has any sentence.
    std::vector<int> others;
    for (std::size_t i = 0; i < sentences_.size(); ++i) {
      if (static_cast<int>(i) != src && !sentences_[i].empty()) others.push_back(static_cast<int>(i));
    }
    if (others.empty()) {
      is_next = true;  // degenerate corpus: only true-next pairs are possible
    } else {
      const int other = others[static_cast<std::size_t>(
          rng.uniform_int(static_cast<int>(others.size())))];
      const auto& osents = sentences_[static_cast<std::size_t>(other)];
      b_text = osents[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(osents.size())))];
    }
  }

  auto a_tok = tokenize(a_text, vocab_);
  auto b_tok = tokenize(b_text, vocab_);
  int a_len = static_cast<int>(a_tok.size());
  int b_len = static_cast<int>(b_tok.size());
  const int budget = max_len_ - 3;
  // Oversized pairs lose B tokens from the end first, then A if needed.
  if (a_len + b_len > budget) {
    b_len = std::max(1, budget - a_len);
    if (a_len + b_len > budget) {
      a_len = budget - b_len;
    }
  }

  NSPPairFeature f;
  f.is_next = is_next;
  f.input_ids.assign(static_cast<std::size_t>(max_len_), Vocabulary::kPad);
  f.segment_ids.assign(static_cast<std::size_t>(max_len_), 0);
  f.attention_mask.assign(static_cast<std::size_t>(max_len_), 0);
  std::vector<int> maskable;
  int pos = 0;
  f.input_ids[static_cast<std::size_t>(pos++)] = Vocabulary::kCls;
  for (int i = 0; i < a_len; ++i) {
    const int id = a_tok[static_cast<std::size_t>(i)].first;
    f.input_ids[static_cast<std::size_t>(pos)] = id;
    if (!vocab_.is_special(id)) maskable.push_back(pos);
    ++pos;
  }
  f.input_ids[static_cast<std::size_t>(pos++)] = Vocabulary::kSep;
  for (int i = 0; i < b_len; ++i) {
    const int id = b_tok[static_cast<std::size_t>(i)].first;
    f.input_ids[static_cast<std::size_t>(pos)] = id;
    f.segment_ids[static_cast<std::size_t>(pos)] = 1;
    if (!vocab_.is_special(id)) maskable.push_back(pos);
    ++pos;
  }
  f.input_ids[static_cast<std::size_t>(pos)] = Vocabulary::kSep;
  f.segment_ids[static_cast<std::size_t>(pos)] = 1;
  ++pos;
  f.real_len = pos;
  for (int i = 0; i < pos; ++i) f.attention_mask[static_cast<std::size_t>(i)] = 1;
  apply_mlm_mask(f.input_ids, maskable, vocab_, rng, mlm_, f.mlm_labels);
  return f;
}

}  // namespace udarc
