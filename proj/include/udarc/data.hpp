#pragma once

#include <string>
#include <vector>

#include "udarc/rng.hpp"
#include "udarc/tokenizer.hpp"

namespace udarc {

struct GoldAnswer {
  std::string text;
  int char_start = 0;
};

// One (passage, query, answer span) instance. The first gold answer is the
// training target; all of them count for evaluation.
struct RCExample {
  std::string id;
  std::string passage;
  std::string query;
  std::vector<GoldAnswer> golds;
};

// Unlabeled passages. Order is stable; sampling happens by seeded index.
struct PassageCorpus {
  std::vector<std::string> passages;

  // One passage per line; blank lines ignored.
  static PassageCorpus load(const std::string& path);
};

std::vector<RCExample> parse_squad(const std::string& path);
std::vector<RCExample> parse_mrqa(const std::string& path);

// A windowed, tokenized encoding of one example. Layout:
// [CLS] query [SEP] passage-window [SEP] [PAD]...
struct RCFeature {
  std::string example_id;
  std::vector<int> input_ids;
  std::vector<int> segment_ids;      // 0 through the first [SEP], 1 over passage + final [SEP]
  std::vector<int> attention_mask;   // 1 for real tokens, 0 for padding
  int start_position = 0;            // 0 = no-answer sentinel at [CLS]
  int end_position = 0;
  int window_offset = 0;             // passage-token index where this window begins
  int passage_begin = 0;             // input_ids index of the first passage token
  int passage_len = 0;               // number of passage tokens in this window
  int real_len = 0;                  // tokens before padding
  std::vector<TokenSpan> token_spans;  // char offsets of this window's passage tokens
};

std::vector<RCFeature> build_rc_features(const RCExample& example, const Vocabulary& vocab,
                                         int max_len = 384, int stride = 128);

// Masking recipe for language-model instances.
struct MlmConfig {
  double select_prob = 0.15;  // independent selection per maskable position
  double mask_frac = 0.80;    // of selected: replaced by [MASK]
  double random_frac = 0.10;  // of selected: replaced by a random non-special id
                              // remainder: kept unchanged (still predicted)
};

constexpr int kNoLabel = -1;

// One-segment LM instance: [CLS] [LM] passage [SEP] [PAD]..., all-zero
// segment ids.
struct LMFeature {
  std::vector<int> input_ids;
  std::vector<int> segment_ids;
  std::vector<int> attention_mask;
  std::vector<int> mlm_labels;  // original id at predicted positions, kNoLabel elsewhere
  int real_len = 0;
};

LMFeature build_lm_feature(const std::string& passage, const Vocabulary& vocab, int max_len,
                           Rng& rng, const MlmConfig& mlm = {});

// In-place masking over the given positions; labels_out is filled with
// kNoLabel except at selected positions, which keep the original id.
void apply_mlm_mask(std::vector<int>& input_ids, const std::vector<int>& maskable_positions,
                    const Vocabulary& vocab, Rng& rng, const MlmConfig& mlm,
                    std::vector<int>& labels_out);

// Sentence-pair instance for next-sentence-prediction pretraining:
// [CLS] sentences-A [SEP] sentences-B [SEP], segment ids 0/1.
struct NSPPairFeature {
  std::vector<int> input_ids;
  std::vector<int> segment_ids;
  std::vector<int> attention_mask;
  std::vector<int> mlm_labels;
  bool is_next = false;
  int real_len = 0;
};

// Terminal punctuation (. ! ?) followed by whitespace or end of text.
std::vector<std::string> split_sentences(const std::string& passage);

// Draws sentence pairs from a corpus: half true-next, half with B replaced by
// a sentence from another passage. Passages with fewer than two sentences
// contribute only as random-B sources.
class NspPairStream {
 public:
  NspPairStream(const PassageCorpus& corpus, const Vocabulary& vocab, int max_len,
                MlmConfig mlm = {});
  NSPPairFeature next(Rng& rng);

 private:
  const Vocabulary& vocab_;
  int max_len_;
  MlmConfig mlm_;
  std::vector<std::vector<std::string>> sentences_;  // per passage
  std::vector<int> pair_sources_;                    // passages with >= 2 sentences
};

}  // namespace udarc
