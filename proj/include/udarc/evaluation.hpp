#pragma once

#include <string>
#include <vector>

#include "udarc/data.hpp"
#include "udarc/model.hpp"

namespace udarc {

// Decoded answer for one example. answer_text is cut from the original
// passage via character offsets, never re-detokenized.
struct Prediction {
  std::string example_id;
  std::string answer_text;
  double score = 0.0;       // chosen start logit + end logit
  bool degenerate = false;  // no valid span pair existed
};

struct PerExampleScore {
  std::string example_id;
  double em = 0.0;
  double f1 = 0.0;
};

struct EvalResult {
  double em = 0.0;  // mean over examples, in [0,1]
  double f1 = 0.0;
  int n_examples = 0;
  std::vector<PerExampleScore> per_example;
};

struct DecodeConfig {
  int max_answer_len = 30;  // token span length bound: end - start < max_answer_len
  int n_best = 20;          // candidates kept per example (top-1 decides the prediction)
};

// Start/end logit vectors for one window, aligned with the feature's
// input_ids prefix of length real_len.
struct WindowLogits {
  std::vector<double> start;
  std::vector<double> end;
};

struct SpanCandidate {
  double score = 0.0;
  int window = 0;
  int start_token = 0;
  int end_token = 0;
  std::string answer_text;
};

// All valid (window, start, end) triples ranked by start+end logit, truncated
// to n_best. Valid pairs lie inside the passage segment with start <= end and
// end - start < max_answer_len. Ties break toward the earlier window, then
// the smaller start, then the smaller end.
std::vector<SpanCandidate> decode_nbest(const RCExample& example,
                                        const std::vector<RCFeature>& features,
                                        const std::vector<WindowLogits>& logits,
                                        const DecodeConfig& config);

// Top candidate of decode_nbest as the example's prediction.
Prediction decode_span(const RCExample& example, const std::vector<RCFeature>& features,
                       const std::vector<WindowLogits>& logits, const DecodeConfig& config);

// Official-scorer semantics: lowercase, strip punctuation, drop the articles
// "a"/"an"/"the", collapse whitespace.
std::string normalize_answer(const std::string& text);

std::vector<std::string> answer_tokens(const std::string& normalized);

// Exact match / token-bag F1 against the best gold answer.
double compute_em(const std::string& prediction, const std::vector<std::string>& golds);
double compute_f1(const std::string& prediction, const std::vector<std::string>& golds);

struct EvalConfig {
  int max_len = 384;
  int stride = 128;
  DecodeConfig decode;
};

struct EvalOutput {
  EvalResult result;
  std::vector<Prediction> predictions;
};

// Builds features, runs the RC head over every window, decodes one prediction
// per example, and aggregates mean EM and F1.
EvalOutput evaluate(const ModelParams& params, const std::vector<RCExample>& examples,
                    const Vocabulary& vocab, const EvalConfig& config);

}  // namespace udarc
