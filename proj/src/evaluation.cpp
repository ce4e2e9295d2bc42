#include "udarc/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <map>
#include <sstream>

#include "udarc/errors.hpp"

namespace udarc {

std::vector<SpanCandidate> decode_nbest(const RCExample& example,
                                        const std::vector<RCFeature>& features,
                                        const std::vector<WindowLogits>& logits,
                                        const DecodeConfig& config) {
  if (features.empty()) throw ContractError("decode_span: no windows");
  if (features.size() != logits.size()) {
    throw ContractError("decode_span: feature/logit count mismatch");
  }

  // Every valid pair is scored; pruning would risk missing the true maximum.
  std::vector<SpanCandidate> candidates;
  for (std::size_t w = 0; w < features.size(); ++w) {
    const RCFeature& f = features[w];
    const WindowLogits& wl = logits[w];
    const int limit = std::min(static_cast<int>(wl.start.size()), f.passage_begin + f.passage_len);
    for (int s = f.passage_begin; s < limit; ++s) {
      const int max_e = std::min(limit - 1, s + config.max_answer_len - 1);
      for (int e = s; e <= max_e; ++e) {
        SpanCandidate c;
        c.score = wl.start[static_cast<std::size_t>(s)] + wl.end[static_cast<std::size_t>(e)];
        c.window = static_cast<int>(w);
        c.start_token = s;
        c.end_token = e;
        candidates.push_back(c);
      }
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const SpanCandidate& a, const SpanCandidate& b) { return a.score > b.score; });
  if (static_cast<int>(candidates.size()) > config.n_best) {
    candidates.resize(static_cast<std::size_t>(config.n_best));
  }
  for (SpanCandidate& c : candidates) {
    const RCFeature& f = features[static_cast<std::size_t>(c.window)];
    const TokenSpan& a = f.token_spans[static_cast<std::size_t>(c.start_token - f.passage_begin)];
    const TokenSpan& b = f.token_spans[static_cast<std::size_t>(c.end_token - f.passage_begin)];
    c.answer_text = example.passage.substr(static_cast<std::size_t>(a.char_start),
                                           static_cast<std::size_t>(b.char_end - a.char_start));
  }
  return candidates;
}

Prediction decode_span(const RCExample& example, const std::vector<RCFeature>& features,
                       const std::vector<WindowLogits>& logits, const DecodeConfig& config) {
  const auto nbest = decode_nbest(example, features, logits, config);
  Prediction best;
  best.example_id = example.id;
  if (nbest.empty()) {
    best.degenerate = true;
    best.score = -std::numeric_limits<double>::infinity();
    return best;
  }
  best.answer_text = nbest.front().answer_text;
  best.score = nbest.front().score;
  return best;
}

std::string normalize_answer(const std::string& text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (char c : text) {
    if (std::ispunct(static_cast<unsigned char>(c))) continue;
    lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  std::istringstream in(lowered);
  std::string word;
  std::string out;
  while (in >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

std::vector<std::string> answer_tokens(const std::string& normalized) {
  std::vector<std::string> tokens;
  std::istringstream in(normalized);
  std::string word;
  while (in >> word) tokens.push_back(word);
  return tokens;
}

namespace {

double f1_single(const std::string& pred_norm, const std::string& gold_norm) {
  if (pred_norm.empty() || gold_norm.empty()) {
    return pred_norm == gold_norm ? 1.0 : 0.0;
  }
  const auto pred = answer_tokens(pred_norm);
  const auto gold = answer_tokens(gold_norm);
  std::map<std::string, int> counts;
  for (const auto& t : gold) counts[t] += 1;
  int overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double compute_em(const std::string& prediction, const std::vector<std::string>& golds) {
  if (golds.empty()) throw ContractError("compute_em: no gold answers");
  const std::string pred_norm = normalize_answer(prediction);
  for (const auto& g : golds) {
    if (pred_norm == normalize_answer(g)) return 1.0;
  }
  return 0.0;
}

double compute_f1(const std::string& prediction, const std::vector<std::string>& golds) {
  if (golds.empty()) throw ContractError("compute_f1: no gold answers");
  const std::string pred_norm = normalize_answer(prediction);
  double best = 0.0;
  for (const auto& g : golds) {
    best = std::max(best, f1_single(pred_norm, normalize_answer(g)));
  }
  return best;
}

EvalOutput evaluate(const ModelParams& params, const std::vector<RCExample>& examples,
                    const Vocabulary& vocab, const EvalConfig& config) {
  EvalOutput out;
  double em_sum = 0.0, f1_sum = 0.0;
  for (const RCExample& ex : examples) {
    auto features = build_rc_features(ex, vocab, config.max_len, config.stride);
    std::vector<WindowLogits> logits;
    logits.reserve(features.size());
    for (const RCFeature& f : features) {
      auto [start, end] = forward_rc(params, f);
      logits.push_back({start.values(), end.values()});
    }
    Prediction pred = decode_span(ex, features, logits, config.decode);

    std::vector<std::string> golds;
    for (const GoldAnswer& g : ex.golds) golds.push_back(g.text);
    PerExampleScore score;
    score.example_id = ex.id;
    score.em = compute_em(pred.answer_text, golds);
    score.f1 = compute_f1(pred.answer_text, golds);
    em_sum += score.em;
    f1_sum += score.f1;
    out.result.per_example.push_back(std::move(score));
    out.predictions.push_back(std::move(pred));
  }
  out.result.n_examples = static_cast<int>(examples.size());
  if (out.result.n_examples > 0) {
    out.result.em = em_sum / out.result.n_examples;
    out.result.f1 = f1_sum / out.result.n_examples;
  }
  return out;
}

}  // namespace udarc
