#include "udarc/model.hpp"

#include <cmath>
#include <cstring>

#include "udarc/errors.hpp"

namespace udarc {

namespace {

constexpr double kLayerNormEps = 1e-12;
constexpr double kMaskPenalty = -1e9;
constexpr double kInitStd = 0.02;

Tensor init_weight(int rows, int cols, Rng& rng) {
  Tensor t = Tensor::zeros({rows, cols}, true);
  for (double& v : t.values()) v = rng.truncated_normal(kInitStd);
  return t;
}

Tensor init_zero_vec(int n) { return Tensor::zeros({n}, true); }

Tensor init_one_vec(int n) { return Tensor::full({n}, 1.0, true); }

LayerParams init_layer(const EncoderConfig& c, Rng& rng) {
  LayerParams l;
  l.wq = init_weight(c.hidden, c.hidden, rng);
  l.bq = init_zero_vec(c.hidden);
  l.wk = init_weight(c.hidden, c.hidden, rng);
  l.bk = init_zero_vec(c.hidden);
  l.wv = init_weight(c.hidden, c.hidden, rng);
  l.bv = init_zero_vec(c.hidden);
  l.wo = init_weight(c.hidden, c.hidden, rng);
  l.bo = init_zero_vec(c.hidden);
  l.ln1_gain = init_one_vec(c.hidden);
  l.ln1_bias = init_zero_vec(c.hidden);
  l.w1 = init_weight(c.hidden, c.ff_dim, rng);
  l.b1 = init_zero_vec(c.ff_dim);
  l.w2 = init_weight(c.ff_dim, c.hidden, rng);
  l.b2 = init_zero_vec(c.hidden);
  l.ln2_gain = init_one_vec(c.hidden);
  l.ln2_bias = init_zero_vec(c.hidden);
  return l;
}

LayerParams copy_layer(const LayerParams& src) {
  LayerParams l;
  l.wq = src.wq.copy();
  l.bq = src.bq.copy();
  l.wk = src.wk.copy();
  l.bk = src.bk.copy();
  l.wv = src.wv.copy();
  l.bv = src.bv.copy();
  l.wo = src.wo.copy();
  l.bo = src.bo.copy();
  l.ln1_gain = src.ln1_gain.copy();
  l.ln1_bias = src.ln1_bias.copy();
  l.w1 = src.w1.copy();
  l.b1 = src.b1.copy();
  l.w2 = src.w2.copy();
  l.b2 = src.b2.copy();
  l.ln2_gain = src.ln2_gain.copy();
  l.ln2_bias = src.ln2_bias.copy();
  return l;
}

void visit_layer(const std::string& prefix, const LayerParams& l,
                 std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".wq", l.wq);
  out.emplace_back(prefix + ".bq", l.bq);
  out.emplace_back(prefix + ".wk", l.wk);
  out.emplace_back(prefix + ".bk", l.bk);
  out.emplace_back(prefix + ".wv", l.wv);
  out.emplace_back(prefix + ".bv", l.bv);
  out.emplace_back(prefix + ".wo", l.wo);
  out.emplace_back(prefix + ".bo", l.bo);
  out.emplace_back(prefix + ".ln1_gain", l.ln1_gain);
  out.emplace_back(prefix + ".ln1_bias", l.ln1_bias);
  out.emplace_back(prefix + ".w1", l.w1);
  out.emplace_back(prefix + ".b1", l.b1);
  out.emplace_back(prefix + ".w2", l.w2);
  out.emplace_back(prefix + ".b2", l.b2);
  out.emplace_back(prefix + ".ln2_gain", l.ln2_gain);
  out.emplace_back(prefix + ".ln2_bias", l.ln2_bias);
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size < Vocabulary::kNumSpecials) {
    throw ConfigError("vocab_size must be at least " + std::to_string(Vocabulary::kNumSpecials));
  }
  if (hidden <= 0 || num_layers <= 0 || num_heads <= 0 || ff_dim <= 0 || max_position <= 0) {
    throw ConfigError("hidden, num_layers, num_heads, ff_dim, max_position must be positive");
  }
  if (hidden % num_heads != 0) {
    throw ConfigError("hidden " + std::to_string(hidden) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (n_task_specific < 0 || n_task_specific > num_layers) {
    throw ConfigError("n_task_specific " + std::to_string(n_task_specific) +
                      " must lie in [0, num_layers=" + std::to_string(num_layers) + "]");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must lie in [0, 1)");
  }
}

bool EncoderConfig::compatible_with(const EncoderConfig& o) const {
  return vocab_size == o.vocab_size && hidden == o.hidden && num_layers == o.num_layers &&
         num_heads == o.num_heads && ff_dim == o.ff_dim && max_position == o.max_position &&
         n_task_specific == o.n_task_specific && tie_mlm_head == o.tie_mlm_head;
}

ModelParams ModelParams::clone() const {
  ModelParams c;
  c.config = config;
  c.token_embeddings = token_embeddings.copy();
  c.segment_embeddings = segment_embeddings.copy();
  c.position_embeddings = position_embeddings.copy();
  c.emb_ln_gain = emb_ln_gain.copy();
  c.emb_ln_bias = emb_ln_bias.copy();
  for (const auto& l : shared_layers) c.shared_layers.push_back(copy_layer(l));
  for (const auto& l : rc_layers) c.rc_layers.push_back(copy_layer(l));
  for (const auto& l : lm_layers) c.lm_layers.push_back(copy_layer(l));
  c.rc_head_w = rc_head_w.copy();
  c.rc_head_b = rc_head_b.copy();
  c.mlm_transform_w = mlm_transform_w.copy();
  c.mlm_transform_b = mlm_transform_b.copy();
  c.mlm_ln_gain = mlm_ln_gain.copy();
  c.mlm_ln_bias = mlm_ln_bias.copy();
  c.mlm_decoder_w = mlm_decoder_w.copy();
  c.mlm_decoder_b = mlm_decoder_b.copy();
  c.nsp_head_w = nsp_head_w.copy();
  c.nsp_head_b = nsp_head_b.copy();
  return c;
}

std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& p) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("token_embeddings", p.token_embeddings);
  out.emplace_back("segment_embeddings", p.segment_embeddings);
  out.emplace_back("position_embeddings", p.position_embeddings);
  out.emplace_back("emb_ln_gain", p.emb_ln_gain);
  out.emplace_back("emb_ln_bias", p.emb_ln_bias);
  for (std::size_t i = 0; i < p.shared_layers.size(); ++i) {
    visit_layer("shared." + std::to_string(i), p.shared_layers[i], out);
  }
  for (std::size_t i = 0; i < p.rc_layers.size(); ++i) {
    visit_layer("rc." + std::to_string(i), p.rc_layers[i], out);
  }
  for (std::size_t i = 0; i < p.lm_layers.size(); ++i) {
    visit_layer("lm." + std::to_string(i), p.lm_layers[i], out);
  }
  out.emplace_back("rc_head.w", p.rc_head_w);
  out.emplace_back("rc_head.b", p.rc_head_b);
  out.emplace_back("mlm.transform_w", p.mlm_transform_w);
  out.emplace_back("mlm.transform_b", p.mlm_transform_b);
  out.emplace_back("mlm.ln_gain", p.mlm_ln_gain);
  out.emplace_back("mlm.ln_bias", p.mlm_ln_bias);
  out.emplace_back("mlm.decoder_w", p.mlm_decoder_w);
  out.emplace_back("mlm.decoder_b", p.mlm_decoder_b);
  out.emplace_back("nsp.w", p.nsp_head_w);
  out.emplace_back("nsp.b", p.nsp_head_b);
  return out;
}

std::vector<Tensor> shared_group(const ModelParams& p) {
  std::vector<std::pair<std::string, Tensor>> named;
  std::vector<Tensor> out = {p.token_embeddings, p.segment_embeddings, p.position_embeddings,
                             p.emb_ln_gain, p.emb_ln_bias};
  for (const auto& l : p.shared_layers) {
    named.clear();
    visit_layer("", l, named);
    for (auto& [n, t] : named) out.push_back(t);
  }
  return out;
}

std::vector<Tensor> rc_group(const ModelParams& p) {
  std::vector<std::pair<std::string, Tensor>> named;
  std::vector<Tensor> out;
  for (const auto& l : p.rc_layers) {
    named.clear();
    visit_layer("", l, named);
    for (auto& [n, t] : named) out.push_back(t);
  }
  out.push_back(p.rc_head_w);
  out.push_back(p.rc_head_b);
  return out;
}

std::vector<Tensor> lm_group(const ModelParams& p) {
  std::vector<std::pair<std::string, Tensor>> named;
  std::vector<Tensor> out;
  for (const auto& l : p.lm_layers) {
    named.clear();
    visit_layer("", l, named);
    for (auto& [n, t] : named) out.push_back(t);
  }
  out.push_back(p.mlm_transform_w);
  out.push_back(p.mlm_transform_b);
  out.push_back(p.mlm_ln_gain);
  out.push_back(p.mlm_ln_bias);
  // A tied decoder is the embedding table, which already lives in the shared group.
  if (!p.config.tie_mlm_head) out.push_back(p.mlm_decoder_w);
  out.push_back(p.mlm_decoder_b);
  out.push_back(p.nsp_head_w);
  out.push_back(p.nsp_head_b);
  return out;
}

ModelParams allocate_params(const EncoderConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  auto w = [](int r, int c) { return Tensor::zeros({r, c}, true); };
  auto vec = [](int n) { return Tensor::zeros({n}, true); };
  p.token_embeddings = w(config.vocab_size, config.hidden);
  p.segment_embeddings = w(2, config.hidden);
  p.position_embeddings = w(config.max_position, config.hidden);
  p.emb_ln_gain = vec(config.hidden);
  p.emb_ln_bias = vec(config.hidden);
  auto layer = [&] {
    LayerParams l;
    l.wq = w(config.hidden, config.hidden);
    l.bq = vec(config.hidden);
    l.wk = w(config.hidden, config.hidden);
    l.bk = vec(config.hidden);
    l.wv = w(config.hidden, config.hidden);
    l.bv = vec(config.hidden);
    l.wo = w(config.hidden, config.hidden);
    l.bo = vec(config.hidden);
    l.ln1_gain = vec(config.hidden);
    l.ln1_bias = vec(config.hidden);
    l.w1 = w(config.hidden, config.ff_dim);
    l.b1 = vec(config.ff_dim);
    l.w2 = w(config.ff_dim, config.hidden);
    l.b2 = vec(config.hidden);
    l.ln2_gain = vec(config.hidden);
    l.ln2_bias = vec(config.hidden);
    return l;
  };
  const int n_shared = config.num_layers - config.n_task_specific;
  for (int i = 0; i < n_shared; ++i) p.shared_layers.push_back(layer());
  for (int i = 0; i < config.n_task_specific; ++i) {
    p.rc_layers.push_back(layer());
    p.lm_layers.push_back(layer());
  }
  p.rc_head_w = w(config.hidden, 2);
  p.rc_head_b = vec(2);
  p.mlm_transform_w = w(config.hidden, config.hidden);
  p.mlm_transform_b = vec(config.hidden);
  p.mlm_ln_gain = vec(config.hidden);
  p.mlm_ln_bias = vec(config.hidden);
  p.mlm_decoder_w = w(config.hidden, config.vocab_size);
  p.mlm_decoder_b = vec(config.vocab_size);
  p.nsp_head_w = w(config.hidden, 2);
  p.nsp_head_b = vec(2);
  return p;
}

ModelParams init_params(const EncoderConfig& config, Rng& rng) {
  config.validate();
  ModelParams p;
  p.config = config;
  p.token_embeddings = init_weight(config.vocab_size, config.hidden, rng);
  p.segment_embeddings = init_weight(2, config.hidden, rng);
  p.position_embeddings = init_weight(config.max_position, config.hidden, rng);
  p.emb_ln_gain = init_one_vec(config.hidden);
  p.emb_ln_bias = init_zero_vec(config.hidden);

  std::vector<LayerParams> base;
  for (int i = 0; i < config.num_layers; ++i) base.push_back(init_layer(config, rng));
  const int n_shared = config.num_layers - config.n_task_specific;
  for (int i = 0; i < n_shared; ++i) p.shared_layers.push_back(std::move(base[static_cast<std::size_t>(i)]));
  for (int i = n_shared; i < config.num_layers; ++i) {
    p.rc_layers.push_back(copy_layer(base[static_cast<std::size_t>(i)]));
    p.lm_layers.push_back(copy_layer(base[static_cast<std::size_t>(i)]));
  }

  p.rc_head_w = init_weight(config.hidden, 2, rng);
  p.rc_head_b = init_zero_vec(2);
  p.mlm_transform_w = init_weight(config.hidden, config.hidden, rng);
  p.mlm_transform_b = init_zero_vec(config.hidden);
  p.mlm_ln_gain = init_one_vec(config.hidden);
  p.mlm_ln_bias = init_zero_vec(config.hidden);
  p.mlm_decoder_w = init_weight(config.hidden, config.vocab_size, rng);
  p.mlm_decoder_b = init_zero_vec(config.vocab_size);
  p.nsp_head_w = init_weight(config.hidden, 2, rng);
  p.nsp_head_b = init_zero_vec(2);
  return p;
}

ModelParams repartition(const ModelParams& base, int n_task_specific) {
  if (base.config.n_task_specific != 0) {
    throw ArtifactError("repartition requires a fully-shared base model (n_task_specific == 0)");
  }
  EncoderConfig config = base.config;
  config.n_task_specific = n_task_specific;
  config.validate();

  ModelParams p = base.clone();
  p.config = config;
  const int n_shared = config.num_layers - n_task_specific;
  std::vector<LayerParams> all = std::move(p.shared_layers);
  p.shared_layers.clear();
  for (int i = 0; i < n_shared; ++i) p.shared_layers.push_back(std::move(all[static_cast<std::size_t>(i)]));
  for (int i = n_shared; i < config.num_layers; ++i) {
    p.rc_layers.push_back(copy_layer(all[static_cast<std::size_t>(i)]));
    p.lm_layers.push_back(copy_layer(all[static_cast<std::size_t>(i)]));
  }
  return p;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  auto na = named_params(a);
  auto nb = named_params(b);
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].first != nb[i].first) return false;
    if (na[i].second.shape() != nb[i].second.shape()) return false;
    const auto& va = na[i].second.values();
    const auto& vb = nb[i].second.values();
    if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

namespace {

Tensor encoder_layer(const Tensor& x, const LayerParams& l, const Tensor& mask_matrix,
                     const EncoderConfig& c, Rng* rng) {
  const int head_dim = c.hidden / c.num_heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor q = add_bias(matmul(x, l.wq), l.bq);
  Tensor k = add_bias(matmul(x, l.wk), l.bk);
  Tensor v = add_bias(matmul(x, l.wv), l.bv);

  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(c.num_heads));
  for (int h = 0; h < c.num_heads; ++h) {
    Tensor qh = slice_cols(q, h * head_dim, head_dim);
    Tensor kh = slice_cols(k, h * head_dim, head_dim);
    Tensor vh = slice_cols(v, h * head_dim, head_dim);
    Tensor scores = add(scale(matmul_nt(qh, kh), inv_sqrt_d), mask_matrix);
    Tensor attn = softmax_rows(scores);
    if (rng && c.dropout > 0.0) attn = dropout(attn, c.dropout, *rng);
    heads.push_back(matmul(attn, vh));
  }
  Tensor ctx = concat_cols(heads);
  Tensor attn_out = add_bias(matmul(ctx, l.wo), l.bo);
  if (rng && c.dropout > 0.0) attn_out = dropout(attn_out, c.dropout, *rng);
  Tensor h1 = layer_norm(add(x, attn_out), l.ln1_gain, l.ln1_bias, kLayerNormEps);

  Tensor ff = add_bias(matmul(gelu(add_bias(matmul(h1, l.w1), l.b1), c.gelu_kind), l.w2), l.b2);
  if (rng && c.dropout > 0.0) ff = dropout(ff, c.dropout, *rng);
  return layer_norm(add(h1, ff), l.ln2_gain, l.ln2_bias, kLayerNormEps);
}

}  // namespace

Tensor encode(const ModelParams& p, const std::vector<int>& input_ids,
              const std::vector<int>& segment_ids, const std::vector<int>& attention_mask,
              TaskRoute route, Rng* rng) {
  const int t = static_cast<int>(input_ids.size());
  if (t == 0) throw ContractError("encode: empty input");
  if (segment_ids.size() != input_ids.size() || attention_mask.size() != input_ids.size()) {
    throw ShapeError("encode: input_ids, segment_ids, attention_mask lengths differ");
  }
  if (t > p.config.max_position) {
    throw ContractError("encode: sequence length " + std::to_string(t) +
                        " exceeds max_position " + std::to_string(p.config.max_position));
  }
  for (int id : input_ids) {
    if (id < 0 || id >= p.config.vocab_size) {
      throw IndexError("encode: token id " + std::to_string(id) + " out of range [0," +
                       std::to_string(p.config.vocab_size) + ")");
    }
  }
  for (int s : segment_ids) {
    if (s < 0 || s > 1) throw IndexError("encode: segment id must be 0 or 1");
  }

  std::vector<int> positions(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) positions[static_cast<std::size_t>(i)] = i;

  Tensor x = add(add(embedding_rows(p.token_embeddings, input_ids),
                     embedding_rows(p.segment_embeddings, segment_ids)),
                 embedding_rows(p.position_embeddings, positions));
  x = layer_norm(x, p.emb_ln_gain, p.emb_ln_bias, kLayerNormEps);
  if (rng && p.config.dropout > 0.0) x = dropout(x, p.config.dropout, *rng);

  // Additive score mask: column j is blocked for every query when j is padding.
  Tensor mask_matrix = Tensor::zeros({t, t});
  {
    double* m = mask_matrix.data();
    for (int i = 0; i < t; ++i) {
      for (int j = 0; j < t; ++j) {
        if (attention_mask[static_cast<std::size_t>(j)] == 0) {
          m[static_cast<std::size_t>(i) * t + j] = kMaskPenalty;
        }
      }
    }
  }

  for (const LayerParams& l : p.shared_layers) {
    x = encoder_layer(x, l, mask_matrix, p.config, rng);
  }
  const std::vector<LayerParams>& task_stack =
      route == TaskRoute::RC ? p.rc_layers : p.lm_layers;
  for (const LayerParams& l : task_stack) {
    x = encoder_layer(x, l, mask_matrix, p.config, rng);
  }
  return x;
}

namespace {

std::vector<int> head_slice(const std::vector<int>& v, int len) {
  return std::vector<int>(v.begin(), v.begin() + len);
}

int resolve_len(int requested, int real_len, int full_len) {
  int len = requested > 0 ? requested : real_len;
  if (len <= 0 || len > full_len) {
    throw ContractError("forward: invalid sequence length " + std::to_string(len));
  }
  return len;
}

}  // namespace

std::pair<Tensor, Tensor> forward_rc(const ModelParams& p, const RCFeature& f, int len,
                                     Rng* rng) {
  const int t = resolve_len(len, f.real_len, static_cast<int>(f.input_ids.size()));
  Tensor enc = encode(p, head_slice(f.input_ids, t), head_slice(f.segment_ids, t),
                      head_slice(f.attention_mask, t), TaskRoute::RC, rng);
  Tensor logits = add_bias(matmul(enc, p.rc_head_w), p.rc_head_b);  // t x 2
  Tensor start = reshape(slice_cols(logits, 0, 1), {t});
  Tensor end = reshape(slice_cols(logits, 1, 1), {t});
  return {start, end};
}

namespace {

LmForward lm_forward_impl(const ModelParams& p, const std::vector<int>& input_ids,
                          const std::vector<int>& segment_ids,
                          const std::vector<int>& attention_mask,
                          const std::vector<int>& mlm_labels, bool with_nsp, int t, Rng* rng) {
  Tensor enc = encode(p, head_slice(input_ids, t), head_slice(segment_ids, t),
                      head_slice(attention_mask, t), with_nsp ? TaskRoute::NSP_LM : TaskRoute::LM,
                      rng);
  LmForward out;
  std::vector<int> positions;
  for (int i = 0; i < t; ++i) {
    if (mlm_labels[static_cast<std::size_t>(i)] != kNoLabel) {
      positions.push_back(i);
      out.labels.push_back(mlm_labels[static_cast<std::size_t>(i)]);
    }
  }
  if (!positions.empty()) {
    Tensor h = gather_rows(enc, positions);
    Tensor tr = layer_norm(gelu(add_bias(matmul(h, p.mlm_transform_w), p.mlm_transform_b),
                                p.config.gelu_kind),
                           p.mlm_ln_gain, p.mlm_ln_bias, kLayerNormEps);
    Tensor logits = p.config.tie_mlm_head ? matmul_nt(tr, p.token_embeddings)
                                          : matmul(tr, p.mlm_decoder_w);
    out.mlm_logits = add_bias(logits, p.mlm_decoder_b);
  }
  if (with_nsp) {
    Tensor cls = gather_rows(enc, {0});
    out.nsp_logits = add_bias(matmul(cls, p.nsp_head_w), p.nsp_head_b);
  }
  return out;
}

}  // namespace

LmForward forward_lm(const ModelParams& p, const LMFeature& f, int len, Rng* rng) {
  const int t = resolve_len(len, f.real_len, static_cast<int>(f.input_ids.size()));
  return lm_forward_impl(p, f.input_ids, f.segment_ids, f.attention_mask, f.mlm_labels, false, t,
                         rng);
}

LmForward forward_nsp_lm(const ModelParams& p, const NSPPairFeature& f, int len, Rng* rng) {
  const int t = resolve_len(len, f.real_len, static_cast<int>(f.input_ids.size()));
  return lm_forward_impl(p, f.input_ids, f.segment_ids, f.attention_mask, f.mlm_labels, true, t,
                         rng);
}

Tensor rc_loss(const Tensor& start_logits, const Tensor& end_logits, int start_position,
               int end_position) {
  if (start_logits.ndim() != 1 || end_logits.ndim() != 1 ||
      start_logits.dim(0) != end_logits.dim(0)) {
    throw ShapeError("rc_loss: start and end logits must be vectors of equal length");
  }
  const int t = start_logits.dim(0);
  if (start_position < 0 || start_position >= t || end_position < 0 || end_position >= t) {
    throw IndexError("rc_loss: answer position out of range [0," + std::to_string(t) + ")");
  }
  Tensor s = cross_entropy_logits(reshape(start_logits, {1, t}), {start_position});
  Tensor e = cross_entropy_logits(reshape(end_logits, {1, t}), {end_position});
  return scale(add(s, e), 0.5);
}

Tensor lm_loss(const Tensor& mlm_logits, const std::vector<int>& labels) {
  if (labels.empty()) return Tensor::scalar(0.0);
  return cross_entropy_logits(mlm_logits, labels);
}

Tensor nsp_loss(const Tensor& nsp_logits, bool is_next) {
  return cross_entropy_logits(nsp_logits, {is_next ? 1 : 0});
}

}  // namespace udarc
