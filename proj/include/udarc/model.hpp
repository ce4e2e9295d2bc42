#pragma once

#include <string>
#include <utility>
#include <vector>

#include "udarc/data.hpp"
#include "udarc/rng.hpp"
#include "udarc/tensor.hpp"

namespace udarc {

struct EncoderConfig {
  int vocab_size = 0;
  int hidden = 64;
  int num_layers = 4;
  int num_heads = 4;
  int ff_dim = 256;
  int max_position = 512;
  int n_task_specific = 1;  // top layers duplicated per task
  double dropout = 0.0;
  GeluKind gelu_kind = GeluKind::Erf;
  bool tie_mlm_head = false;  // reuse token embeddings as the MLM decoder

  void validate() const;
  bool compatible_with(const EncoderConfig& other) const;
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv;  // attention projections
  Tensor wo, bo;                  // attention output
  Tensor ln1_gain, ln1_bias;
  Tensor w1, b1, w2, b2;          // feed-forward
  Tensor ln2_gain, ln2_bias;
};

// Which stack of task-specific layers and which output head an instance
// routes through.
enum class TaskRoute { RC, LM, NSP_LM };

// All trainable state. Three disjoint parameter groups: the shared group
// (embeddings plus lower layers), the RC group, and the LM group.
struct ModelParams {
  EncoderConfig config;

  Tensor token_embeddings;     // vocab_size x hidden
  Tensor segment_embeddings;   // 2 x hidden
  Tensor position_embeddings;  // max_position x hidden
  Tensor emb_ln_gain, emb_ln_bias;

  std::vector<LayerParams> shared_layers;  // num_layers - n_task_specific
  std::vector<LayerParams> rc_layers;      // n_task_specific
  std::vector<LayerParams> lm_layers;      // n_task_specific

  Tensor rc_head_w, rc_head_b;  // hidden -> 2 (start score, end score)

  Tensor mlm_transform_w, mlm_transform_b;  // hidden -> hidden
  Tensor mlm_ln_gain, mlm_ln_bias;
  Tensor mlm_decoder_w;  // hidden -> vocab_size; unused when tied
  Tensor mlm_decoder_b;

  Tensor nsp_head_w, nsp_head_b;  // hidden -> 2

  ModelParams clone() const;
};

// Stable (name, tensor) enumeration; order defines the checkpoint layout.
std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& p);

std::vector<Tensor> shared_group(const ModelParams& p);
std::vector<Tensor> rc_group(const ModelParams& p);
std::vector<Tensor> lm_group(const ModelParams& p);

// Zero-filled parameters with the right shapes (checkpoint loading target).
ModelParams allocate_params(const EncoderConfig& config);

// Fresh parameters: truncated-normal weights (std 0.02), unit layernorm gains,
// zero biases; then the top n base layers are duplicated bit-exactly into the
// RC and LM stacks.
ModelParams init_params(const EncoderConfig& config, Rng& rng);

// Re-split a fully-shared model (n_task_specific == 0) into a model with n
// task-specific layers, cloning the top n layers into both stacks.
ModelParams repartition(const ModelParams& base, int n_task_specific);

// Bitwise equality of all parameter values (grads ignored).
bool params_equal(const ModelParams& a, const ModelParams& b);

// Token + segment + position embeddings, layernorm, then the shared stack and
// the route's task-specific stack. Padding positions are masked out of every
// attention score column. Dropout fires only when an rng is supplied.
Tensor encode(const ModelParams& p, const std::vector<int>& input_ids,
              const std::vector<int>& segment_ids, const std::vector<int>& attention_mask,
              TaskRoute route, Rng* rng = nullptr);

// Per-position start/end scores over the first `len` positions of the
// feature (len <= 0 means the feature's real length).
std::pair<Tensor, Tensor> forward_rc(const ModelParams& p, const RCFeature& f, int len = 0,
                                     Rng* rng = nullptr);

struct LmForward {
  Tensor mlm_logits;          // num_labeled x vocab_size; undefined when no labels
  std::vector<int> labels;    // original ids at the labeled positions
  Tensor nsp_logits;          // 1 x 2; defined only on the NSP_LM route
};

LmForward forward_lm(const ModelParams& p, const LMFeature& f, int len = 0, Rng* rng = nullptr);
LmForward forward_nsp_lm(const ModelParams& p, const NSPPairFeature& f, int len = 0,
                         Rng* rng = nullptr);

// Mean of the start and end cross-entropies.
Tensor rc_loss(const Tensor& start_logits, const Tensor& end_logits, int start_position,
               int end_position);
// Mean cross-entropy over labeled positions; zero scalar when none.
Tensor lm_loss(const Tensor& mlm_logits, const std::vector<int>& labels);
Tensor nsp_loss(const Tensor& nsp_logits, bool is_next);

}  // namespace udarc
