#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "udarc/data.hpp"
#include "udarc/model.hpp"
#include "udarc/rng.hpp"

namespace udarc {

enum class TrainMode { NoAdapt, Sequential, MultiTask };

const char* mode_name(TrainMode mode);
TrainMode mode_from_name(const std::string& name);

enum class LrDecay { LinearToZero, ConstantAfterWarmup };

struct TrainSchedule {
  int total_steps = 0;   // N; derive_total_steps fills it from the data size
  int rc_lm_ratio = 10;  // k: one LM update after every k RC updates
  int batch_size = 32;
  double learning_rate = 5e-5;
  double warmup_proportion = 0.1;
  int epochs = 3;
  std::uint64_t seed = 13;
  double grad_clip = 1.0;  // global-norm bound; <= 0 disables
  LrDecay decay = LrDecay::LinearToZero;

  void validate() const;
};

// epochs * ceil(n_features / batch_size)
int derive_total_steps(int n_features, const TrainSchedule& schedule);

// Linear ramp to the peak over the first ceil(warmup * N) steps, then linear
// decay to zero at step N (or constant, by config). Steps are 1-based.
double lr_at_step(const TrainSchedule& schedule, int step);

// Bias-corrected Adam over one parameter group. Each group keeps one moment
// history and one step counter; a parameter shared across tasks is updated
// through a single state.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(std::vector<Tensor> group);

  // Applies the update in place and zeroes the group's gradients.
  void step(double lr);

  int step_count() const { return t_; }
  const std::vector<Tensor>& group() const { return group_; }

  struct Snapshot {
    int t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& s);

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  std::vector<Tensor> group_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int t_ = 0;
};

// Scales gradients of all listed groups so their joint global norm is at most
// max_norm. No-op when max_norm <= 0.
void clip_gradients(const std::vector<const AdamState*>& groups, double max_norm);

struct StepRecord {
  int step = 0;
  std::string mode;
  std::string task;  // "rc" or "lm"
  double loss = 0.0;
  double lr = 0.0;
};

using StepSink = std::function<void(const StepRecord&)>;

struct TrainOptions {
  int rc_max_len = 384;
  int rc_stride = 128;
  int lm_max_len = 384;        // one-segment LM instances
  int pretrain_steps = 0;      // sequential phase-1 length
  int pretrain_max_len = 512;  // sentence-pair instances
  MlmConfig mlm;
  StepSink sink;        // invoked once per logged step
  int save_every = 0;   // periodic checkpointing; 0 = off
  std::string save_path;
};

struct Checkpoint {
  ModelParams params;
  int step = 0;
  std::string rng_state;
  bool has_optimizer = false;
  AdamState::Snapshot opt_shared, opt_rc, opt_lm;
};

// Versioned binary container: magic, JSON header (config, parameter manifest,
// group manifest, step, rng state), raw little-endian float64 payload, payload
// hash, end marker. Loading is all-or-nothing.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Parameters only, for evaluation.
ModelParams load_params(const std::string& path);

// Owns the model, the three per-group optimizer states, and the training rng.
// Runs resume transparently: loops continue from the restored step and the
// rng stream picks up where the checkpoint left it.
class Trainer {
 public:
  Trainer(ModelParams params, TrainSchedule schedule, TrainOptions options);
  static Trainer resume(const std::string& checkpoint_path, TrainSchedule schedule,
                        TrainOptions options);

  // RC fine-tuning only; the LM group stays untouched.
  void run_no_adapt(const std::vector<RCFeature>& rc_features);

  // Alternating loop: every step updates {shared, rc} on an RC batch; every
  // k-th step additionally updates {shared, lm} on a masked-LM batch.
  void run_multitask(const std::vector<RCFeature>& rc_features, const PassageCorpus& corpus,
                     const Vocabulary& vocab);

  // Phase 1: masked LM + next-sentence on sentence pairs (all parameters
  // except the RC group). Phase 2: RC fine-tuning from the adapted weights.
  void run_sequential(const std::vector<RCFeature>& rc_features, const PassageCorpus& corpus,
                      const Vocabulary& vocab);

  // Masked-LM-only training for producing a base checkpoint.
  void run_pretrain(const PassageCorpus& corpus, const Vocabulary& vocab);

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  int step() const { return step_; }
  double last_loss() const { return last_loss_; }

  void save(const std::string& path) const;

 private:
  double rc_batch_step(const std::vector<RCFeature>& features, double lr);
  double lm_batch_step(const PassageCorpus& corpus, const Vocabulary& vocab, double lr);
  double nsp_batch_step(NspPairStream& stream, double lr);
  void emit(int step, const char* mode, const char* task, double loss, double lr);
  void maybe_save();
  Rng* dropout_rng();

  ModelParams params_;
  TrainSchedule schedule_;
  TrainOptions options_;
  AdamState opt_shared_, opt_rc_, opt_lm_;
  Rng rng_;
  int step_ = 0;
  double last_loss_ = 0.0;
};

}  // namespace udarc
