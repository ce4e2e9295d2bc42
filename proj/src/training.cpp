#include "udarc/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "udarc/errors.hpp"

namespace udarc {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

const char* mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::NoAdapt: return "no_adapt";
    case TrainMode::Sequential: return "sequential";
    case TrainMode::MultiTask: return "multi_task";
  }
  return "?";
}

TrainMode mode_from_name(const std::string& name) {
  if (name == "no_adapt") return TrainMode::NoAdapt;
  if (name == "sequential") return TrainMode::Sequential;
  if (name == "multi_task") return TrainMode::MultiTask;
  throw ConfigError("unknown mode '" + name + "' (expected no_adapt, sequential, multi_task)");
}

void TrainSchedule::validate() const {
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (rc_lm_ratio < 1) throw ConfigError("rc_lm_ratio must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (warmup_proportion < 0.0 || warmup_proportion > 1.0) {
    throw ConfigError("warmup_proportion must lie in [0,1]");
  }
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
}

int derive_total_steps(int n_features, const TrainSchedule& schedule) {
  if (n_features <= 0) throw ConfigError("cannot derive steps from an empty feature set");
  const int per_epoch = (n_features + schedule.batch_size - 1) / schedule.batch_size;
  return schedule.epochs * per_epoch;
}

double lr_at_step(const TrainSchedule& schedule, int step) {
  const int n = schedule.total_steps;
  if (step < 1 || step > n) {
    throw ContractError("lr_at_step: step " + std::to_string(step) + " outside [1," +
                        std::to_string(n) + "]");
  }
  const int warmup = static_cast<int>(std::ceil(schedule.warmup_proportion * n));
  if (warmup > 0 && step <= warmup) {
    return schedule.learning_rate * step / warmup;
  }
  if (schedule.decay == LrDecay::ConstantAfterWarmup) return schedule.learning_rate;
  if (n == warmup) return 0.0;
  return schedule.learning_rate * (n - step) / (n - warmup);
}

// --- Adam ----------------------------------------------------------------

AdamState::AdamState(std::vector<Tensor> group) : group_(std::move(group)) {
  m_.reserve(group_.size());
  v_.reserve(group_.size());
  for (const Tensor& p : group_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamState::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, t_);
  const double bc2 = 1.0 - std::pow(kBeta2, t_);
  for (std::size_t i = 0; i < group_.size(); ++i) {
    Tensor& p = group_[i];
    if (!p.requires_grad() || p.grad() == nullptr) {
      throw ContractError("adam_step: group member has no gradient buffer");
    }
    double* w = p.data();
    double* g = p.grad();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const std::size_t n = p.numel();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + kEps);
      g[j] = 0.0;
    }
  }
}

AdamState::Snapshot AdamState::snapshot() const {
  return Snapshot{t_, m_, v_};
}

void AdamState::restore(const Snapshot& s) {
  if (s.m.size() != group_.size() || s.v.size() != group_.size()) {
    throw ArtifactError("optimizer snapshot does not match parameter group");
  }
  for (std::size_t i = 0; i < group_.size(); ++i) {
    if (s.m[i].size() != group_[i].numel() || s.v[i].size() != group_[i].numel()) {
      throw ArtifactError("optimizer moment shape mismatch");
    }
  }
  t_ = s.t;
  m_ = s.m;
  v_ = s.v;
}

void clip_gradients(const std::vector<const AdamState*>& groups, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const AdamState* g : groups) {
    for (const Tensor& p : g->group()) {
      const double* grad = p.grad();
      if (!grad) continue;
      for (std::size_t j = 0; j < p.numel(); ++j) sq += grad[j] * grad[j];
    }
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double factor = max_norm / norm;
  for (const AdamState* g : groups) {
    for (const Tensor& p : g->group()) {
      Tensor t = p;
      double* grad = t.grad();
      if (!grad) continue;
      for (std::size_t j = 0; j < t.numel(); ++j) grad[j] *= factor;
    }
  }
}

// --- checkpoint io ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'U', 'D', 'A', 'R', 'C', 'K', 'P', '1'};
constexpr char kFooter[8] = {'U', 'D', 'A', 'R', 'C', 'E', 'N', 'D'};
constexpr int kFormatVersion = 1;

std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

json config_to_json(const EncoderConfig& c) {
  return json{{"vocab_size", c.vocab_size},
              {"hidden", c.hidden},
              {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},
              {"ff_dim", c.ff_dim},
              {"max_position", c.max_position},
              {"n_task_specific", c.n_task_specific},
              {"dropout", c.dropout},
              {"gelu", c.gelu_kind == GeluKind::Erf ? "erf" : "tanh"},
              {"tie_mlm_head", c.tie_mlm_head}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.max_position = j.at("max_position").get<int>();
  c.n_task_specific = j.at("n_task_specific").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.gelu_kind = j.at("gelu").get<std::string>() == "tanh" ? GeluKind::Tanh : GeluKind::Erf;
  c.tie_mlm_head = j.at("tie_mlm_head").get<bool>();
  return c;
}

std::vector<std::string> group_names(const ModelParams& p, const std::vector<Tensor>& group) {
  std::vector<std::string> names;
  auto named = named_params(p);
  for (const Tensor& t : group) {
    for (const auto& [name, tensor] : named) {
      if (tensor.same_storage(t)) {
        names.push_back(name);
        break;
      }
    }
  }
  return names;
}

void append_doubles(std::string& payload, const std::vector<double>& values) {
  const std::size_t off = payload.size();
  payload.resize(off + values.size() * sizeof(double));
  std::memcpy(payload.data() + off, values.data(), values.size() * sizeof(double));
}

void read_doubles(const std::string& payload, std::size_t& offset, std::vector<double>& out) {
  const std::size_t bytes = out.size() * sizeof(double);
  if (offset + bytes > payload.size()) {
    throw ArtifactError("checkpoint payload truncated");
  }
  std::memcpy(out.data(), payload.data() + offset, bytes);
  offset += bytes;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const ModelParams& p = ckpt.params;
  auto named = named_params(p);

  json header;
  header["format_version"] = kFormatVersion;
  header["config"] = config_to_json(p.config);
  json params_manifest = json::array();
  for (const auto& [name, t] : named) {
    params_manifest.push_back(json{{"name", name}, {"shape", t.shape()}});
  }
  header["params"] = params_manifest;
  header["groups"] = json{{"shared", group_names(p, shared_group(p))},
                          {"rc", group_names(p, rc_group(p))},
                          {"lm", group_names(p, lm_group(p))}};
  header["step"] = ckpt.step;
  header["rng_state"] = ckpt.rng_state;
  header["optimizer"] = json{{"present", ckpt.has_optimizer},
                             {"t_shared", ckpt.opt_shared.t},
                             {"t_rc", ckpt.opt_rc.t},
                             {"t_lm", ckpt.opt_lm.t}};
  const std::string header_str = header.dump();

  std::string payload;
  for (const auto& [name, t] : named) append_doubles(payload, t.values());
  if (ckpt.has_optimizer) {
    for (const AdamState::Snapshot* s : {&ckpt.opt_shared, &ckpt.opt_rc, &ckpt.opt_lm}) {
      for (const auto& m : s->m) append_doubles(payload, m);
      for (const auto& v : s->v) append_doubles(payload, v);
    }
  }
  const std::uint64_t hash =
      fnv1a(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&hash), sizeof(hash));
  out.write(kFooter, sizeof(kFooter));
  if (!out) throw ArtifactError("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const std::size_t min_size = sizeof(kMagic) + sizeof(std::uint64_t) * 2 + sizeof(kFooter);
  if (bytes.size() < min_size || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ArtifactError("not a checkpoint file (bad magic): " + path);
  }
  if (std::memcmp(bytes.data() + bytes.size() - sizeof(kFooter), kFooter, sizeof(kFooter)) != 0) {
    throw ArtifactError("checkpoint truncated or corrupted (bad end marker): " + path);
  }
  std::size_t off = sizeof(kMagic);
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + off, sizeof(hlen));
  off += sizeof(hlen);
  if (off + hlen + sizeof(std::uint64_t) + sizeof(kFooter) > bytes.size()) {
    throw ArtifactError("checkpoint header length out of bounds: " + path);
  }
  json header;
  try {
    header = json::parse(bytes.substr(off, hlen));
  } catch (const json::exception& e) {
    throw ArtifactError("checkpoint header unreadable: " + std::string(e.what()));
  }
  off += hlen;
  if (header.at("format_version").get<int>() != kFormatVersion) {
    throw ArtifactError("checkpoint format version mismatch");
  }

  const std::size_t payload_end = bytes.size() - sizeof(kFooter) - sizeof(std::uint64_t);
  if (payload_end < off) throw ArtifactError("checkpoint payload missing");
  const std::string payload = bytes.substr(off, payload_end - off);
  std::uint64_t stored_hash = 0;
  std::memcpy(&stored_hash, bytes.data() + payload_end, sizeof(stored_hash));
  if (fnv1a(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()) !=
      stored_hash) {
    throw ArtifactError("checkpoint payload hash mismatch (corrupted file): " + path);
  }

  Checkpoint ckpt;
  ckpt.params = allocate_params(config_from_json(header.at("config")));
  auto named = named_params(ckpt.params);
  const json& manifest = header.at("params");
  if (manifest.size() != named.size()) {
    throw ArtifactError("checkpoint parameter manifest does not match the model layout");
  }
  std::size_t poff = 0;
  for (std::size_t i = 0; i < named.size(); ++i) {
    const json& entry = manifest[i];
    if (entry.at("name").get<std::string>() != named[i].first ||
        entry.at("shape").get<Shape>() != named[i].second.shape()) {
      throw ArtifactError("checkpoint parameter " + entry.at("name").get<std::string>() +
                          " does not match the model layout");
    }
    read_doubles(payload, poff, named[i].second.values());
  }

  ckpt.step = header.at("step").get<int>();
  ckpt.rng_state = header.at("rng_state").get<std::string>();
  const json& opt = header.at("optimizer");
  ckpt.has_optimizer = opt.at("present").get<bool>();
  if (ckpt.has_optimizer) {
    auto read_group = [&](const std::vector<Tensor>& group, int t) {
      AdamState::Snapshot s;
      s.t = t;
      for (const Tensor& p : group) s.m.emplace_back(p.numel(), 0.0);
      for (const Tensor& p : group) s.v.emplace_back(p.numel(), 0.0);
      for (auto& m : s.m) read_doubles(payload, poff, m);
      for (auto& v : s.v) read_doubles(payload, poff, v);
      return s;
    };
    ckpt.opt_shared = read_group(shared_group(ckpt.params), opt.at("t_shared").get<int>());
    ckpt.opt_rc = read_group(rc_group(ckpt.params), opt.at("t_rc").get<int>());
    ckpt.opt_lm = read_group(lm_group(ckpt.params), opt.at("t_lm").get<int>());
  }
  if (poff != payload.size()) {
    throw ArtifactError("checkpoint payload has trailing bytes");
  }
  return ckpt;
}

ModelParams load_params(const std::string& path) {
  return std::move(load_checkpoint(path).params);
}

// --- Trainer -----------------------------------------------------------------

Trainer::Trainer(ModelParams params, TrainSchedule schedule, TrainOptions options)
    : params_(std::move(params)),
      schedule_(schedule),
      options_(std::move(options)),
      rng_(schedule.seed) {
  schedule_.validate();
  params_.config.validate();
  opt_shared_ = AdamState(shared_group(params_));
  opt_rc_ = AdamState(rc_group(params_));
  opt_lm_ = AdamState(lm_group(params_));
}

Trainer Trainer::resume(const std::string& checkpoint_path, TrainSchedule schedule,
                        TrainOptions options) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (!ckpt.has_optimizer) {
    throw ArtifactError("checkpoint has no optimizer state; cannot resume training");
  }
  Trainer t(std::move(ckpt.params), schedule, std::move(options));
  t.opt_shared_.restore(ckpt.opt_shared);
  t.opt_rc_.restore(ckpt.opt_rc);
  t.opt_lm_.restore(ckpt.opt_lm);
  t.rng_.set_state(ckpt.rng_state);
  t.step_ = ckpt.step;
  return t;
}

void Trainer::save(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.params = params_.clone();
  ckpt.step = step_;
  ckpt.rng_state = rng_.state();
  ckpt.has_optimizer = true;
  ckpt.opt_shared = opt_shared_.snapshot();
  ckpt.opt_rc = opt_rc_.snapshot();
  ckpt.opt_lm = opt_lm_.snapshot();
  save_checkpoint(ckpt, path);
}

Rng* Trainer::dropout_rng() {
  return params_.config.dropout > 0.0 ? &rng_ : nullptr;
}

void Trainer::emit(int step, const char* mode, const char* task, double loss, double lr) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite training loss at step " + std::to_string(step));
  }
  last_loss_ = loss;
  if (options_.sink) {
    StepRecord rec;
    rec.step = step;
    rec.mode = mode;
    rec.task = task;
    rec.loss = loss;
    rec.lr = lr;
    options_.sink(rec);
  }
}

void Trainer::maybe_save() {
  if (options_.save_every > 0 && !options_.save_path.empty() &&
      step_ % options_.save_every == 0) {
    save(options_.save_path);
  }
}

namespace {

// Average that stays connected to the graph; a fully-untracked batch (possible
// when no position got selected for prediction) yields a tracked zero so the
// optimizer still sees the step.
Tensor batch_mean(const std::vector<Tensor>& losses) {
  Tensor total = losses.front();
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  Tensor mean = scale(total, 1.0 / static_cast<double>(losses.size()));
  if (!mean.requires_grad()) {
    Tensor anchored = Tensor::scalar(mean.item(), true);
    return anchored;
  }
  return mean;
}

}  // namespace

double Trainer::rc_batch_step(const std::vector<RCFeature>& features, double lr) {
  std::vector<int> batch(static_cast<std::size_t>(schedule_.batch_size));
  for (int& idx : batch) idx = rng_.uniform_int(static_cast<int>(features.size()));

  Tape tape;
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (int idx : batch) {
    const RCFeature& f = features[static_cast<std::size_t>(idx)];
    auto [start_logits, end_logits] = forward_rc(params_, f, 0, dropout_rng());
    losses.push_back(rc_loss(start_logits, end_logits, f.start_position, f.end_position));
  }
  Tensor loss = batch_mean(losses);
  tape.backward(loss);
  clip_gradients({&opt_shared_, &opt_rc_}, schedule_.grad_clip);
  opt_shared_.step(lr);
  opt_rc_.step(lr);
  return loss.item();
}

double Trainer::lm_batch_step(const PassageCorpus& corpus, const Vocabulary& vocab, double lr) {
  Tape tape;
  std::vector<Tensor> losses;
  losses.reserve(static_cast<std::size_t>(schedule_.batch_size));
  for (int b = 0; b < schedule_.batch_size; ++b) {
    const int idx = rng_.uniform_int(static_cast<int>(corpus.passages.size()));
    LMFeature f = build_lm_feature(corpus.passages[static_cast<std::size_t>(idx)], vocab,
                                   options_.lm_max_len, rng_, options_.mlm);
    LmForward fwd = forward_lm(params_, f, 0, dropout_rng());
    losses.push_back(lm_loss(fwd.mlm_logits, fwd.labels));
  }
  Tensor loss = batch_mean(losses);
  tape.backward(loss);
  clip_gradients({&opt_shared_, &opt_lm_}, schedule_.grad_clip);
  opt_shared_.step(lr);
  opt_lm_.step(lr);
  return loss.item();
}

double Trainer::nsp_batch_step(NspPairStream& stream, double lr) {
  Tape tape;
  std::vector<Tensor> losses;
  losses.reserve(static_cast<std::size_t>(schedule_.batch_size));
  for (int b = 0; b < schedule_.batch_size; ++b) {
    NSPPairFeature f = stream.next(rng_);
    LmForward fwd = forward_nsp_lm(params_, f, 0, dropout_rng());
    Tensor mlm = lm_loss(fwd.mlm_logits, fwd.labels);
    Tensor nsp = nsp_loss(fwd.nsp_logits, f.is_next);
    losses.push_back(add(mlm, nsp));
  }
  Tensor loss = batch_mean(losses);
  tape.backward(loss);
  clip_gradients({&opt_shared_, &opt_lm_}, schedule_.grad_clip);
  opt_shared_.step(lr);
  opt_lm_.step(lr);
  return loss.item();
}

void Trainer::run_no_adapt(const std::vector<RCFeature>& rc_features) {
  if (rc_features.empty()) throw ConfigError("training requires at least one RC feature");
  const int n = schedule_.total_steps;
  for (int i = step_ + 1; i <= n; ++i) {
    const double lr = lr_at_step(schedule_, i);
    const double loss = rc_batch_step(rc_features, lr);
    step_ = i;
    emit(i, "no_adapt", "rc", loss, lr);
    maybe_save();
  }
}

void Trainer::run_multitask(const std::vector<RCFeature>& rc_features,
                            const PassageCorpus& corpus, const Vocabulary& vocab) {
  if (rc_features.empty()) throw ConfigError("training requires at least one RC feature");
  if (corpus.passages.empty()) {
    throw ConfigError("multi-task training requires a non-empty passage corpus");
  }
  const int n = schedule_.total_steps;
  const int k = schedule_.rc_lm_ratio;
  for (int i = step_ + 1; i <= n; ++i) {
    const double lr = lr_at_step(schedule_, i);
    const double loss = rc_batch_step(rc_features, lr);
    step_ = i;
    emit(i, "multi_task", "rc", loss, lr);
    if (i % k == 0) {
      const double lm = lm_batch_step(corpus, vocab, lr);
      emit(i, "multi_task", "lm", lm, lr);
    }
    maybe_save();
  }
}

void Trainer::run_sequential(const std::vector<RCFeature>& rc_features,
                             const PassageCorpus& corpus, const Vocabulary& vocab) {
  if (rc_features.empty()) throw ConfigError("training requires at least one RC feature");
  const int pretrain = options_.pretrain_steps;
  if (pretrain > 0 && corpus.passages.empty()) {
    throw ConfigError("sequential training requires a non-empty passage corpus");
  }

  if (step_ < pretrain) {
    NspPairStream stream(corpus, vocab, options_.pretrain_max_len, options_.mlm);
    TrainSchedule phase1 = schedule_;
    phase1.total_steps = pretrain;
    for (int i = step_ + 1; i <= pretrain; ++i) {
      const double lr = lr_at_step(phase1, i);
      const double loss = nsp_batch_step(stream, lr);
      step_ = i;
      emit(i, "sequential", "lm", loss, lr);
      maybe_save();
    }
  }

  const int total = pretrain + schedule_.total_steps;
  for (int i = step_ + 1; i <= total; ++i) {
    const double lr = lr_at_step(schedule_, i - pretrain);
    const double loss = rc_batch_step(rc_features, lr);
    step_ = i;
    emit(i, "sequential", "rc", loss, lr);
    maybe_save();
  }
}

void Trainer::run_pretrain(const PassageCorpus& corpus, const Vocabulary& vocab) {
  if (corpus.passages.empty()) throw ConfigError("pretraining requires a non-empty corpus");
  const int n = schedule_.total_steps;
  for (int i = step_ + 1; i <= n; ++i) {
    const double lr = lr_at_step(schedule_, i);
    const double loss = lm_batch_step(corpus, vocab, lr);
    step_ = i;
    emit(i, "pretrain", "lm", loss, lr);
    maybe_save();
  }
}

}  // namespace udarc
