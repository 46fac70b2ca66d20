#pragma once

// Online continual learning update rules: FT, ER, AOS and AOS-U, each taking
// exactly one optimizer step per stream batch in its default configuration.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uocl/checkpoint.hpp"
#include "uocl/model.hpp"
#include "uocl/selftrain.hpp"
#include "uocl/stream.hpp"

namespace uocl::ocl {

using selftrain::LabeledUtterance;

enum class Method { ft, er, aos, aosu };
enum class Mode { supervised, unsupervised };
Method parse_method(const std::string& s);
Mode parse_mode(const std::string& s);
std::string to_string(Method m);
std::string to_string(Mode m);

struct UpdateStats {
  double loss = 0.0;
  std::size_t steps = 0;  // optimizer steps taken
};

/// One SGD step on the hybrid loss of `items`.
UpdateStats ft_update(Checkpoint& ckpt, std::span<const LabeledUtterance> items, const model::ModelConfig& cfg,
                      double lr, const model::RandomEffects& fx);

class ReplayMemory {
 public:
  ReplayMemory(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {}

  std::size_t capacity() const { return capacity_; }
  std::uint64_t seen() const { return seen_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const std::vector<LabeledUtterance>& items() const { return items_; }

  /// Reservoir sampling: the first M items are stored, afterwards item n is
  /// kept with probability M/n in a uniformly chosen slot.
  void insert(LabeledUtterance item);
  /// Up to `count` distinct stored items, uniformly without replacement.
  std::vector<LabeledUtterance> sample(std::size_t count);

  void serialize(bytes::Writer& w) const;
  static ReplayMemory deserialize(bytes::Reader& r);

 private:
  std::size_t capacity_;
  std::uint64_t seen_ = 0;
  std::vector<LabeledUtterance> items_;
  Rng rng_;
};

inline void reservoir_insert(ReplayMemory& mem, LabeledUtterance item) { mem.insert(std::move(item)); }

/// Draws `replay` items (0 means "as many as the batch") from memory, takes
/// one step on the union, then offers every batch item to the memory.
UpdateStats er_update(Checkpoint& ckpt, std::span<const LabeledUtterance> items, ReplayMemory& mem,
                      const model::ModelConfig& cfg, double lr, const model::RandomEffects& fx,
                      std::size_t replay = 0);

/// τF_i / (F_{1:i} + τF_i), defined as 0 when the denominator vanishes.
double aos_eta(double batch_units, double cumulative_units, double tau);

struct AveragerState {
  Checkpoint final_model;
  Checkpoint adapted;
  double frames = 0.0;  // F_{1:i}
  double tokens = 0.0;  // decoder tokens seen so far
  double tau = 1.0;
  double tau2 = 1.0;

  static AveragerState start(const Checkpoint& theta0, double tau, double tau2);
};

/// θ ← θ + η(θ̃ − θ): encoder and CTC-head segments with eta_enc, decoder
/// segments with eta_dec. Then advances the cumulative counters.
void aos_merge(AveragerState& s, double eta_enc, double eta_dec, double batch_frames, double batch_tokens);

struct KdConfig {
  double weight = 0.0;
  double temperature = 1.0;
};

/// T²·KL(teacher ‖ student) on temperature-softened CTC frame distributions
/// plus teacher-forced decoder distributions (over decoder targets), each
/// averaged over positions, then over utterances. Teacher runs without random
/// effects; only the student receives gradients.
ad::Var kd_loss(ad::Tape& tape, const ad::BoundParams& student, const Checkpoint& teacher,
                std::span<const LabeledUtterance> items, const model::ModelConfig& cfg, const KdConfig& kd);

/// Supervised: the adapted model steps on hybrid loss + KD toward the final
/// model. Unsupervised: the final model labels the batch, the adapted model
/// steps on those PLs without KD. Either way the merge follows.
UpdateStats aos_update(AveragerState& s, std::span<const stream::StreamUtterance> batch, Mode mode,
                       const KdConfig& kd, const selftrain::GeneratorConfig& st, const model::ModelConfig& cfg,
                       double lr, const model::RandomEffects& fx);

enum class PlSource { adapted, final_model };

struct AosuConfig {
  std::size_t passes = 2;  // K
  PlSource source = PlSource::adapted;
  bool kd = false;
  /// K sequential steps instead of one step on the K-pass mean. Breaks the
  /// one-step-per-batch rule; only for ablations.
  bool sequential = false;
};

UpdateStats aosu_update(AveragerState& s, std::span<const stream::StreamUtterance> batch, const AosuConfig& acfg,
                        const KdConfig& kd, const selftrain::GeneratorConfig& st, const model::ModelConfig& cfg,
                        double lr, const model::RandomEffects& fx);

/// Mean over K passes of the hybrid loss (pass k uses effects seed
/// derive_seed(fx.seed, k)) plus kd.weight·KD when a teacher is given.
/// Gradients are accumulated into `grad`; returns the loss value.
double multipass_loss_grad(std::span<const LabeledUtterance> items, const model::ModelConfig& cfg,
                           const Checkpoint& ckpt, const model::RandomEffects& fx, std::size_t passes,
                           const Checkpoint* teacher, const KdConfig& kd, std::vector<double>& grad);

void apply_gradient(Checkpoint& ckpt, std::span<const double> grad, double lr);

struct LearnerConfig {
  Method method = Method::ft;
  Mode mode = Mode::unsupervised;
  double lr = 0.01;
  std::size_t memory = 2000;  // M
  std::size_t replay = 0;     // 0: batch size
  // τ, τ₂ and the KD weight were picked by `uocl tune` on configs/tune.cfg.
  double tau = 8.0;
  double tau2 = 1.0;
  KdConfig kd{1.0, 1.0};
  AosuConfig aosu;
  selftrain::GeneratorConfig st;
  std::uint64_t seed = 0;
  bool random_effects = true;
};

/// Owns the model(s) and method state for one stream run.
class Learner {
 public:
  Learner(const model::ModelConfig& cfg, LearnerConfig lcfg, const Checkpoint& theta0);

  UpdateStats observe(const stream::StreamBatch& batch);

  /// The model that is evaluated: the final model for AOS and AOS-U.
  const Checkpoint& model() const;
  /// The adapted model for AOS and AOS-U, otherwise null.
  const Checkpoint* adapted() const;
  std::size_t steps() const { return steps_; }
  std::size_t batches() const { return batches_; }
  const LearnerConfig& config() const { return lcfg_; }
  const ReplayMemory& memory() const { return memory_; }

  /// Crash-recovery snapshot between batches.
  void save_state(const std::filesystem::path& path) const;
  void load_state(const std::filesystem::path& path);

 private:
  model::ModelConfig cfg_;
  LearnerConfig lcfg_;
  Checkpoint model_;
  std::optional<AveragerState> avg_;
  ReplayMemory memory_;
  std::size_t steps_ = 0;
  std::size_t batches_ = 0;
};

}  // namespace uocl::ocl
