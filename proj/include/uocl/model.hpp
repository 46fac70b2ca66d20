#pragma once

// Toy hybrid CTC/attention encoder-decoder.
//
// Encoder: input projection + sinusoidal positions, `encoder_blocks` residual
// blocks of (depthwise conv -> pointwise linear -> tanh), one residual
// self-attention layer, CTC head. Decoder: token embedding + learned position
// embedding as the query of one cross-attention layer over encoder states,
// a tanh hidden layer and the output projection. No frame subsampling.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uocl/autodiff.hpp"
#include "uocl/checkpoint.hpp"
#include "uocl/ctc.hpp"
#include "uocl/tokens.hpp"

namespace uocl::model {

enum class CeNormalization { per_token, per_utterance };

struct ModelConfig {
  std::size_t feature_dim = 10;
  std::size_t encoder_hidden = 32;
  std::size_t encoder_blocks = 2;
  std::size_t conv_width = 3;
  std::size_t decoder_hidden = 32;
  std::size_t vocab = 16;  // blank, BOS, EOS + symbols
  std::size_t max_label_len = 24;
  double dropout = 0.1;
  double ctc_weight = 0.3;
  std::size_t max_time_mask = 4;
  std::size_t max_feature_mask = 2;
  std::size_t masks_per_utterance = 1;
  CeNormalization ce_normalization = CeNormalization::per_token;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
  std::size_t symbol_count() const { return vocab - kFirstSymbol; }
};

struct RandomEffects {
  std::uint64_t seed = 0;
  bool dropout = false;
  bool augment = false;

  static RandomEffects disabled() { return {}; }
  static RandomEffects training(std::uint64_t seed) { return {seed, true, true}; }
  bool any() const { return dropout || augment; }
};

class LabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fresh checkpoint with the segment layout for `cfg`, randomly initialised
/// (scaled uniform weights, zero biases). `seed` fully determines it.
Checkpoint init_checkpoint(const ModelConfig& cfg, std::uint64_t seed);
/// Same layout, every parameter zero.
Checkpoint zero_checkpoint(const ModelConfig& cfg);

/// Rectangular time and feature zero-masks. Identity when augmentation is off.
ad::Array augment(const ad::Array& features, const ModelConfig& cfg, Rng& rng);

struct EncoderOutput {
  ad::Var states;    // F × H
  ad::Var log_probs; // F × C
};

/// Tape-level forward pass; `rng` drives dropout and augmentation when enabled.
EncoderOutput encode(ad::Tape& tape, const ad::BoundParams& params, const ad::Array& features,
                     const ModelConfig& cfg, const RandomEffects& fx, Rng& rng);

/// Teacher-forced decoder log-probabilities for inputs (kBos, y1..yU):
/// (U+1) × C.
ad::Var decoder_log_probs(ad::Tape& tape, const ad::BoundParams& params, ad::Var states,
                          std::span<const int> inputs, const ModelConfig& cfg,
                          const RandomEffects& fx, Rng& rng);

struct Encoded {
  ad::Array states;
  ad::Array log_probs;
};

Encoded encode(const ad::Array& features, const ModelConfig& cfg, const Checkpoint& ckpt,
               const RandomEffects& fx = RandomEffects::disabled());

/// Next-token log-distribution after `prefix` (must start with kBos).
std::vector<double> decode_step(std::span<const int> prefix, const ad::Array& states,
                                const ModelConfig& cfg, const Checkpoint& ckpt,
                                const RandomEffects& fx = RandomEffects::disabled());

/// Forward-only decoder with encoder keys/values projected once; used by
/// beam search. Equivalent to decode_step with random effects disabled.
class DecoderScorer : public ctc::TokenScorer {
 public:
  DecoderScorer(const ad::Array& states, const ModelConfig& cfg, const Checkpoint& ckpt);
  std::vector<double> next_log_probs(std::span<const int> prefix) override;

 private:
  const ModelConfig* cfg_;
  const Checkpoint* ckpt_;
  std::size_t frames_;
  std::vector<double> keys_;    // F × Hd
  std::vector<double> values_;  // F × Hd
};

/// Training example; the two heads may carry different targets.
struct Example {
  const ad::Array* features = nullptr;
  Tokens ctc_target;
  Tokens decoder_target;
};

void validate_label(std::span<const int> label, const ModelConfig& cfg);

struct LossParts {
  ad::Var total;
  double ctc = 0.0;      // mean over utterances
  double decoder = 0.0;  // mean over utterances
};

/// c·CTC + (1−c)·decoder CE, averaged over utterances. `ctc_weight` overrides
/// cfg.ctc_weight when set. Each example draws its own effects seed from
/// fx.seed and its position. An utterance too short for its CTC target
/// (possible with pseudo-labels) contributes only the decoder term.
LossParts hybrid_loss(ad::Tape& tape, const ad::BoundParams& params, std::span<const Example> batch,
                      const ModelConfig& cfg, const RandomEffects& fx,
                      std::optional<double> ctc_weight = std::nullopt);

double hybrid_loss(std::span<const Example> batch, const ModelConfig& cfg, const Checkpoint& ckpt,
                   const RandomEffects& fx = RandomEffects::disabled(),
                   std::optional<double> ctc_weight = std::nullopt);

/// Loss value and gradient (stored into a copy of the checkpoint's grad).
struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};
LossAndGrad hybrid_loss_grad(std::span<const Example> batch, const ModelConfig& cfg,
                             const Checkpoint& ckpt, const RandomEffects& fx);

/// Hybrid joint decoding with the model's own decoder.
ctc::Hypothesis hybrid_decode(const ad::Array& states, const ad::Array& log_probs,
                              const ctc::DecodeConfig& dcfg, const ModelConfig& cfg,
                              const Checkpoint& ckpt);

/// Encoder + hybrid decoding of one utterance, random effects disabled.
ctc::Hypothesis recognize(const ad::Array& features, const ctc::DecodeConfig& dcfg,
                          const ModelConfig& cfg, const Checkpoint& ckpt);

}  // namespace uocl::model
