#pragma once

// Pseudo-label generators. Every generator runs the model with random effects
// disabled, so its output is a pure function of (checkpoint, batch, config).

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "uocl/checkpoint.hpp"
#include "uocl/ctc.hpp"
#include "uocl/model.hpp"
#include "uocl/stream.hpp"

namespace uocl::selftrain {

/// An utterance with a target for each loss head. Shared PLs put the same
/// sequence in both.
struct LabeledUtterance {
  std::uint64_t id = 0;
  ad::Array features;
  Tokens ctc_target;
  Tokens decoder_target;
};

struct PseudoLabeledBatch {
  std::string generator;
  std::vector<LabeledUtterance> items;
  std::vector<double> length_ratio;  // |PL| / frames, decoder-side PL
  std::vector<bool> truncated;
};

enum class Method { ctc, hybrid, split, lmfusion };
Method parse_method(const std::string& s);
std::string to_string(Method m);

/// Order-n token LM with add-k smoothing over the symbols plus kEos.
/// Contexts before the start of a sentence are padded with kBos.
///
/// Counts file (text):
///   uocl-ngram 1
///   order <n>
///   vocab <C>
///   smoothing <k>
///   <count> <ctx_1> ... <ctx_{n-1}> <next>     one line per observed n-gram
class NgramLM : public ctc::TokenScorer {
 public:
  NgramLM(std::size_t order, std::size_t vocab, double smoothing);

  void add_sentence(std::span<const int> tokens);
  /// Log-probabilities over the vocabulary; reserved ids other than kEos get
  /// ctc::kLogZero. Only the last order−1 tokens of `prefix` matter.
  std::vector<double> next_log_probs(std::span<const int> prefix) override;
  double sentence_log_prob(std::span<const int> tokens) const;

  std::size_t order() const { return order_; }
  std::size_t vocab() const { return vocab_; }
  double smoothing() const { return smoothing_; }

  void save(const std::filesystem::path& path) const;
  static NgramLM load(const std::filesystem::path& path);
  bool operator==(const NgramLM& o) const {
    return order_ == o.order_ && vocab_ == o.vocab_ && smoothing_ == o.smoothing_ && counts_ == o.counts_;
  }

 private:
  std::vector<double> distribution(std::span<const int> context) const;

  std::size_t order_;
  std::size_t vocab_;
  double smoothing_;
  std::map<std::vector<int>, std::uint64_t> counts_;   // context + next
  std::map<std::vector<int>, std::uint64_t> context_;  // context totals
};

struct PlFilter {
  bool enabled = false;
  double min_ratio = 0.0;
  double max_ratio = 1.0;
};

/// Greedy CTC; the decoder is not involved.
PseudoLabeledBatch generate_pl_ctc(std::span<const stream::StreamUtterance> batch, const model::ModelConfig& cfg,
                                   const Checkpoint& ckpt);
/// Joint CTC/decoder beam search.
PseudoLabeledBatch generate_pl_hybrid(std::span<const stream::StreamUtterance> batch,
                                      const model::ModelConfig& cfg, const Checkpoint& ckpt,
                                      const ctc::DecodeConfig& dcfg);
/// CTC head trains on the greedy CTC PL, the decoder on the hybrid PL.
PseudoLabeledBatch generate_pl_split(std::span<const stream::StreamUtterance> batch,
                                     const model::ModelConfig& cfg, const Checkpoint& ckpt,
                                     const ctc::DecodeConfig& dcfg);
/// Beam search over CTC prefix scores shallow-fused with `lm` at weight
/// `lambda`; the model's decoder is not involved.
PseudoLabeledBatch generate_pl_lmfusion(std::span<const stream::StreamUtterance> batch,
                                        const model::ModelConfig& cfg, const Checkpoint& ckpt, NgramLM& lm,
                                        const ctc::DecodeConfig& dcfg, double lambda);

struct GeneratorConfig {
  Method method = Method::ctc;
  ctc::DecodeConfig decode;
  double lm_weight = 0.3;
  NgramLM* lm = nullptr;  // required for lmfusion
  PlFilter filter;
};

PseudoLabeledBatch generate(std::span<const stream::StreamUtterance> batch, const model::ModelConfig& cfg,
                            const Checkpoint& ckpt, const GeneratorConfig& g);

/// Drops utterances whose length ratio lies outside [min_ratio, max_ratio].
/// No-op when the filter is disabled.
void apply_filter(PseudoLabeledBatch& pl, const PlFilter& f);

/// Ground-truth targets from a supervised batch; throws if a label is missing.
std::vector<LabeledUtterance> ground_truth(std::span<const stream::StreamUtterance> batch);

std::vector<model::Example> examples(std::span<const LabeledUtterance> items);

}  // namespace uocl::selftrain
