#pragma once

// CTC loss (forward-backward in log space), a brute-force path-enumeration
// oracle, greedy decoding and an exact prefix-scored beam search that can be
// fused with any autoregressive token scorer (attention decoder, n-gram LM).

#include <limits>
#include <span>
#include <stdexcept>

#include "uocl/autodiff.hpp"
#include "uocl/tokens.hpp"

namespace uocl::ctc {

/// Stand-in for log(0). Large enough that adding a handful of finite
/// log-probabilities keeps it far below any reachable score, small enough to
/// keep arithmetic finite.
inline constexpr double kLogZero = -1e30;

double log_add(double a, double b);

/// Label is longer than the frame count admits (U plus one frame per
/// adjacent repeat). Distinct from numeric underflow, which cannot happen in
/// log space.
class LabelTooLong : public std::invalid_argument {
 public:
  LabelTooLong(std::size_t label_len, std::size_t needed, std::size_t frames);
};

class InfeasibleEnumeration : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Frames needed to emit `label`: its length plus one blank per adjacent repeat.
std::size_t min_frames(std::span<const int> label);

/// -log Σ_paths P(path). log_probs is F×C; column kBlank is the blank.
double ctc_loss(const ad::Array& log_probs, std::span<const int> label);

/// d ctc_loss / d log_probs, entries treated as independent inputs.
ad::Array ctc_grad(const ad::Array& log_probs, std::span<const int> label);

/// Differentiable CTC loss node.
ad::Var ctc_loss(ad::Var log_probs, std::span<const int> label);

/// Exact sum over all C^F frame paths. +inf when no path collapses to the
/// label. Throws InfeasibleEnumeration above 2^20 paths.
double brute_force_ctc(const ad::Array& log_probs, std::span<const int> label);

/// Merge repeats, then drop blanks.
Tokens collapse(std::span<const int> alignment);

/// Per-frame argmax (lowest index on ties), then collapse.
Tokens greedy_ctc_decode(const ad::Array& log_probs);

/// Exact CTC prefix probabilities (forward variables split by whether the
/// last frame emitted blank or the last label symbol).
class PrefixScorer {
 public:
  struct State {
    Tokens prefix;
    std::vector<double> r_nonblank;  // per frame
    std::vector<double> r_blank;
    double score = 0.0;  // log P(prefix is a prefix of the labelling)
  };

  explicit PrefixScorer(const ad::Array& log_probs);

  State initial() const;
  /// Extends by `token`. kEos yields the full-sequence log-probability of the
  /// current prefix.
  State extend(const State& s, int token) const;
  /// Only the score of the extension; cheaper when the state is discarded.
  double extension_score(const State& s, int token) const;

 private:
  const ad::Array* lp_;
  std::size_t frames_;
};

/// Autoregressive next-token log-distribution given a prefix starting with kBos.
class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  virtual std::vector<double> next_log_probs(std::span<const int> prefix) = 0;
};

struct DecodeConfig {
  int beam = 1;
  double ctc_weight = 0.3;
  int max_len = 24;
};

struct Hypothesis {
  Tokens tokens;
  double score = 0.0;
  bool truncated = false;
};

/// Beam search scoring a hypothesis as
///   ctc_weight · ctc_prefix_score + token_weight · Σ token scorer log-probs.
/// Candidates are the ordinary symbols plus kEos. Hypotheses still running at
/// max_len are closed with kEos and flagged truncated.
Hypothesis prefix_beam_search(const ad::Array& log_probs, TokenScorer* scorer,
                              double ctc_weight, double token_weight, int beam,
                              int max_len);

/// Best of plain beam searches with widths 1..beam. A single beam search is
/// not monotone in its width; this result's score is nondecreasing in `beam`.
/// Identical to prefix_beam_search for beam == 1.
Hypothesis monotone_beam_search(const ad::Array& log_probs, TokenScorer* scorer,
                                double ctc_weight, double token_weight, int beam,
                                int max_len);

}  // namespace uocl::ctc
