#pragma once

// Token error rates, per-task evaluation and the Wilcoxon signed-rank test.
//
// "WER" throughout is token-level: the toy vocabulary has no word boundaries.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "uocl/checkpoint.hpp"
#include "uocl/ctc.hpp"
#include "uocl/data.hpp"
#include "uocl/model.hpp"

namespace uocl::metrics {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;

  std::size_t total() const { return substitutions + deletions + insertions; }
  bool operator==(const EditCounts&) const = default;
};

/// Minimal edit script by DP. Among optimal scripts the backtrace prefers a
/// substitution (or match), then a deletion, then an insertion.
EditCounts edit_distance(std::span<const int> ref, std::span<const int> hyp);

/// 100·(S+D+I)/Σ|ref|. Zero total reference length gives 0 when every
/// hypothesis is empty too, otherwise throws.
double wer(std::span<const Tokens> refs, std::span<const Tokens> hyps);

struct TaskResult {
  std::string task_id;
  double wer = 0.0;
  std::vector<std::uint32_t> errors;   // per utterance
  std::vector<std::uint32_t> ref_lengths;
  std::vector<std::uint64_t> utterance_ids;
  std::size_t truncated = 0;           // hypotheses cut at max length
};

struct EvalReport {
  std::string checkpoint_id;
  std::string method;
  std::string st;
  std::vector<TaskResult> tasks;
  /// Task-mean; the utterance-pooled figure is kept alongside for reference.
  double average_wer = 0.0;
  double pooled_wer = 0.0;

  void finalize();  // recomputes the averages from `tasks`
  const TaskResult& task(const std::string& id) const;
  /// Per-utterance error counts of every task, concatenated in task order.
  std::vector<std::uint32_t> all_errors() const;
};

TaskResult evaluate_task(const data::Dataset& test, const model::ModelConfig& cfg, const Checkpoint& ckpt,
                         const ctc::DecodeConfig& dcfg);

EvalReport evaluate_all_tasks(std::span<const data::Dataset> tests, const model::ModelConfig& cfg,
                              const Checkpoint& ckpt, const ctc::DecodeConfig& dcfg);

nlohmann::ordered_json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
/// Header "name,<task ids...>,Avg." and one row; WERs with two decimals.
std::string csv_header(const EvalReport& r);
std::string csv_row(const EvalReport& r, const std::string& name);

enum class Stars { ns, one, two, three };
std::string to_string(Stars s);
Stars stars_for(double p);

struct SignificanceResult {
  double statistic = 0.0;  // W+ (sum of ranks of positive a−b differences)
  double p_value = 1.0;    // two-sided
  Stars stars = Stars::ns;
  std::size_t n = 0;       // nonzero differences
  bool exact = true;
};

/// Paired two-sided test on a−b. Zero differences are dropped, tied |d| share
/// average ranks. Exact null distribution for n <= 25, normal approximation
/// with tie-corrected variance and continuity correction above.
SignificanceResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);
SignificanceResult wilcoxon_signed_rank(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

inline constexpr std::size_t kExactWilcoxonLimit = 25;

}  // namespace uocl::metrics
