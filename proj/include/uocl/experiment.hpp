#pragma once

// Experiment orchestration: synthetic world construction, pretraining of θ₀,
// stream runs, ablations, comparisons and hyper-parameter sweeps.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "uocl/config.hpp"
#include "uocl/data.hpp"
#include "uocl/metrics.hpp"
#include "uocl/model.hpp"
#include "uocl/ocl.hpp"
#include "uocl/selftrain.hpp"
#include "uocl/stream.hpp"

namespace uocl::experiment {

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint or report does not fit the configuration it is used with.
class MismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TaskDef {
  std::string id;
  data::Shift shift = data::Shift::channel;
  double magnitude = 0.0;
  std::uint64_t seed = 0;
  std::size_t min_length = 0;  // 0: inherit from the base task
  std::size_t max_length = 0;
};

struct DataConfig {
  std::uint64_t seed = 1;
  std::size_t symbols = 13;
  double noise = 0.4;
  std::size_t pretrain_count = 1000;
  std::size_t dev_count = 100;
  std::size_t test_count = 100;
  std::vector<TaskDef> tasks;  // stream tasks, in stream order
};

struct PretrainConfig {
  std::size_t epochs = 20;
  double lr = 0.05;
  std::size_t batch_size = 10;
  std::size_t patience = 4;  // epochs without dev improvement before stopping
  std::uint64_t seed = 7;
};

struct ExperimentConfig {
  std::string name = "run";
  model::ModelConfig model;
  ctc::DecodeConfig decode;
  DataConfig data;
  PretrainConfig pretrain;
  ocl::LearnerConfig learner;
  std::size_t lm_order = 2;
  double lm_smoothing = 0.5;
  std::size_t batch_size = 10;
  std::size_t batches_per_task = 20;
  bool interleaved = false;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string echo;  // effective key=value configuration

  /// Reads every key (applying defaults) and rejects unknown ones.
  static ExperimentConfig from(const Config& c);
  Config as_config() const;
};

struct World {
  std::vector<data::TaskSpec> specs;  // T0 first, then the stream tasks
  data::Dataset pretrain;
  data::Dataset dev;
  std::map<std::string, data::Dataset> stream_pools;
  std::vector<data::Dataset> tests;  // one per task, T0 first
  selftrain::NgramLM lm{2, 16, 0.5};
};

/// Deterministic in the data section of the configuration.
World build_world(const ExperimentConfig& cfg);

struct PretrainResult {
  Checkpoint theta0;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> dev_wer;     // per epoch
  std::size_t best_epoch = 0;      // 0 when no epoch ran
  double initial_dev_wer = 0.0;
};

/// Multi-epoch supervised SGD on T0 with early stopping on dev WER; returns
/// the best-dev checkpoint. Throws DivergenceError on a non-finite loss.
PretrainResult pretrain(const ExperimentConfig& cfg, const World& world);

struct SeedRun {
  std::uint64_t seed = 0;
  metrics::EvalReport report;                  // evaluated model (final for AOS)
  std::optional<metrics::EvalReport> adapted;  // diagnostic for AOS / AOS-U
  std::size_t steps = 0;
  std::size_t batches = 0;
  bool unique_utterances = true;  // from the audit log
  stream::AuditLog audit;
  double seconds = 0.0;
};

SeedRun run_seed(const ExperimentConfig& cfg, const World& world, const Checkpoint& theta0, std::uint64_t seed);

struct RunArtifact {
  std::string run_id;
  std::string config_echo;
  metrics::EvalReport initial;
  std::vector<SeedRun> runs;
  double seconds = 0.0;

  double mean_average_wer() const;
  /// Per-utterance error counts of every seed, concatenated (seed order).
  std::vector<std::uint32_t> pooled_errors() const;
  /// Per-task WERs and Avg. averaged over seeds (the summary CSV row).
  metrics::EvalReport mean_report() const;
  nlohmann::ordered_json to_json() const;
  /// Reads what to_json wrote.
  static RunArtifact from_json(const nlohmann::json& j);
};

std::string run_id(const std::string& config_echo, const Checkpoint& theta0);

/// Digest of the keys θ₀ depends on (data, model, decode, pretrain), for
/// caching pretrained checkpoints across runs.
std::string theta0_key(const ExperimentConfig& cfg);

RunArtifact run_stream(const ExperimentConfig& cfg, const World& world, const Checkpoint& theta0);

struct Variant {
  std::string name;
  ocl::AosuConfig aosu;
};
/// Baseline unsupervised AOS, +(1)+(2), +(1)+(2)+(3), +(1)+(3).
std::vector<Variant> ablation_variants(std::size_t passes);

struct AblationResult {
  std::vector<std::string> variants;
  std::vector<RunArtifact> runs;
};
AblationResult run_ablation(const ExperimentConfig& cfg, const World& world, const Checkpoint& theta0);

struct Comparison {
  std::vector<std::string> names;
  std::vector<double> average_wer;
  // [i][j]: test of i against j on pooled per-utterance errors.
  std::vector<std::vector<metrics::SignificanceResult>> tests;
  // [i][j]: +1 if i has fewer errors than j, −1 if more, 0 if equal.
  std::vector<std::vector<int>> better;
  nlohmann::ordered_json to_json() const;
};

/// `errors[i]` must all have the same length (paired utterances).
Comparison compare(const std::vector<std::string>& names, const std::vector<std::vector<std::uint32_t>>& errors,
                   const std::vector<double>& average_wer);

/// Grid search: `grid` maps config keys to candidate values; every
/// combination is run on the configuration's tasks (which should be held-out
/// tuning tasks) and ranked by seed-averaged average WER.
struct TuneResult {
  std::vector<std::map<std::string, std::string>> points;
  std::vector<double> scores;
  std::size_t best = 0;
};
TuneResult tune(const Config& base, const std::map<std::string, std::vector<std::string>>& grid);

}  // namespace uocl::experiment
