#pragma once

// Non-i.i.d. batch stream with hidden task identity and single-pass semantics.
//
// Learners only ever see StreamBatch, which carries no task id. The true
// batch -> task mapping lives in the AuditLog, which is handed to the
// evaluator and never to update rules.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "uocl/autodiff.hpp"
#include "uocl/data.hpp"
#include "uocl/tokens.hpp"

namespace uocl::stream {

struct Segment {
  std::string task_id;
  std::size_t batches = 0;
};

struct StreamSchedule {
  std::vector<Segment> segments;
  std::size_t batch_size = 10;
  std::uint64_t seed = 0;
  bool supervised = false;   // labels visible to the learner
  bool interleaved = false;  // shuffle batches across segments (stress test)

  void validate() const;
  std::size_t total_batches() const;
};

struct StreamUtterance {
  std::uint64_t id = 0;
  ad::Array features;
  std::optional<Tokens> label;  // present only on supervised streams
};

struct StreamBatch {
  std::size_t index = 0;  // monotone, starting at 0
  std::vector<StreamUtterance> utterances;
};

struct AuditEntry {
  std::size_t batch = 0;
  std::string task_id;
  std::vector<std::uint64_t> utterance_ids;
};

struct AuditLog {
  std::vector<AuditEntry> entries;
  std::size_t size() const { return entries.size(); }
};

class StreamExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AlreadyConsumed : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Stream {
 public:
  /// `pools` maps task id -> that task's stream split. A task that appears in
  /// several segments continues where it left off; every utterance is used at
  /// most once. Throws std::invalid_argument when a pool is too small.
  Stream(StreamSchedule schedule, std::map<std::string, data::Dataset> pools);

  std::size_t total_batches() const { return plan_.size(); }
  std::size_t emitted() const { return cursor_; }
  bool done() const { return cursor_ >= plan_.size(); }

  /// Next batch in order, or nullopt at end of stream.
  std::optional<StreamBatch> next();
  /// Emits batch `i`, which must be the next unconsumed index. Asking for an
  /// index that was already emitted throws AlreadyConsumed; past the end
  /// throws StreamExhausted.
  StreamBatch take(std::size_t i);

  const AuditLog& audit() const { return audit_; }

 private:
  struct Planned {
    std::string task_id;
    std::vector<std::size_t> rows;  // indices into pools_[task_id]
  };

  StreamSchedule schedule_;
  std::map<std::string, data::Dataset> pools_;
  std::vector<Planned> plan_;
  std::size_t cursor_ = 0;
  AuditLog audit_;
};

}  // namespace uocl::stream
