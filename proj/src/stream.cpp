#include "uocl/stream.hpp"

#include <algorithm>
#include <numeric>

namespace uocl::stream {

void StreamSchedule::validate() const {
  if (batch_size < 1) throw std::invalid_argument("stream batch size must be >= 1");
  for (const auto& s : segments) {
    if (s.batches == 0) throw std::invalid_argument("stream segment for task '" + s.task_id + "' is empty");
  }
}

std::size_t StreamSchedule::total_batches() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.batches;
  return n;
}

Stream::Stream(StreamSchedule schedule, std::map<std::string, data::Dataset> pools)
    : schedule_(std::move(schedule)), pools_(std::move(pools)) {
  schedule_.validate();
  // Per task: one seeded permutation of its pool, consumed front to back.
  std::map<std::string, std::vector<std::size_t>> order;
  std::map<std::string, std::size_t> used;
  std::uint64_t salt = 0;
  for (const auto& [id, ds] : pools_) {
    auto& o = order[id];
    o.resize(ds.size());
    std::iota(o.begin(), o.end(), 0);
    Rng rng(derive_seed(schedule_.seed, salt++));
    std::shuffle(o.begin(), o.end(), rng);
  }
  for (const auto& seg : schedule_.segments) {
    auto it = order.find(seg.task_id);
    if (it == order.end()) throw std::invalid_argument("stream: no data for task '" + seg.task_id + "'");
    auto& u = used[seg.task_id];
    for (std::size_t b = 0; b < seg.batches; ++b) {
      if (u + schedule_.batch_size > it->second.size()) {
        throw std::invalid_argument("stream: task '" + seg.task_id + "' has too few utterances for its segments");
      }
      Planned p{seg.task_id, {it->second.begin() + u, it->second.begin() + u + schedule_.batch_size}};
      u += schedule_.batch_size;
      plan_.push_back(std::move(p));
    }
  }
  if (schedule_.interleaved) {
    Rng rng(derive_seed(schedule_.seed, 0xba7c4));
    std::shuffle(plan_.begin(), plan_.end(), rng);
  }
}

std::optional<StreamBatch> Stream::next() {
  if (done()) return std::nullopt;
  return take(cursor_);
}

StreamBatch Stream::take(std::size_t i) {
  if (i < cursor_) throw AlreadyConsumed("stream batch " + std::to_string(i) + " was already emitted");
  if (i >= plan_.size()) throw StreamExhausted("stream has only " + std::to_string(plan_.size()) + " batches");
  if (i != cursor_) throw std::invalid_argument("stream batches must be consumed in order");
  auto& p = plan_[i];
  auto& pool = pools_.at(p.task_id);
  StreamBatch b;
  b.index = i;
  AuditEntry a{i, p.task_id, {}};
  for (auto r : p.rows) {
    auto& u = pool.utterances[r];
    StreamUtterance s;
    s.id = u.id;
    // Moving out leaves nothing behind to emit twice.
    s.features = std::move(u.features);
    if (schedule_.supervised) s.label = std::move(u.transcript);
    u.transcript.clear();
    a.utterance_ids.push_back(s.id);
    b.utterances.push_back(std::move(s));
  }
  p.rows.clear();
  audit_.entries.push_back(std::move(a));
  ++cursor_;
  return b;
}

}  // namespace uocl::stream
