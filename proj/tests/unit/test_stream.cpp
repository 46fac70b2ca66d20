#include <set>

#include "doctest.h"
#include "uocl/stream.hpp"

using namespace uocl;
using namespace uocl::stream;

namespace {

std::map<std::string, data::Dataset> pools(std::size_t each) {
  const auto t0 = data::base_task("A", 5, 3, 1);
  std::map<std::string, data::Dataset> p;
  p["A"] = data::generate(t0, data::Split::stream, each, 1, 1000);
  p["B"] = data::generate(data::make_task(t0, data::Shift::channel, 0.5, 2, "B"), data::Split::stream, each, 2, 2000);
  return p;
}

StreamSchedule schedule(bool supervised) {
  StreamSchedule s;
  s.segments = {{"A", 3}, {"B", 2}, {"A", 1}};
  s.batch_size = 4;
  s.seed = 9;
  s.supervised = supervised;
  return s;
}

template <class T>
concept HasTaskId = requires(T t) { t.task_id; };

}  // namespace

static_assert(!HasTaskId<StreamBatch>, "learner-visible batches must not carry the task id");
static_assert(!HasTaskId<StreamUtterance>);
static_assert(HasTaskId<AuditEntry>);

TEST_CASE("batch counts and single emission") {
  Stream s(schedule(true), pools(20));
  CHECK(s.total_batches() == 6);
  std::set<std::uint64_t> seen;
  std::size_t n = 0;
  while (auto b = s.next()) {
    CHECK(b->index == n++);
    CHECK(b->utterances.size() == 4);
    for (const auto& u : b->utterances) CHECK(seen.insert(u.id).second);
  }
  CHECK(n == 6);
  CHECK(s.done());
  CHECK_FALSE(s.next().has_value());
  CHECK_THROWS_AS(s.take(6), StreamExhausted);
}

TEST_CASE("tasks resume across segments") {
  Stream s(schedule(false), pools(16));
  const auto& log = s.audit();
  while (s.next()) {
  }
  REQUIRE(log.size() == 6);
  CHECK(log.entries[0].task_id == "A");
  CHECK(log.entries[3].task_id == "B");
  CHECK(log.entries[5].task_id == "A");
  std::set<std::uint64_t> a_ids;
  for (const auto& e : log.entries)
    if (e.task_id == "A")
      for (auto id : e.utterance_ids) CHECK(a_ids.insert(id).second);
  CHECK(a_ids.size() == 16);
}

TEST_CASE("pool too small") {
  CHECK_THROWS_AS(Stream(schedule(false), pools(15)), std::invalid_argument);
  auto sch = schedule(false);
  sch.segments.push_back({"Z", 1});
  CHECK_THROWS_AS(Stream(sch, pools(20)), std::invalid_argument);
}

TEST_CASE("unsupervised streams strip labels") {
  Stream u(schedule(false), pools(20));
  Stream l(schedule(true), pools(20));
  while (auto b = u.next()) {
    const auto c = l.next();
    for (std::size_t i = 0; i < b->utterances.size(); ++i) {
      CHECK_FALSE(b->utterances[i].label.has_value());
      REQUIRE(c->utterances[i].label.has_value());
      CHECK(c->utterances[i].id == b->utterances[i].id);
      CHECK(c->utterances[i].features == b->utterances[i].features);
    }
  }
}

TEST_CASE("labels match the pool") {
  auto p = pools(20);
  std::map<std::uint64_t, Tokens> truth;
  for (const auto& [id, ds] : p)
    for (const auto& u : ds.utterances) truth[u.id] = u.transcript;
  Stream s(schedule(true), p);
  while (auto b = s.next())
    for (const auto& u : b->utterances) CHECK(*u.label == truth.at(u.id));
}

TEST_CASE("deterministic in the seed") {
  auto ids = [](StreamSchedule sch) {
    Stream s(sch, pools(20));
    std::vector<std::uint64_t> out;
    while (auto b = s.next())
      for (const auto& u : b->utterances) out.push_back(u.id);
    return out;
  };
  auto sch = schedule(false);
  CHECK(ids(sch) == ids(sch));
  auto other = sch;
  other.seed = 10;
  CHECK(ids(sch) != ids(other));
  auto inter = sch;
  inter.interleaved = true;
  const auto x = ids(inter);
  auto y = ids(sch);
  CHECK(x != y);
  auto xs = x;
  std::sort(xs.begin(), xs.end());
  std::sort(y.begin(), y.end());
  CHECK(xs == y);
}

TEST_CASE("take enforces order") {
  Stream s(schedule(false), pools(20));
  CHECK(s.take(0).index == 0);
  CHECK_THROWS_AS(s.take(0), AlreadyConsumed);
  CHECK_THROWS_AS(s.take(3), std::invalid_argument);
  CHECK(s.take(1).index == 1);
  CHECK(s.emitted() == 2);
  CHECK_THROWS_AS(s.take(99), StreamExhausted);
}

TEST_CASE("audit agrees with emitted batches") {
  Stream s(schedule(false), pools(20));
  std::vector<std::vector<std::uint64_t>> emitted;
  while (auto b = s.next()) {
    std::vector<std::uint64_t> ids;
    for (const auto& u : b->utterances) ids.push_back(u.id);
    emitted.push_back(ids);
  }
  REQUIRE(s.audit().size() == emitted.size());
  for (std::size_t i = 0; i < emitted.size(); ++i) {
    CHECK(s.audit().entries[i].batch == i);
    CHECK(s.audit().entries[i].utterance_ids == emitted[i]);
  }
}

TEST_CASE("schedule validation") {
  StreamSchedule s;
  CHECK(s.total_batches() == 0);
  s.batch_size = 0;
  s.segments = {{"A", 1}};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}
