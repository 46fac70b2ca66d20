#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "uocl/ocl.hpp"

using namespace uocl;
using namespace uocl::ocl;
using ad::Array;
using ad::Shape;

namespace {

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.feature_dim = 4;
  cfg.encoder_hidden = 8;
  cfg.decoder_hidden = 8;
  cfg.vocab = 6;
  cfg.max_label_len = 6;
  return cfg;
}

std::vector<LabeledUtterance> labeled(std::size_t n, std::uint64_t seed, std::uint64_t id0 = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> sym(kFirstSymbol, 5);
  std::vector<LabeledUtterance> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tokens y{sym(rng), sym(rng)};
    out.push_back({id0 + i, Array(Shape{8, 4}, testing::random_vector(32, rng)), y, y});
  }
  return out;
}

std::vector<stream::StreamUtterance> unlabeled(const std::vector<LabeledUtterance>& items, bool keep_labels) {
  std::vector<stream::StreamUtterance> out;
  for (const auto& it : items) {
    out.push_back({it.id, it.features, keep_labels ? std::optional<Tokens>(it.ctc_target) : std::nullopt});
  }
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("ft with lr 0 leaves the checkpoint unchanged") {
  const auto cfg = tiny_config();
  auto ck = model::init_checkpoint(cfg, 1);
  const auto before = ck;
  const auto items = labeled(3, 2);
  const auto st = ft_update(ck, items, cfg, 0.0, model::RandomEffects::training(4));
  CHECK(st.steps == 1);
  CHECK(ck == before);
}

TEST_CASE("ft step decreases the loss on its batch") {
  const auto cfg = tiny_config();
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto ck = model::init_checkpoint(cfg, 10 + s);
    const auto items = labeled(4, 20 + s);
    const auto ex = selftrain::examples(items);
    const double before = model::hybrid_loss(ex, cfg, ck);
    ft_update(ck, items, cfg, 1e-3, model::RandomEffects::disabled());
    CHECK(model::hybrid_loss(ex, cfg, ck) < before);
  }
}

TEST_CASE("ft equals a manual SGD step") {
  const auto cfg = tiny_config();
  auto ck = model::init_checkpoint(cfg, 3);
  auto manual = ck;
  const auto items = labeled(2, 5);
  const auto fx = model::RandomEffects::training(8);
  ft_update(ck, items, cfg, 0.05, fx);
  const auto lg = model::hybrid_loss_grad(selftrain::examples(items), cfg, manual, fx);
  auto v = manual.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 0.05 * lg.grad[i];
  CHECK(max_abs_diff(ck.values(), manual.values()) < 1e-15);
}

TEST_CASE("reservoir: first M stored, M=0 stays empty") {
  ReplayMemory m(5, 1);
  const auto items = labeled(12, 1);
  for (std::size_t i = 0; i < 5; ++i) reservoir_insert(m, items[i]);
  REQUIRE(m.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(m.items()[i].id == i);
  for (std::size_t i = 5; i < 12; ++i) reservoir_insert(m, items[i]);
  CHECK(m.size() == 5);
  CHECK(m.seen() == 12);

  ReplayMemory z(0, 1);
  for (const auto& it : items) z.insert(it);
  CHECK(z.empty());
  CHECK(z.seen() == 12);
  CHECK(z.sample(3).empty());
}

TEST_CASE("reservoir inclusion frequencies are uniform") {
  constexpr std::size_t M = 10, N = 100, trials = 10000;
  std::vector<LabeledUtterance> items(N);
  for (std::size_t i = 0; i < N; ++i) items[i].id = i;
  std::vector<double> hits(N, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    ReplayMemory m(M, derive_seed(77, t));
    for (const auto& it : items) m.insert(it);
    for (const auto& it : m.items()) hits[it.id] += 1.0;
  }
  const double p = static_cast<double>(M) / N;
  const double sigma = std::sqrt(trials * p * (1 - p));
  double chi2 = 0.0;
  for (double h : hits) {
    CHECK(std::abs(h - trials * p) < 3.0 * sigma + 1e-9);
    chi2 += (h - trials * p) * (h - trials * p) / (trials * p);
  }
  // Inclusion indicators are slightly negatively correlated, so this χ² on
  // 99 d.o.f. is conservative; p > 0.01 needs χ² < 134.6.
  CHECK(chi2 < 134.6);
}

TEST_CASE("sampling is without replacement") {
  ReplayMemory m(20, 3);
  for (const auto& it : labeled(20, 4)) m.insert(it);
  for (int t = 0; t < 50; ++t) {
    const auto s = m.sample(7);
    std::set<std::uint64_t> ids;
    for (const auto& it : s) ids.insert(it.id);
    CHECK(ids.size() == 7);
  }
  CHECK(m.sample(50).size() == 20);
}

TEST_CASE("er with empty memory equals ft, and fills the memory") {
  const auto cfg = tiny_config();
  auto a = model::init_checkpoint(cfg, 5);
  auto b = a;
  const auto items = labeled(3, 9);
  const auto fx = model::RandomEffects::training(2);
  ReplayMemory mem(10, 1);
  er_update(a, items, mem, cfg, 0.05, fx);
  ft_update(b, items, cfg, 0.05, fx);
  CHECK(a == b);
  CHECK(mem.size() == 3);
}

TEST_CASE("replay gradient is the weighted sum of the subset gradients") {
  // Hybrid loss is a mean over utterances: ∇(union) = (n₁∇₁ + n₂∇₂)/(n₁+n₂).
  const auto cfg = tiny_config();
  const auto ck = model::init_checkpoint(cfg, 6);
  const auto cur = labeled(3, 11, 0), old = labeled(2, 12, 100);
  auto both = cur;
  both.insert(both.end(), old.begin(), old.end());
  const auto off = model::RandomEffects::disabled();
  const auto gu = model::hybrid_loss_grad(selftrain::examples(both), cfg, ck, off).grad;
  const auto g1 = model::hybrid_loss_grad(selftrain::examples(cur), cfg, ck, off).grad;
  const auto g2 = model::hybrid_loss_grad(selftrain::examples(old), cfg, ck, off).grad;
  std::vector<double> mix(gu.size());
  for (std::size_t i = 0; i < gu.size(); ++i) mix[i] = (3.0 * g1[i] + 2.0 * g2[i]) / 5.0;
  CHECK(max_abs_diff(gu, mix) < 1e-12);

  // And ER with this memory steps along exactly that union gradient.
  ReplayMemory mem(10, 1);
  for (const auto& it : old) mem.insert(it);
  auto stepped = ck;
  er_update(stepped, cur, mem, cfg, 0.1, off, 2);
  auto manual = ck;
  auto v = manual.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 0.1 * gu[i];
  CHECK(max_abs_diff(stepped.values(), manual.values()) < 1e-12);
}

TEST_CASE("aos eta examples and monotonicity") {
  CHECK(aos_eta(10, 90, 1) == doctest::Approx(0.1));
  CHECK(aos_eta(10, 90, 0) == 0.0);
  CHECK(aos_eta(50, 50, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(aos_eta(0, 0, 0) == 0.0);
  CHECK(aos_eta(5, 0, 1) == 1.0);
  CHECK_THROWS_AS(aos_eta(-1, 0, 1), std::invalid_argument);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double f = u(rng) + 1e-3, c = u(rng), t = u(rng) / 10.0;
    const double e = aos_eta(f, c, t);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
    CHECK(aos_eta(f, c, t + 0.5) >= e);
    CHECK(aos_eta(f + 1.0, c, t) >= e);
    CHECK(aos_eta(f, c + 1.0, t) <= e);
  }
}

TEST_CASE("aos merge is affine per group") {
  const auto cfg = tiny_config();
  const auto a = model::init_checkpoint(cfg, 1), b = model::init_checkpoint(cfg, 2);
  auto s = AveragerState::start(a, 1.0, 1.0);
  s.adapted = b;
  aos_merge(s, 0.3, 0.7, 10, 4);
  CHECK(s.frames == 10);
  CHECK(s.tokens == 4);
  CHECK(s.final_model.segments().size() == a.segments().size());
  for (const auto& seg : a.segments()) {
    const double eta = seg.group == ad::Group::decoder ? 0.7 : 0.3;
    const auto x = a.values(seg.name), y = b.values(seg.name), z = std::as_const(s.final_model).values(seg.name);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(z[i] - (x[i] + eta * (y[i] - x[i]))) <= 1e-12);
  }
  auto t = AveragerState::start(a, 1.0, 1.0);
  t.adapted = b;
  aos_merge(t, 0.0, 0.0, 1, 1);
  CHECK(t.final_model == a);
  aos_merge(t, 1.0, 1.0, 1, 1);
  CHECK(max_abs_diff(t.final_model.values(), b.values()) <= 1e-12);
  CHECK_THROWS_AS(aos_merge(t, 1.5, 0.0, 1, 1), std::invalid_argument);

  // θ = 0, θ̃ = v, η = 0.25 → 0.25·v.
  auto zero = AveragerState::start(model::zero_checkpoint(cfg), 1.0, 1.0);
  zero.adapted = b;
  aos_merge(zero, 0.25, 0.25, 1, 1);
  for (std::size_t i = 0; i < b.parameter_count(); ++i) CHECK(zero.final_model.values()[i] == 0.25 * b.values()[i]);

  auto other = tiny_config();
  other.decoder_hidden = 9;
  auto bad = AveragerState::start(a, 1, 1);
  bad.adapted = model::init_checkpoint(other, 1);
  CHECK_THROWS_AS(aos_merge(bad, 0.5, 0.5, 1, 1), std::invalid_argument);
}

TEST_CASE("equal batches with tau 1 give the running mean of adapted snapshots") {
  // η_i = F/(F·(i−1) + F) = 1/i, so θ_n is the plain mean of θ̃_1..θ̃_n.
  const auto cfg = tiny_config();
  auto s = AveragerState::start(model::init_checkpoint(cfg, 1), 1.0, 1.0);
  std::vector<double> sum(s.final_model.parameter_count(), 0.0);
  const int n = 20;
  for (int i = 0; i < n; ++i) {
    s.adapted = model::init_checkpoint(cfg, 100 + i);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += s.adapted.values()[k];
    aos_merge(s, aos_eta(30, s.frames, 1.0), aos_eta(6, s.tokens, 1.0), 30, 6);
  }
  for (auto& x : sum) x /= n;
  CHECK(max_abs_diff(s.final_model.values(), sum) < 1e-6);
}

TEST_CASE("K passes collapse to one pass without random effects") {
  const auto cfg = tiny_config();
  const auto ck = model::init_checkpoint(cfg, 4);
  const auto items = labeled(3, 4);
  std::vector<double> g1, g2;
  const auto off = model::RandomEffects::disabled();
  const double l1 = multipass_loss_grad(items, cfg, ck, off, 1, nullptr, {}, g1);
  const double l2 = multipass_loss_grad(items, cfg, ck, off, 2, nullptr, {}, g2);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-14));
  CHECK(max_abs_diff(g1, g2) < 1e-14);
  // With effects on, the two passes differ and the mean matches hand averaging.
  const auto fx = model::RandomEffects::training(9);
  const double lk = multipass_loss_grad(items, cfg, ck, fx, 2, nullptr, {}, g2);
  const auto ex = selftrain::examples(items);
  auto f0 = fx, f1 = fx;
  f0.seed = derive_seed(9, 0);
  f1.seed = derive_seed(9, 1);
  const double a = model::hybrid_loss(ex, cfg, ck, f0), b = model::hybrid_loss(ex, cfg, ck, f1);
  CHECK(a != b);
  CHECK(lk == doctest::Approx((a + b) / 2).epsilon(1e-12));
}

TEST_CASE("kd loss vanishes when teacher equals student and is positive otherwise") {
  const auto cfg = tiny_config();
  const auto a = model::init_checkpoint(cfg, 1), b = model::init_checkpoint(cfg, 2);
  const auto items = labeled(2, 3);
  auto kd_value = [&](const Checkpoint& student, const Checkpoint& teacher) {
    ad::Tape tape;
    ad::BoundParams p(tape, student, true);
    return kd_loss(tape, p, teacher, items, cfg, {1.0, 2.0}).value().item();
  };
  CHECK(std::abs(kd_value(a, a)) < 1e-12);
  CHECK(kd_value(a, b) > 1e-6);
}

TEST_CASE("aos-u degenerate settings equal unsupervised aos") {
  const auto cfg = tiny_config();
  const auto theta = model::init_checkpoint(cfg, 5);
  const auto batch = unlabeled(labeled(4, 6), false);
  selftrain::GeneratorConfig st;
  const auto fx = model::RandomEffects::training(3);
  auto s1 = AveragerState::start(theta, 1.0, 1.0), s2 = s1;
  // Let the adapted model drift first so that final ≠ adapted.
  s1.adapted = model::init_checkpoint(cfg, 6);
  s2.adapted = s1.adapted;
  aos_update(s1, batch, Mode::unsupervised, {}, st, cfg, 0.05, fx);
  AosuConfig acfg;
  acfg.passes = 1;
  acfg.source = PlSource::final_model;
  aosu_update(s2, batch, acfg, {}, st, cfg, 0.05, fx);
  CHECK(s1.final_model == s2.final_model);
  CHECK(s1.adapted == s2.adapted);
  CHECK(s1.frames == s2.frames);
  CHECK(s1.tokens == s2.tokens);
}

TEST_CASE("unsupervised aos labels with the final model") {
  // With final = adapted and no random effects, the PLs equal the adapted
  // model's greedy decode, so the step matches FT on those PLs.
  const auto cfg = tiny_config();
  const auto theta = model::init_checkpoint(cfg, 8);
  const auto batch = unlabeled(labeled(3, 7), false);
  selftrain::GeneratorConfig st;
  const auto off = model::RandomEffects::disabled();
  auto s = AveragerState::start(theta, 0.0, 0.0);
  aos_update(s, batch, Mode::unsupervised, {}, st, cfg, 0.05, off);
  auto ft = theta;
  const auto pl = selftrain::generate_pl_ctc(batch, cfg, theta);
  ft_update(ft, pl.items, cfg, 0.05, off);
  CHECK(s.adapted == ft);
  CHECK(s.final_model == theta);  // τ = 0: no plasticity
}

TEST_CASE("supervised aos with zero kd weight is a plain step then merge") {
  const auto cfg = tiny_config();
  const auto theta = model::init_checkpoint(cfg, 2);
  const auto items = labeled(3, 1);
  const auto batch = unlabeled(items, true);
  const auto fx = model::RandomEffects::training(5);
  auto s = AveragerState::start(theta, 1.0, 1.0);
  aos_update(s, batch, Mode::supervised, {0.0, 1.0}, {}, cfg, 0.05, fx);
  auto ft = theta;
  ft_update(ft, items, cfg, 0.05, fx);
  CHECK(max_abs_diff(s.adapted.values(), ft.values()) < 1e-15);
  // First batch: η = 1, so final jumps to adapted.
  CHECK(max_abs_diff(s.final_model.values(), ft.values()) < 1e-15);
  // Supervised AOS on unlabeled data is an error.
  CHECK_THROWS(aos_update(s, unlabeled(items, false), Mode::supervised, {}, {}, cfg, 0.05, fx));
}

TEST_CASE("one optimizer step per batch for every method") {
  const auto cfg = tiny_config();
  const auto theta = model::init_checkpoint(cfg, 1);
  struct Case {
    Method m;
    Mode mode;
  };
  for (auto c : {Case{Method::ft, Mode::supervised}, Case{Method::ft, Mode::unsupervised},
                 Case{Method::er, Mode::supervised}, Case{Method::er, Mode::unsupervised},
                 Case{Method::aos, Mode::supervised}, Case{Method::aos, Mode::unsupervised},
                 Case{Method::aosu, Mode::unsupervised}}) {
    LearnerConfig lc;
    lc.method = c.m;
    lc.mode = c.mode;
    lc.kd.weight = 0.5;
    lc.seed = 3;
    Learner L(cfg, lc, theta);
    for (std::size_t i = 0; i < 5; ++i) {
      stream::StreamBatch b{i, unlabeled(labeled(3, 40 + i, 10 * i), c.mode == Mode::supervised)};
      L.observe(b);
    }
    CHECK(L.steps() == 5);
    CHECK(L.batches() == 5);
    stream::StreamBatch late{7, {}};
    CHECK_THROWS_AS(L.observe(late), std::invalid_argument);
  }
}

TEST_CASE("sequential aos-u variant takes K steps") {
  const auto cfg = tiny_config();
  auto s = AveragerState::start(model::init_checkpoint(cfg, 1), 1.0, 1.0);
  AosuConfig acfg;
  acfg.sequential = true;
  acfg.passes = 3;
  const auto st = aosu_update(s, unlabeled(labeled(2, 1), false), acfg, {}, {}, cfg, 0.01,
                              model::RandomEffects::training(1));
  CHECK(st.steps == 3);
}

TEST_CASE("learner state round trip resumes identically") {
  const auto cfg = tiny_config();
  const auto theta = model::init_checkpoint(cfg, 1);
  for (auto m : {Method::er, Method::aosu}) {
    LearnerConfig lc;
    lc.method = m;
    lc.memory = 4;
    lc.seed = 11;
    auto batch = [](std::size_t i) { return stream::StreamBatch{i, unlabeled(labeled(3, 70 + i, 10 * i), false)}; };
    Learner full(cfg, lc, theta);
    for (std::size_t i = 0; i < 4; ++i) full.observe(batch(i));

    Learner first(cfg, lc, theta);
    for (std::size_t i = 0; i < 2; ++i) first.observe(batch(i));
    const auto path = std::filesystem::temp_directory_path() / "uocl_test_state.bin";
    first.save_state(path);
    Learner resumed(cfg, lc, theta);
    resumed.load_state(path);
    for (std::size_t i = 2; i < 4; ++i) resumed.observe(batch(i));
    CHECK(resumed.model() == full.model());
    CHECK(resumed.steps() == full.steps());
    CHECK(resumed.memory().seen() == full.memory().seen());

    LearnerConfig other = lc;
    other.method = Method::ft;
    Learner wrong(cfg, other, theta);
    CHECK_THROWS_AS(wrong.load_state(path), std::invalid_argument);
    std::filesystem::remove(path);
  }
}

TEST_CASE("method parsing") {
  CHECK(parse_method("AOS-U") == Method::aosu);
  CHECK(parse_mode("supervised") == Mode::supervised);
  CHECK(to_string(Method::er) == "er");
  CHECK_THROWS_AS(parse_method("ewc"), std::invalid_argument);
}
