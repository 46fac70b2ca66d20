#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "uocl/model.hpp"

using namespace uocl;
using ad::Array;
using ad::Shape;
using model::Example;
using model::ModelConfig;
using model::RandomEffects;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.feature_dim = 4;
  cfg.encoder_hidden = 6;
  cfg.decoder_hidden = 5;
  cfg.vocab = 7;
  cfg.max_label_len = 6;
  return cfg;
}

Array random_features(std::size_t frames, std::size_t dim, std::mt19937_64& rng) {
  return Array(Shape{frames, dim}, testing::random_vector(frames * dim, rng));
}

double row_mass(const Array& lp, std::size_t r) {
  double z = 0.0;
  for (std::size_t c = 0; c < lp.cols(); ++c) z += std::exp(lp.at(r, c));
  return z;
}

}  // namespace

TEST_CASE("config invariants") {
  ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.vocab = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.ctc_weight = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(ModelConfig{}.ctc_weight == 0.3);
  CHECK(ModelConfig{}.dropout == 0.1);
  CHECK(ModelConfig{}.vocab == 16);
}

TEST_CASE("checkpoint layout groups") {
  const ModelConfig cfg;
  const auto ck = model::init_checkpoint(cfg, 1);
  std::size_t total = 0;
  for (const auto& s : ck.segments()) {
    total += s.size;
    if (s.name.starts_with("enc.")) CHECK(s.group == ad::Group::encoder);
    if (s.name.starts_with("ctc.")) CHECK(s.group == ad::Group::ctc_head);
    if (s.name.starts_with("dec.")) CHECK(s.group == ad::Group::decoder);
  }
  CHECK(total == ck.parameter_count());
  CHECK(model::init_checkpoint(cfg, 1) == ck);
  CHECK_FALSE(model::init_checkpoint(cfg, 2) == ck);
}

TEST_CASE("zero-weight checkpoint yields uniform distributions") {
  const ModelConfig cfg;
  const auto ck = model::zero_checkpoint(cfg);
  std::mt19937_64 rng(1);
  const Array x = random_features(7, cfg.feature_dim, rng);
  const auto enc = model::encode(x, cfg, ck);
  const double u = -std::log(static_cast<double>(cfg.vocab));
  for (double v : enc.log_probs.values()) CHECK(v == doctest::Approx(u));
  const auto step = model::decode_step(Tokens{kBos, 4, 5}, enc.states, cfg, ck);
  for (double v : step) CHECK(v == doctest::Approx(u));
}

TEST_CASE("encoder output is normalized and deterministic without random effects") {
  const ModelConfig cfg;
  const auto ck = model::init_checkpoint(cfg, 3);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) {
    const Array x = random_features(5 + i, cfg.feature_dim, rng);
    const auto a = model::encode(x, cfg, ck);
    const auto b = model::encode(x, cfg, ck);
    CHECK(a.log_probs == b.log_probs);
    CHECK(a.states == b.states);
    CHECK(a.log_probs.rows() == x.rows());
    for (std::size_t t = 0; t < a.log_probs.rows(); ++t) CHECK(std::abs(row_mass(a.log_probs, t) - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(model::encode(Array(Shape{4, cfg.feature_dim + 1}), cfg, ck), ad::ShapeError);
}

TEST_CASE("random effects change the forward pass only when enabled") {
  const ModelConfig cfg;
  const auto ck = model::init_checkpoint(cfg, 3);
  std::mt19937_64 rng(2);
  const Array x = random_features(12, cfg.feature_dim, rng);
  const auto clean = model::encode(x, cfg, ck);
  const auto noisy = model::encode(x, cfg, ck, RandomEffects::training(5));
  CHECK_FALSE(clean.log_probs == noisy.log_probs);
  CHECK(model::encode(x, cfg, ck, RandomEffects::training(5)).log_probs == noisy.log_probs);
  RandomEffects off{77, false, false};
  CHECK(model::encode(x, cfg, ck, off).log_probs == clean.log_probs);
}

TEST_CASE("decoder scorer matches decode_step") {
  const ModelConfig cfg;
  const auto ck = model::init_checkpoint(cfg, 9);
  std::mt19937_64 rng(4);
  const Array x = random_features(9, cfg.feature_dim, rng);
  const auto enc = model::encode(x, cfg, ck);
  model::DecoderScorer scorer(enc.states, cfg, ck);
  const Tokens prefix{kBos, 3, 8, 8, 12};
  for (std::size_t n = 1; n <= prefix.size(); ++n) {
    std::span<const int> p(prefix.data(), n);
    const auto a = model::decode_step(p, enc.states, cfg, ck);
    const auto b = scorer.next_log_probs(p);
    double mass = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
      CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-10));
      mass += std::exp(a[c]);
    }
    CHECK(mass == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(model::decode_step(Tokens{4}, enc.states, cfg, ck), model::LabelError);
}

TEST_CASE("teacher-forced decoder loss equals the per-step cross-entropy sum") {
  ModelConfig cfg;
  cfg.ce_normalization = model::CeNormalization::per_utterance;
  const auto ck = model::init_checkpoint(cfg, 21);
  std::mt19937_64 rng(6);
  const Array x = random_features(10, cfg.feature_dim, rng);
  const Tokens label{5, 9, 9, 4};
  const Example ex{&x, label, label};
  const double ce = model::hybrid_loss(std::span(&ex, 1), cfg, ck, RandomEffects::disabled(), 0.0);

  const auto enc = model::encode(x, cfg, ck);
  Tokens prefix{kBos};
  double manual = 0.0;
  Tokens targets = label;
  targets.push_back(kEos);
  for (int y : targets) {
    manual -= model::decode_step(prefix, enc.states, cfg, ck)[y];
    prefix.push_back(y);
  }
  CHECK(ce == doctest::Approx(manual).epsilon(1e-12));

  cfg.ce_normalization = model::CeNormalization::per_token;
  const double per_token = model::hybrid_loss(std::span(&ex, 1), cfg, ck, RandomEffects::disabled(), 0.0);
  CHECK(per_token == doctest::Approx(manual / 5.0).epsilon(1e-12));
}

TEST_CASE("hybrid loss interpolates CTC and decoder terms") {
  const ModelConfig cfg;
  const auto ck = model::init_checkpoint(cfg, 4);
  std::mt19937_64 rng(8);
  const Array x1 = random_features(12, cfg.feature_dim, rng);
  const Array x2 = random_features(9, cfg.feature_dim, rng);
  const std::vector<Example> batch{{&x1, {3, 4, 5}, {3, 4, 5}}, {&x2, {7, 7}, {7, 7}}};

  const double ctc_only = model::hybrid_loss(batch, cfg, ck, RandomEffects::disabled(), 1.0);
  const double ce_only = model::hybrid_loss(batch, cfg, ck, RandomEffects::disabled(), 0.0);
  const double manual_ctc =
      0.5 * (ctc::ctc_loss(model::encode(x1, cfg, ck).log_probs, Tokens{3, 4, 5}) +
             ctc::ctc_loss(model::encode(x2, cfg, ck).log_probs, Tokens{7, 7}));
  CHECK(ctc_only == doctest::Approx(manual_ctc).epsilon(1e-12));
  const double mixed = model::hybrid_loss(batch, cfg, ck);
  CHECK(mixed == doctest::Approx(0.3 * ctc_only + 0.7 * ce_only).epsilon(1e-12));

  for (double c = 0.0; c <= 1.0; c += 0.125) {
    for (double d = 0.0; d <= 1.0; d += 0.25) {
      const double lc = model::hybrid_loss(batch, cfg, ck, RandomEffects::disabled(), c);
      const double ld = model::hybrid_loss(batch, cfg, ck, RandomEffects::disabled(), d);
      CHECK(std::abs(lc - ld) <= std::abs(c - d) * (std::abs(ctc_only) + std::abs(ce_only)) + 1e-12);
    }
  }
}

TEST_CASE("hybrid loss rejects reserved and out-of-vocabulary tokens") {
  const ModelConfig cfg;
  const auto ck = model::init_checkpoint(cfg, 4);
  std::mt19937_64 rng(8);
  const Array x = random_features(8, cfg.feature_dim, rng);
  for (const Tokens& bad : {Tokens{3, kBlank}, Tokens{kEos}, Tokens{kBos, 4}, Tokens{16}}) {
    const Example ex{&x, bad, bad};
    CHECK_THROWS_AS(model::hybrid_loss(std::span(&ex, 1), cfg, ck), model::LabelError);
  }
}

TEST_CASE("hybrid loss gradient matches finite differences on a two-utterance batch") {
  const ModelConfig cfg = small_config();
  auto ck = model::init_checkpoint(cfg, 12);
  std::mt19937_64 rng(13);
  const Array x1 = random_features(7, cfg.feature_dim, rng);
  const Array x2 = random_features(5, cfg.feature_dim, rng);
  const std::vector<Example> batch{{&x1, {3, 5, 5}, {3, 5, 5}}, {&x2, {6, 4}, {4}}};

  for (const auto& fx : {RandomEffects::disabled(), RandomEffects::training(99)}) {
    const auto lg = model::hybrid_loss_grad(batch, cfg, ck, fx);
    auto f = [&](std::span<const double> theta) {
      Checkpoint c = ck;
      std::copy(theta.begin(), theta.end(), c.values().begin());
      return model::hybrid_loss(batch, cfg, c, fx);
    };
    const std::vector<double> theta(ck.values().begin(), ck.values().end());
    const auto numeric = testing::numeric_grad(f, theta);
    CHECK(testing::relative_error(lg.grad, numeric) < 1e-4);
    // Every segment receives some gradient.
    for (const auto& seg : ck.segments()) {
      double norm = 0.0;
      for (std::size_t i = 0; i < seg.size; ++i) norm += std::abs(lg.grad[seg.offset + i]);
      CAPTURE(seg.name);
      CHECK(norm > 0.0);
    }
  }
}

TEST_CASE("augmentation") {
  ModelConfig cfg;
  std::mt19937_64 data(1);
  const Array x = random_features(20, cfg.feature_dim, data);

  SUBCASE("zero masks is the identity") {
    cfg.masks_per_utterance = 0;
    Rng rng(3);
    CHECK(model::augment(x, cfg, rng) == x);
  }
  SUBCASE("full-width time mask zeroes every frame") {
    cfg.max_time_mask = 100;
    cfg.max_feature_mask = 0;
    Rng rng(3);
    int full = 0;
    for (int i = 0; i < 500 && full == 0; ++i) {
      const Array y = model::augment(x, cfg, rng);
      bool all_zero = true;
      for (double v : y.values()) all_zero = all_zero && v == 0.0;
      full += all_zero;
    }
    CHECK(full == 1);  // width is clipped to F, so an all-zero draw occurs
  }
  SUBCASE("masked fraction matches its closed-form expectation") {
    cfg.max_time_mask = 4;
    cfg.max_feature_mask = 2;
    cfg.masks_per_utterance = 1;
    Array ones(Shape{20, cfg.feature_dim}, 1.0);
    // Independent uniform widths: E[frac] = 1 - (1 - E[wt]/F)(1 - E[wf]/D).
    const double et = 2.0 / 20.0, ef = 1.0 / static_cast<double>(cfg.feature_dim);
    const double expected = 1.0 - (1.0 - et) * (1.0 - ef);
    Rng rng(11);
    const int trials = 10000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < trials; ++i) {
      const Array y = model::augment(ones, cfg, rng);
      double zeros = 0.0;
      for (double v : y.values()) zeros += v == 0.0;
      const double frac = zeros / static_cast<double>(y.size());
      sum += frac;
      sumsq += frac * frac;
    }
    const double mean = sum / trials;
    const double sd = std::sqrt(sumsq / trials - mean * mean);
    CHECK(std::abs(mean - expected) < 3.0 * sd / std::sqrt(static_cast<double>(trials)));
  }
}

TEST_CASE("hybrid decode degenerates to CTC-only ranking with ctc weight 1") {
  const ModelConfig cfg;
  const auto ck = model::init_checkpoint(cfg, 5);
  const auto zero_dec = [&] {
    Checkpoint c = ck;
    for (const auto& s : c.segments())
      if (s.group == ad::Group::decoder)
        for (auto& v : c.values(s.name)) v = 0.0;
    return c;
  }();
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    const Array x = random_features(8, cfg.feature_dim, rng);
    const auto enc = model::encode(x, cfg, zero_dec);
    const auto h = model::hybrid_decode(enc.states, enc.log_probs, {4, 1.0, 8}, cfg, zero_dec);
    const auto ctc_only = ctc::prefix_beam_search(enc.log_probs, nullptr, 1.0, 0.0, 4, 8);
    CHECK(h.tokens == ctc_only.tokens);
  }
}
