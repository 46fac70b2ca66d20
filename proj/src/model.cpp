#include "uocl/model.hpp"

#include <algorithm>
#include <cmath>

namespace uocl::model {

using ad::Array;
using ad::Group;
using ad::Shape;
using ad::Var;

void ModelConfig::validate() const {
  if (vocab < 4) throw std::invalid_argument("vocab must hold blank, BOS, EOS and at least one symbol");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw std::invalid_argument("ctc_weight must lie in [0, 1]");
  if (feature_dim == 0 || encoder_hidden == 0 || decoder_hidden == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (conv_width % 2 == 0) throw std::invalid_argument("conv_width must be odd");
  if (max_label_len == 0) throw std::invalid_argument("max_label_len must be positive");
}

namespace {

std::string block_name(std::size_t i, const char* leaf) {
  return "enc.block" + std::to_string(i) + "." + leaf;
}

Checkpoint layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t D = cfg.feature_dim, H = cfg.encoder_hidden, Hd = cfg.decoder_hidden, C = cfg.vocab;
  Checkpoint ck;
  ck.add_segment("enc.in.w", Group::encoder, {D, H});
  ck.add_segment("enc.in.b", Group::encoder, {H});
  for (std::size_t i = 0; i < cfg.encoder_blocks; ++i) {
    ck.add_segment(block_name(i, "conv"), Group::encoder, {cfg.conv_width, H});
    ck.add_segment(block_name(i, "w"), Group::encoder, {H, H});
    ck.add_segment(block_name(i, "b"), Group::encoder, {H});
  }
  ck.add_segment("enc.att.q", Group::encoder, {H, H});
  ck.add_segment("enc.att.k", Group::encoder, {H, H});
  ck.add_segment("enc.att.v", Group::encoder, {H, H});
  ck.add_segment("ctc.w", Group::ctc_head, {H, C});
  ck.add_segment("ctc.b", Group::ctc_head, {C});
  ck.add_segment("dec.emb", Group::decoder, {C, Hd});
  ck.add_segment("dec.pos", Group::decoder, {cfg.max_label_len + 1, Hd});
  ck.add_segment("dec.q", Group::decoder, {Hd, Hd});
  ck.add_segment("dec.k", Group::decoder, {H, Hd});
  ck.add_segment("dec.v", Group::decoder, {H, Hd});
  ck.add_segment("dec.h.w", Group::decoder, {2 * Hd, Hd});
  ck.add_segment("dec.h.b", Group::decoder, {Hd});
  ck.add_segment("dec.out.w", Group::decoder, {Hd, C});
  ck.add_segment("dec.out.b", Group::decoder, {C});
  return ck;
}

// Sinusoidal frame positions, F × H.
Array positions(std::size_t frames, std::size_t width) {
  Array pe(Shape{frames, width});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(100.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe.at(t, i) = 0.5 * ((i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate));
    }
  }
  return pe;
}

Var dropout(Var x, double p, const RandomEffects& fx, Rng& rng) {
  if (!fx.dropout || p <= 0.0) return x;
  Array m(x.shape());
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  for (auto& v : m.values()) v = keep(rng) ? s : 0.0;
  return ad::mask(x, m);
}

}  // namespace

Checkpoint init_checkpoint(const ModelConfig& cfg, std::uint64_t seed) {
  Checkpoint ck = layout(cfg);
  Rng rng(seed);
  for (const auto& seg : ck.segments()) {
    auto v = ck.values(seg.name);
    if (seg.shape.size() == 1) continue;  // biases start at zero
    double bound;
    if (seg.name.ends_with(".conv")) {
      bound = std::sqrt(3.0 / static_cast<double>(seg.shape[0]));
    } else if (seg.name == "dec.emb" || seg.name == "dec.pos") {
      bound = 0.5;
    } else {
      bound = std::sqrt(6.0 / static_cast<double>(seg.shape[0] + seg.shape[1]));
    }
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& x : v) x = u(rng);
  }
  return ck;
}

Checkpoint zero_checkpoint(const ModelConfig& cfg) { return layout(cfg); }

Array augment(const Array& features, const ModelConfig& cfg, Rng& rng) {
  Array out = features;
  const std::size_t F = features.rows(), D = features.cols();
  for (std::size_t m = 0; m < cfg.masks_per_utterance; ++m) {
    std::uniform_int_distribution<std::size_t> tw(0, cfg.max_time_mask);
    const std::size_t w = std::min(tw(rng), F);
    std::uniform_int_distribution<std::size_t> ts(0, F - w);
    const std::size_t t0 = ts(rng);
    for (std::size_t t = t0; t < t0 + w; ++t)
      for (std::size_t d = 0; d < D; ++d) out.at(t, d) = 0.0;

    std::uniform_int_distribution<std::size_t> fw(0, cfg.max_feature_mask);
    const std::size_t v = std::min(fw(rng), D);
    std::uniform_int_distribution<std::size_t> fs(0, D - v);
    const std::size_t d0 = fs(rng);
    for (std::size_t t = 0; t < F; ++t)
      for (std::size_t d = d0; d < d0 + v; ++d) out.at(t, d) = 0.0;
  }
  return out;
}

EncoderOutput encode(ad::Tape& tape, const ad::BoundParams& p, const Array& features, const ModelConfig& cfg,
                     const RandomEffects& fx, Rng& rng) {
  if (features.rank() != 2 || features.cols() != cfg.feature_dim) {
    throw ad::ShapeError("encode", features.shape(), Shape{0, cfg.feature_dim});
  }
  const std::size_t F = features.rows();
  Var x = tape.constant(fx.augment ? augment(features, cfg, rng) : features);
  Var h = ad::add_bias(ad::matmul(x, p["enc.in.w"]), p["enc.in.b"]);
  h = ad::add(h, tape.constant(positions(F, cfg.encoder_hidden)));
  h = dropout(h, cfg.dropout, fx, rng);
  for (std::size_t i = 0; i < cfg.encoder_blocks; ++i) {
    Var c = ad::depthwise_conv1d(h, p[block_name(i, "conv")]);
    Var m = ad::tanh(ad::add_bias(ad::matmul(c, p[block_name(i, "w")]), p[block_name(i, "b")]));
    h = ad::add(h, dropout(m, cfg.dropout, fx, rng));
  }
  Var a = ad::attention(ad::matmul(h, p["enc.att.q"]), ad::matmul(h, p["enc.att.k"]), ad::matmul(h, p["enc.att.v"]));
  h = ad::add(h, a);
  Var logits = ad::add_bias(ad::matmul(h, p["ctc.w"]), p["ctc.b"]);
  return {h, ad::log_softmax(logits)};
}

Var decoder_log_probs(ad::Tape& /*tape*/, const ad::BoundParams& p, Var states, std::span<const int> inputs,
                      const ModelConfig& cfg, const RandomEffects& fx, Rng& rng) {
  if (states.value().rank() != 2 || states.value().rows() == 0) {
    throw ad::ShapeError("decoder: empty encoder states");
  }
  if (inputs.empty() || inputs.front() != kBos) throw LabelError("decoder prefix must begin with BOS");
  if (inputs.size() > cfg.max_label_len + 1) {
    throw LabelError("decoder prefix of length " + std::to_string(inputs.size()) + " exceeds max_label_len + 1");
  }
  std::vector<int> pos(inputs.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  Var q_in = ad::add(ad::embedding(p["dec.emb"], inputs), ad::embedding(p["dec.pos"], pos));
  Var ctx = ad::attention(ad::matmul(q_in, p["dec.q"]), ad::matmul(states, p["dec.k"]),
                          ad::matmul(states, p["dec.v"]));
  Var hid = ad::tanh(ad::add_bias(ad::matmul(ad::concat_cols(q_in, ctx), p["dec.h.w"]), p["dec.h.b"]));
  hid = dropout(hid, cfg.dropout, fx, rng);
  return ad::log_softmax(ad::add_bias(ad::matmul(hid, p["dec.out.w"]), p["dec.out.b"]));
}

Encoded encode(const Array& features, const ModelConfig& cfg, const Checkpoint& ckpt, const RandomEffects& fx) {
  ad::Tape tape;
  ad::BoundParams p(tape, ckpt, false);
  Rng rng(fx.seed);
  auto out = encode(tape, p, features, cfg, fx, rng);
  return {out.states.value(), out.log_probs.value()};
}

std::vector<double> decode_step(std::span<const int> prefix, const Array& states, const ModelConfig& cfg,
                                const Checkpoint& ckpt, const RandomEffects& fx) {
  ad::Tape tape;
  ad::BoundParams p(tape, ckpt, false);
  Rng rng(fx.seed);
  Var lp = decoder_log_probs(tape, p, tape.constant(states), prefix, cfg, fx, rng);
  const auto& v = lp.value();
  const std::size_t last = v.rows() - 1;
  return std::vector<double>(v.values().begin() + last * v.cols(), v.values().begin() + (last + 1) * v.cols());
}

// ---- DecoderScorer ------------------------------------------------------------

DecoderScorer::DecoderScorer(const Array& states, const ModelConfig& cfg, const Checkpoint& ckpt)
    : cfg_(&cfg), ckpt_(&ckpt), frames_(states.rows()) {
  if (states.rank() != 2 || frames_ == 0) throw ad::ShapeError("decoder: empty encoder states");
  const std::size_t H = states.cols(), Hd = cfg.decoder_hidden;
  auto project = [&](std::string_view name, std::vector<double>& out) {
    auto w = ckpt.values(name);
    out.assign(frames_ * Hd, 0.0);
    for (std::size_t t = 0; t < frames_; ++t)
      for (std::size_t i = 0; i < H; ++i) {
        const double s = states.at(t, i);
        for (std::size_t j = 0; j < Hd; ++j) out[t * Hd + j] += s * w[i * Hd + j];
      }
  };
  project("dec.k", keys_);
  project("dec.v", values_);
}

std::vector<double> DecoderScorer::next_log_probs(std::span<const int> prefix) {
  const auto& cfg = *cfg_;
  const auto& ck = *ckpt_;
  const std::size_t Hd = cfg.decoder_hidden, C = cfg.vocab;
  if (prefix.empty() || prefix.front() != kBos) throw LabelError("decoder prefix must begin with BOS");
  const std::size_t pos = prefix.size() - 1;
  if (pos > cfg.max_label_len) throw LabelError("decoder prefix exceeds max_label_len + 1");
  const int tok = prefix.back();

  auto emb = ck.values("dec.emb");
  auto pe = ck.values("dec.pos");
  std::vector<double> q_in(Hd);
  for (std::size_t j = 0; j < Hd; ++j) q_in[j] = emb[tok * Hd + j] + pe[pos * Hd + j];

  auto wq = ck.values("dec.q");
  std::vector<double> q(Hd, 0.0);
  for (std::size_t i = 0; i < Hd; ++i)
    for (std::size_t j = 0; j < Hd; ++j) q[j] += q_in[i] * wq[i * Hd + j];

  std::vector<double> score(frames_);
  const double inv = 1.0 / std::sqrt(static_cast<double>(Hd));
  for (std::size_t t = 0; t < frames_; ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < Hd; ++j) s += q[j] * keys_[t * Hd + j];
    score[t] = s * inv;
  }
  const double mx = *std::max_element(score.begin(), score.end());
  double z = 0.0;
  for (auto& s : score) z += (s = std::exp(s - mx));
  std::vector<double> ctx(Hd, 0.0);
  for (std::size_t t = 0; t < frames_; ++t)
    for (std::size_t j = 0; j < Hd; ++j) ctx[j] += score[t] / z * values_[t * Hd + j];

  auto wh = ck.values("dec.h.w");
  auto bh = ck.values("dec.h.b");
  std::vector<double> hid(bh.begin(), bh.end());
  for (std::size_t i = 0; i < Hd; ++i)
    for (std::size_t j = 0; j < Hd; ++j) hid[j] += q_in[i] * wh[i * Hd + j] + ctx[i] * wh[(Hd + i) * Hd + j];
  for (auto& h : hid) h = std::tanh(h);

  auto wo = ck.values("dec.out.w");
  auto bo = ck.values("dec.out.b");
  std::vector<double> logits(bo.begin(), bo.end());
  for (std::size_t i = 0; i < Hd; ++i)
    for (std::size_t c = 0; c < C; ++c) logits[c] += hid[i] * wo[i * C + c];
  const double lm = *std::max_element(logits.begin(), logits.end());
  double lz = 0.0;
  for (double l : logits) lz += std::exp(l - lm);
  const double lse = lm + std::log(lz);
  for (auto& l : logits) l -= lse;
  return logits;
}

// ---- losses -----------------------------------------------------------------------

void validate_label(std::span<const int> label, const ModelConfig& cfg) {
  for (int k : label) {
    if (k < kFirstSymbol || k >= static_cast<int>(cfg.vocab)) {
      throw LabelError("label token " + std::to_string(k) + " is reserved (blank/BOS/EOS) or out of vocabulary");
    }
  }
  if (label.size() > cfg.max_label_len) {
    throw LabelError("label length " + std::to_string(label.size()) + " exceeds max_label_len");
  }
}

LossParts hybrid_loss(ad::Tape& tape, const ad::BoundParams& p, std::span<const Example> batch,
                      const ModelConfig& cfg, const RandomEffects& fx, std::optional<double> ctc_weight) {
  if (batch.empty()) throw std::invalid_argument("hybrid_loss: empty batch");
  const double c = ctc_weight.value_or(cfg.ctc_weight);
  if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("ctc weight must lie in [0, 1]");
  LossParts parts;
  Var total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    validate_label(ex.ctc_target, cfg);
    validate_label(ex.decoder_target, cfg);
    Rng rng(derive_seed(fx.seed, i));
    auto enc = encode(tape, p, *ex.features, cfg, fx, rng);
    Var utt;
    // A pseudo-label can be longer than CTC admits for the utterance; its CTC
    // term is then dropped (zero-infinity convention) and the decoder term kept.
    const bool ctc_feasible = ctc::min_frames(ex.ctc_target) <= ex.features->rows();
    if (c > 0.0 && ctc_feasible) {
      Var l = ctc::ctc_loss(enc.log_probs, ex.ctc_target);
      parts.ctc += l.value().item();
      utt = c == 1.0 ? l : ad::scale(l, c);
    }
    if (c < 1.0) {
      Tokens in{kBos};
      in.insert(in.end(), ex.decoder_target.begin(), ex.decoder_target.end());
      Tokens out(ex.decoder_target.begin(), ex.decoder_target.end());
      out.push_back(kEos);
      Var lp = decoder_log_probs(tape, p, enc.states, in, cfg, fx, rng);
      const double norm = cfg.ce_normalization == CeNormalization::per_token ? static_cast<double>(out.size()) : 1.0;
      Var ce = ad::scale(ad::pick_sum(lp, out), -1.0 / norm);
      parts.decoder += ce.value().item();
      Var w = c == 0.0 ? ce : ad::scale(ce, 1.0 - c);
      utt = utt.valid() ? ad::add(utt, w) : w;
    }
    if (!utt.valid()) utt = ad::scale(ad::sum(enc.log_probs), 0.0);
    total = total.valid() ? ad::add(total, utt) : utt;
  }
  const double n = static_cast<double>(batch.size());
  parts.total = ad::scale(total, 1.0 / n);
  parts.ctc /= n;
  parts.decoder /= n;
  return parts;
}

double hybrid_loss(std::span<const Example> batch, const ModelConfig& cfg, const Checkpoint& ckpt,
                   const RandomEffects& fx, std::optional<double> ctc_weight) {
  ad::Tape tape;
  ad::BoundParams p(tape, ckpt, false);
  return hybrid_loss(tape, p, batch, cfg, fx, ctc_weight).total.value().item();
}

LossAndGrad hybrid_loss_grad(std::span<const Example> batch, const ModelConfig& cfg, const Checkpoint& ckpt,
                             const RandomEffects& fx) {
  ad::Tape tape;
  ad::BoundParams p(tape, ckpt, true);
  auto parts = hybrid_loss(tape, p, batch, cfg, fx);
  tape.backward(parts.total);
  LossAndGrad out;
  out.loss = parts.total.value().item();
  out.grad.assign(ckpt.parameter_count(), 0.0);
  p.accumulate_grads(out.grad);
  return out;
}

ctc::Hypothesis hybrid_decode(const Array& states, const Array& log_probs, const ctc::DecodeConfig& dcfg,
                              const ModelConfig& cfg, const Checkpoint& ckpt) {
  DecoderScorer scorer(states, cfg, ckpt);
  const int max_len = std::min<int>(dcfg.max_len, static_cast<int>(cfg.max_label_len));
  return ctc::monotone_beam_search(log_probs, &scorer, dcfg.ctc_weight, 1.0 - dcfg.ctc_weight, dcfg.beam, max_len);
}

ctc::Hypothesis recognize(const Array& features, const ctc::DecodeConfig& dcfg, const ModelConfig& cfg,
                          const Checkpoint& ckpt) {
  auto enc = encode(features, cfg, ckpt);
  return hybrid_decode(enc.states, enc.log_probs, dcfg, cfg, ckpt);
}

}  // namespace uocl::model
