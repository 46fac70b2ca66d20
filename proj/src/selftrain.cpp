#include "uocl/selftrain.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace uocl::selftrain {

Method parse_method(const std::string& s) {
  if (s == "ctc") return Method::ctc;
  if (s == "hybrid") return Method::hybrid;
  if (s == "split") return Method::split;
  if (s == "lmfusion") return Method::lmfusion;
  throw std::invalid_argument("unknown self-training method '" + s + "' (ctc|hybrid|split|lmfusion)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::ctc: return "ctc";
    case Method::hybrid: return "hybrid";
    case Method::split: return "split";
    case Method::lmfusion: return "lmfusion";
  }
  return "?";
}

NgramLM::NgramLM(std::size_t order, std::size_t vocab, double smoothing)
    : order_(order), vocab_(vocab), smoothing_(smoothing) {
  if (order < 1) throw std::invalid_argument("n-gram order must be >= 1");
  if (vocab <= static_cast<std::size_t>(kFirstSymbol)) throw std::invalid_argument("n-gram vocab has no symbols");
  if (!(smoothing > 0.0)) throw std::invalid_argument("n-gram smoothing must be > 0");
}

void NgramLM::add_sentence(std::span<const int> tokens) {
  std::vector<int> seq(order_ - 1, kBos);
  seq.insert(seq.end(), tokens.begin(), tokens.end());
  seq.push_back(kEos);
  for (std::size_t i = order_ - 1; i < seq.size(); ++i) {
    const int next = seq[i];
    if (next != kEos && (next < kFirstSymbol || next >= static_cast<int>(vocab_))) {
      throw std::invalid_argument("n-gram: token " + std::to_string(next) + " outside the symbol range");
    }
    std::vector<int> key(seq.begin() + static_cast<std::ptrdiff_t>(i + 1 - order_), seq.begin() + static_cast<std::ptrdiff_t>(i + 1));
    ++counts_[key];
    key.pop_back();
    ++context_[key];
  }
}

std::vector<double> NgramLM::distribution(std::span<const int> context) const {
  std::vector<int> key(context.begin(), context.end());
  const auto ctx_it = context_.find(key);
  const double total = ctx_it == context_.end() ? 0.0 : static_cast<double>(ctx_it->second);
  const double outcomes = static_cast<double>(vocab_ - kFirstSymbol + 1);
  std::vector<double> lp(vocab_, ctc::kLogZero);
  auto prob = [&](int next) {
    key.push_back(next);
    const auto it = counts_.find(key);
    key.pop_back();
    const double c = it == counts_.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((c + smoothing_) / (total + smoothing_ * outcomes));
  };
  lp[kEos] = prob(kEos);
  for (int s = kFirstSymbol; s < static_cast<int>(vocab_); ++s) lp[s] = prob(s);
  return lp;
}

std::vector<double> NgramLM::next_log_probs(std::span<const int> prefix) {
  // `prefix` starts with kBos; pad further on the left for short prefixes.
  std::vector<int> ctx(order_ - 1, kBos);
  const std::size_t skip = !prefix.empty() && prefix.front() == kBos ? 1 : 0;
  for (std::size_t i = skip; i < prefix.size(); ++i) ctx.push_back(prefix[i]);
  return distribution(std::span(ctx).last(order_ - 1));
}

double NgramLM::sentence_log_prob(std::span<const int> tokens) const {
  std::vector<int> seq(order_ - 1, kBos);
  seq.insert(seq.end(), tokens.begin(), tokens.end());
  seq.push_back(kEos);
  double total = 0.0;
  for (std::size_t i = order_ - 1; i < seq.size(); ++i) {
    total += distribution(std::span(seq).subspan(i + 1 - order_, order_ - 1))[seq[i]];
  }
  return total;
}

void NgramLM::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "uocl-ngram 1\norder " << order_ << "\nvocab " << vocab_ << "\nsmoothing ";
  out.precision(17);
  out << smoothing_ << "\n";
  for (const auto& [key, c] : counts_) {
    out << c;
    for (int k : key) out << ' ' << k;
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

NgramLM NgramLM::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic, key;
  int version = 0;
  std::size_t order = 0, vocab = 0;
  double smoothing = 0.0;
  in >> magic >> version;
  if (magic != "uocl-ngram" || version != 1) throw FormatError(path.string() + ": not a version-1 n-gram counts file");
  if (!(in >> key >> order) || key != "order" || !(in >> key >> vocab) || key != "vocab" ||
      !(in >> key >> smoothing) || key != "smoothing") {
    throw FormatError(path.string() + ": bad n-gram header");
  }
  NgramLM lm(order, vocab, smoothing);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::uint64_t c = 0;
    std::vector<int> ngram;
    int k;
    if (!(ls >> c)) throw FormatError(path.string() + ": bad count line '" + line + "'");
    while (ls >> k) ngram.push_back(k);
    if (ngram.size() != order) throw FormatError(path.string() + ": n-gram of wrong order in '" + line + "'");
    lm.counts_[ngram] += c;
    ngram.pop_back();
    lm.context_[ngram] += c;
  }
  return lm;
}

namespace {

PseudoLabeledBatch make_batch(std::string tag, std::span<const stream::StreamUtterance> batch) {
  PseudoLabeledBatch pl;
  pl.generator = std::move(tag);
  pl.items.reserve(batch.size());
  return pl;
}

void push(PseudoLabeledBatch& pl, const stream::StreamUtterance& u, Tokens ctc_pl, Tokens dec_pl, bool truncated) {
  pl.length_ratio.push_back(static_cast<double>(dec_pl.size()) / static_cast<double>(u.features.rows()));
  pl.truncated.push_back(truncated);
  pl.items.push_back({u.id, u.features, std::move(ctc_pl), std::move(dec_pl)});
}

// The CTC head spans the whole vocabulary, so an argmax can land on kBos or
// kEos; those are not symbols and are dropped like blanks.
Tokens greedy_symbols(const ad::Array& log_probs) {
  Tokens y = ctc::greedy_ctc_decode(log_probs);
  std::erase_if(y, [](int k) { return k < kFirstSymbol; });
  return y;
}

ctc::DecodeConfig clip(const ctc::DecodeConfig& d, const model::ModelConfig& cfg) {
  ctc::DecodeConfig out = d;
  out.max_len = std::min<int>(d.max_len, static_cast<int>(cfg.max_label_len));
  return out;
}

}  // namespace

PseudoLabeledBatch generate_pl_ctc(std::span<const stream::StreamUtterance> batch, const model::ModelConfig& cfg,
                                   const Checkpoint& ckpt) {
  auto pl = make_batch("ctc", batch);
  for (const auto& u : batch) {
    const auto enc = model::encode(u.features, cfg, ckpt);
    Tokens y = greedy_symbols(enc.log_probs);
    const bool cut = y.size() > cfg.max_label_len;
    if (cut) y.resize(cfg.max_label_len);
    push(pl, u, y, y, cut);
  }
  return pl;
}

PseudoLabeledBatch generate_pl_hybrid(std::span<const stream::StreamUtterance> batch,
                                      const model::ModelConfig& cfg, const Checkpoint& ckpt,
                                      const ctc::DecodeConfig& dcfg) {
  auto pl = make_batch("hybrid", batch);
  for (const auto& u : batch) {
    const auto enc = model::encode(u.features, cfg, ckpt);
    auto h = model::hybrid_decode(enc.states, enc.log_probs, dcfg, cfg, ckpt);
    push(pl, u, h.tokens, h.tokens, h.truncated);
  }
  return pl;
}

PseudoLabeledBatch generate_pl_split(std::span<const stream::StreamUtterance> batch,
                                     const model::ModelConfig& cfg, const Checkpoint& ckpt,
                                     const ctc::DecodeConfig& dcfg) {
  auto pl = make_batch("split", batch);
  for (const auto& u : batch) {
    const auto enc = model::encode(u.features, cfg, ckpt);
    Tokens g = greedy_symbols(enc.log_probs);
    if (g.size() > cfg.max_label_len) g.resize(cfg.max_label_len);
    auto h = model::hybrid_decode(enc.states, enc.log_probs, dcfg, cfg, ckpt);
    push(pl, u, std::move(g), h.tokens, h.truncated);
  }
  return pl;
}

PseudoLabeledBatch generate_pl_lmfusion(std::span<const stream::StreamUtterance> batch,
                                        const model::ModelConfig& cfg, const Checkpoint& ckpt, NgramLM& lm,
                                        const ctc::DecodeConfig& dcfg, double lambda) {
  if (lm.vocab() != cfg.vocab) throw std::invalid_argument("n-gram vocab does not match the model");
  auto pl = make_batch("lmfusion", batch);
  const auto d = clip(dcfg, cfg);
  for (const auto& u : batch) {
    const auto enc = model::encode(u.features, cfg, ckpt);
    auto h = ctc::monotone_beam_search(enc.log_probs, &lm, 1.0, lambda, d.beam, d.max_len);
    push(pl, u, h.tokens, h.tokens, h.truncated);
  }
  return pl;
}

PseudoLabeledBatch generate(std::span<const stream::StreamUtterance> batch, const model::ModelConfig& cfg,
                            const Checkpoint& ckpt, const GeneratorConfig& g) {
  PseudoLabeledBatch pl;
  switch (g.method) {
    case Method::ctc: pl = generate_pl_ctc(batch, cfg, ckpt); break;
    case Method::hybrid: pl = generate_pl_hybrid(batch, cfg, ckpt, g.decode); break;
    case Method::split: pl = generate_pl_split(batch, cfg, ckpt, g.decode); break;
    case Method::lmfusion:
      if (!g.lm) throw std::invalid_argument("lmfusion pseudo-labels need an n-gram LM");
      pl = generate_pl_lmfusion(batch, cfg, ckpt, *g.lm, g.decode, g.lm_weight);
      break;
  }
  apply_filter(pl, g.filter);
  return pl;
}

void apply_filter(PseudoLabeledBatch& pl, const PlFilter& f) {
  if (!f.enabled) return;
  PseudoLabeledBatch kept;
  kept.generator = pl.generator;
  for (std::size_t i = 0; i < pl.items.size(); ++i) {
    if (pl.length_ratio[i] < f.min_ratio || pl.length_ratio[i] > f.max_ratio) continue;
    kept.items.push_back(std::move(pl.items[i]));
    kept.length_ratio.push_back(pl.length_ratio[i]);
    kept.truncated.push_back(pl.truncated[i]);
  }
  pl = std::move(kept);
}

std::vector<LabeledUtterance> ground_truth(std::span<const stream::StreamUtterance> batch) {
  std::vector<LabeledUtterance> out;
  out.reserve(batch.size());
  for (const auto& u : batch) {
    if (!u.label) throw std::invalid_argument("supervised update on an unlabeled utterance");
    out.push_back({u.id, u.features, *u.label, *u.label});
  }
  return out;
}

std::vector<model::Example> examples(std::span<const LabeledUtterance> items) {
  std::vector<model::Example> ex;
  ex.reserve(items.size());
  for (const auto& it : items) ex.push_back({&it.features, it.ctc_target, it.decoder_target});
  return ex;
}

}  // namespace uocl::selftrain
