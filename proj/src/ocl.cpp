#include "uocl/ocl.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace uocl::ocl {

Method parse_method(const std::string& s) {
  if (s == "ft" || s == "FT") return Method::ft;
  if (s == "er" || s == "ER") return Method::er;
  if (s == "aos" || s == "AOS") return Method::aos;
  if (s == "aosu" || s == "AOS-U" || s == "aos-u") return Method::aosu;
  throw std::invalid_argument("unknown OCL method '" + s + "' (ft|er|aos|aosu)");
}

Mode parse_mode(const std::string& s) {
  if (s == "supervised") return Mode::supervised;
  if (s == "unsupervised") return Mode::unsupervised;
  throw std::invalid_argument("unknown mode '" + s + "' (supervised|unsupervised)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::ft: return "ft";
    case Method::er: return "er";
    case Method::aos: return "aos";
    case Method::aosu: return "aosu";
  }
  return "?";
}

std::string to_string(Mode m) { return m == Mode::supervised ? "supervised" : "unsupervised"; }

void apply_gradient(Checkpoint& ckpt, std::span<const double> grad, double lr) {
  if (grad.size() != ckpt.parameter_count()) throw std::invalid_argument("gradient size does not match checkpoint");
  ckpt.ensure_grad();
  std::copy(grad.begin(), grad.end(), ckpt.grad().begin());
  ad::sgd_step(ckpt, lr);
}

UpdateStats ft_update(Checkpoint& ckpt, std::span<const LabeledUtterance> items, const model::ModelConfig& cfg,
                      double lr, const model::RandomEffects& fx) {
  if (items.empty()) return {};
  const auto ex = selftrain::examples(items);
  const auto lg = model::hybrid_loss_grad(ex, cfg, ckpt, fx);
  apply_gradient(ckpt, lg.grad, lr);
  return {lg.loss, 1};
}

void ReplayMemory::insert(LabeledUtterance item) {
  ++seen_;
  if (capacity_ == 0) return;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(item));
    return;
  }
  std::uniform_int_distribution<std::uint64_t> d(0, seen_ - 1);
  const auto j = d(rng_);
  if (j < capacity_) items_[j] = std::move(item);
}

std::vector<LabeledUtterance> ReplayMemory::sample(std::size_t count) {
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t k = std::min(count, idx.size());
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, idx.size() - 1);
    std::swap(idx[i], idx[d(rng_)]);
  }
  std::vector<LabeledUtterance> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(items_[idx[i]]);
  return out;
}

namespace {

void write_tokens(bytes::Writer& w, const Tokens& t) {
  w.u32(static_cast<std::uint32_t>(t.size()));
  for (int k : t) w.i32(k);
}

Tokens read_tokens(bytes::Reader& r) {
  Tokens t(r.u32());
  for (auto& k : t) k = r.i32();
  return t;
}

void write_item(bytes::Writer& w, const LabeledUtterance& it) {
  w.u64(it.id);
  w.u32(static_cast<std::uint32_t>(it.features.rows()));
  w.u32(static_cast<std::uint32_t>(it.features.cols()));
  for (double v : it.features.values()) w.f64(v);
  write_tokens(w, it.ctc_target);
  write_tokens(w, it.decoder_target);
}

LabeledUtterance read_item(bytes::Reader& r) {
  LabeledUtterance it;
  it.id = r.u64();
  const std::size_t F = r.u32(), D = r.u32();
  if (F * D * 8 > r.remaining()) throw FormatError("corrupt replay item");
  std::vector<double> v(F * D);
  for (auto& x : v) x = r.f64();
  it.features = ad::Array(ad::Shape{F, D}, std::move(v));
  it.ctc_target = read_tokens(r);
  it.decoder_target = read_tokens(r);
  return it;
}

void write_rng(bytes::Writer& w, const Rng& rng) {
  std::ostringstream os;
  os << rng;
  w.str(os.str());
}

void read_rng(bytes::Reader& r, Rng& rng) {
  std::istringstream is(r.str());
  is >> rng;
  if (!is) throw FormatError("corrupt RNG state");
}

void write_ckpt(bytes::Writer& w, const Checkpoint& c) {
  const auto b = c.serialize();
  w.u64(b.size());
  w.raw(b.data(), b.size());
}

Checkpoint read_ckpt(bytes::Reader& r) {
  const auto n = r.u64();
  if (n > r.remaining()) throw FormatError("corrupt embedded checkpoint");
  std::vector<std::uint8_t> b(n);
  r.raw(b.data(), n);
  return Checkpoint::deserialize(b);
}

}  // namespace

void ReplayMemory::serialize(bytes::Writer& w) const {
  w.u64(capacity_);
  w.u64(seen_);
  write_rng(w, rng_);
  w.u32(static_cast<std::uint32_t>(items_.size()));
  for (const auto& it : items_) write_item(w, it);
}

ReplayMemory ReplayMemory::deserialize(bytes::Reader& r) {
  ReplayMemory m(r.u64(), 0);
  m.seen_ = r.u64();
  read_rng(r, m.rng_);
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) m.items_.push_back(read_item(r));
  return m;
}

UpdateStats er_update(Checkpoint& ckpt, std::span<const LabeledUtterance> items, ReplayMemory& mem,
                      const model::ModelConfig& cfg, double lr, const model::RandomEffects& fx, std::size_t replay) {
  std::vector<LabeledUtterance> batch(items.begin(), items.end());
  auto replayed = mem.sample(replay ? replay : items.size());
  batch.insert(batch.end(), std::make_move_iterator(replayed.begin()), std::make_move_iterator(replayed.end()));
  const auto stats = ft_update(ckpt, batch, cfg, lr, fx);
  for (const auto& it : items) mem.insert(it);
  return stats;
}

double aos_eta(double batch_units, double cumulative_units, double tau) {
  if (batch_units < 0.0 || cumulative_units < 0.0 || tau < 0.0) throw std::invalid_argument("aos_eta: negative input");
  const double num = tau * batch_units;
  const double den = cumulative_units + num;
  return den > 0.0 ? num / den : 0.0;
}

AveragerState AveragerState::start(const Checkpoint& theta0, double tau, double tau2) {
  AveragerState s;
  s.final_model = theta0;
  s.adapted = theta0;
  s.final_model.clear_grad();
  s.adapted.clear_grad();
  s.tau = tau;
  s.tau2 = tau2;
  return s;
}

void aos_merge(AveragerState& s, double eta_enc, double eta_dec, double batch_frames, double batch_tokens) {
  if (!s.final_model.compatible(s.adapted)) throw std::invalid_argument("aos_merge: final and adapted models differ in layout");
  if (!(eta_enc >= 0.0 && eta_enc <= 1.0 && eta_dec >= 0.0 && eta_dec <= 1.0)) {
    throw std::invalid_argument("aos_merge: eta must lie in [0, 1]");
  }
  for (const auto& seg : s.final_model.segments()) {
    const double eta = seg.group == ad::Group::decoder ? eta_dec : eta_enc;
    auto f = s.final_model.values(seg.name);
    const auto a = std::as_const(s.adapted).values(seg.name);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] += eta * (a[i] - f[i]);
  }
  s.frames += batch_frames;
  s.tokens += batch_tokens;
}

ad::Var kd_loss(ad::Tape& tape, const ad::BoundParams& student, const Checkpoint& teacher,
                std::span<const LabeledUtterance> items, const model::ModelConfig& cfg, const KdConfig& kd) {
  if (!(kd.temperature > 0.0)) throw std::invalid_argument("KD temperature must be > 0");
  const double inv_t = 1.0 / kd.temperature;
  ad::BoundParams tp(tape, teacher, false);
  const auto off = model::RandomEffects::disabled();
  Rng rng(0);
  // KL(p‖q) = Σ p log p − Σ p log q over rows, averaged over rows.
  auto kl = [&](ad::Var teacher_lp, ad::Var student_lp) {
    const ad::Array p_log = ad::log_softmax(ad::scale(teacher_lp, inv_t)).value();
    ad::Array p = p_log;
    double entropy_term = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::exp(p_log[i]);
      entropy_term += p[i] * p_log[i];
    }
    const double rows = static_cast<double>(p.rows());
    ad::Var cross = ad::sum(ad::mask(ad::log_softmax(ad::scale(student_lp, inv_t)), p));
    return ad::scale(ad::add(ad::scale(cross, -1.0), tape.constant(ad::Array::scalar(entropy_term))), 1.0 / rows);
  };
  ad::Var total;
  for (const auto& it : items) {
    auto te = model::encode(tape, tp, it.features, cfg, off, rng);
    auto se = model::encode(tape, student, it.features, cfg, off, rng);
    ad::Var term = kl(te.log_probs, se.log_probs);
    Tokens in{kBos};
    in.insert(in.end(), it.decoder_target.begin(), it.decoder_target.end());
    auto td = model::decoder_log_probs(tape, tp, te.states, in, cfg, off, rng);
    auto sd = model::decoder_log_probs(tape, student, se.states, in, cfg, off, rng);
    term = ad::add(term, kl(td, sd));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return ad::scale(total, kd.temperature * kd.temperature / static_cast<double>(items.size()));
}

double multipass_loss_grad(std::span<const LabeledUtterance> items, const model::ModelConfig& cfg,
                           const Checkpoint& ckpt, const model::RandomEffects& fx, std::size_t passes,
                           const Checkpoint* teacher, const KdConfig& kd, std::vector<double>& grad) {
  if (passes < 1) throw std::invalid_argument("number of passes must be >= 1");
  const auto ex = selftrain::examples(items);
  ad::Tape tape;
  ad::BoundParams p(tape, ckpt, true);
  ad::Var total;
  for (std::size_t k = 0; k < passes; ++k) {
    model::RandomEffects fk = fx;
    if (passes > 1) fk.seed = derive_seed(fx.seed, k);
    ad::Var l = model::hybrid_loss(tape, p, ex, cfg, fk).total;
    total = total.valid() ? ad::add(total, l) : l;
  }
  if (passes > 1) total = ad::scale(total, 1.0 / static_cast<double>(passes));
  if (teacher && kd.weight > 0.0) total = ad::add(total, ad::scale(kd_loss(tape, p, *teacher, items, cfg, kd), kd.weight));
  tape.backward(total);
  grad.assign(ckpt.parameter_count(), 0.0);
  p.accumulate_grads(grad);
  return total.value().item();
}

namespace {

double batch_frames(std::span<const stream::StreamUtterance> batch) {
  double f = 0.0;
  for (const auto& u : batch) f += static_cast<double>(u.features.rows());
  return f;
}

// Decoder output positions, EOS included.
double batch_tokens(std::span<const LabeledUtterance> items) {
  double t = 0.0;
  for (const auto& it : items) t += static_cast<double>(it.decoder_target.size() + 1);
  return t;
}

std::vector<LabeledUtterance> targets(std::span<const stream::StreamUtterance> batch, Mode mode,
                                      const Checkpoint& labeler, const selftrain::GeneratorConfig& st,
                                      const model::ModelConfig& cfg) {
  if (mode == Mode::supervised) return selftrain::ground_truth(batch);
  return selftrain::generate(batch, cfg, labeler, st).items;
}

void merge_after(AveragerState& s, std::span<const stream::StreamUtterance> batch,
                 std::span<const LabeledUtterance> items) {
  const double f = batch_frames(batch), t = batch_tokens(items);
  aos_merge(s, aos_eta(f, s.frames, s.tau), aos_eta(t, s.tokens, s.tau2), f, t);
}

}  // namespace

UpdateStats aos_update(AveragerState& s, std::span<const stream::StreamUtterance> batch, Mode mode,
                       const KdConfig& kd, const selftrain::GeneratorConfig& st, const model::ModelConfig& cfg,
                       double lr, const model::RandomEffects& fx) {
  const auto items = targets(batch, mode, s.final_model, st, cfg);
  UpdateStats stats;
  if (!items.empty()) {
    std::vector<double> grad;
    const Checkpoint* teacher = mode == Mode::supervised ? &s.final_model : nullptr;
    stats.loss = multipass_loss_grad(items, cfg, s.adapted, fx, 1, teacher, kd, grad);
    apply_gradient(s.adapted, grad, lr);
    stats.steps = 1;
  }
  merge_after(s, batch, items);
  return stats;
}

UpdateStats aosu_update(AveragerState& s, std::span<const stream::StreamUtterance> batch, const AosuConfig& acfg,
                        const KdConfig& kd, const selftrain::GeneratorConfig& st, const model::ModelConfig& cfg,
                        double lr, const model::RandomEffects& fx) {
  if (acfg.passes < 1) throw std::invalid_argument("AOS-U needs K >= 1");
  const Checkpoint& labeler = acfg.source == PlSource::adapted ? s.adapted : s.final_model;
  const auto items = targets(batch, Mode::unsupervised, labeler, st, cfg);
  UpdateStats stats;
  if (!items.empty()) {
    const Checkpoint teacher = s.final_model;
    const Checkpoint* t = acfg.kd ? &teacher : nullptr;
    std::vector<double> grad;
    if (acfg.sequential) {
      for (std::size_t k = 0; k < acfg.passes; ++k) {
        model::RandomEffects fk = fx;
        fk.seed = derive_seed(fx.seed, k);
        stats.loss = multipass_loss_grad(items, cfg, s.adapted, fk, 1, t, kd, grad);
        apply_gradient(s.adapted, grad, lr);
        ++stats.steps;
      }
    } else {
      stats.loss = multipass_loss_grad(items, cfg, s.adapted, fx, acfg.passes, t, kd, grad);
      apply_gradient(s.adapted, grad, lr);
      stats.steps = 1;
    }
  }
  merge_after(s, batch, items);
  return stats;
}

Learner::Learner(const model::ModelConfig& cfg, LearnerConfig lcfg, const Checkpoint& theta0)
    : cfg_(cfg), lcfg_(std::move(lcfg)), model_(theta0), memory_(lcfg_.memory, derive_seed(lcfg_.seed, 0x3e3)) {
  model_.clear_grad();
  if (lcfg_.method == Method::aos || lcfg_.method == Method::aosu) {
    avg_ = AveragerState::start(theta0, lcfg_.tau, lcfg_.tau2);
  }
}

const Checkpoint& Learner::model() const { return avg_ ? avg_->final_model : model_; }

const Checkpoint* Learner::adapted() const { return avg_ ? &avg_->adapted : nullptr; }

UpdateStats Learner::observe(const stream::StreamBatch& batch) {
  if (batch.index != batches_) {
    throw std::invalid_argument("learner expected batch " + std::to_string(batches_) + ", got " +
                                std::to_string(batch.index));
  }
  const auto fx = lcfg_.random_effects ? model::RandomEffects::training(derive_seed(lcfg_.seed, batch.index))
                                       : model::RandomEffects::disabled();
  UpdateStats stats;
  switch (lcfg_.method) {
    case Method::ft:
    case Method::er: {
      // Pseudo-labels come from the current model, before it sees the batch.
      const auto items = targets(batch.utterances, lcfg_.mode, model_, lcfg_.st, cfg_);
      stats = lcfg_.method == Method::ft ? ft_update(model_, items, cfg_, lcfg_.lr, fx)
                                         : er_update(model_, items, memory_, cfg_, lcfg_.lr, fx, lcfg_.replay);
      break;
    }
    case Method::aos:
      stats = aos_update(*avg_, batch.utterances, lcfg_.mode, lcfg_.kd, lcfg_.st, cfg_, lcfg_.lr, fx);
      break;
    case Method::aosu:
      if (lcfg_.mode != Mode::unsupervised) throw std::invalid_argument("AOS-U runs on unsupervised streams only");
      stats = aosu_update(*avg_, batch.utterances, lcfg_.aosu, lcfg_.kd, lcfg_.st, cfg_, lcfg_.lr, fx);
      break;
  }
  steps_ += stats.steps;
  ++batches_;
  return stats;
}

namespace {
constexpr char kStateMagic[8] = {'U', 'O', 'C', 'L', 'S', 'T', 'A', 'T'};
constexpr std::uint32_t kStateVersion = 1;
}  // namespace

void Learner::save_state(const std::filesystem::path& path) const {
  bytes::Writer w;
  w.raw(kStateMagic, sizeof kStateMagic);
  w.u32(kStateVersion);
  w.str(to_string(lcfg_.method));
  w.u64(steps_);
  w.u64(batches_);
  write_ckpt(w, model_);
  w.u8(avg_.has_value());
  if (avg_) {
    write_ckpt(w, avg_->final_model);
    write_ckpt(w, avg_->adapted);
    w.f64(avg_->frames);
    w.f64(avg_->tokens);
    w.f64(avg_->tau);
    w.f64(avg_->tau2);
  }
  memory_.serialize(w);
  bytes::write_file(path, w.take());
}

void Learner::load_state(const std::filesystem::path& path) {
  const auto data = bytes::read_file(path);
  bytes::Reader r(data);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kStateMagic, sizeof magic) != 0) throw FormatError("not a learner state file");
  if (r.u32() != kStateVersion) throw FormatError("unsupported learner state version");
  if (r.str() != to_string(lcfg_.method)) throw std::invalid_argument("learner state belongs to another method");
  steps_ = r.u64();
  batches_ = r.u64();
  model_ = read_ckpt(r);
  if (r.u8()) {
    AveragerState s;
    s.final_model = read_ckpt(r);
    s.adapted = read_ckpt(r);
    s.frames = r.f64();
    s.tokens = r.f64();
    s.tau = r.f64();
    s.tau2 = r.f64();
    avg_ = std::move(s);
  } else {
    avg_.reset();
  }
  memory_ = ReplayMemory::deserialize(r);
  if (!r.done()) throw FormatError("trailing bytes in learner state");
}

}  // namespace uocl::ocl
