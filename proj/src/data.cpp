#include "uocl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <stdexcept>

namespace uocl::data {

namespace {

constexpr char kMagic[8] = {'U', 'O', 'C', 'L', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;
constexpr double kDirichletAlpha = 0.3;

std::vector<double> dirichlet(std::size_t n, double alpha, Rng& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  std::vector<double> v(n);
  double z = 0.0;
  for (auto& x : v) z += (x = g(rng) + 1e-12);
  for (auto& x : v) x /= z;
  return v;
}

std::vector<double> gaussian(std::size_t n, double sd, Rng& rng) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Gram-Schmidt on a Gaussian matrix: a uniformly random rotation/reflection.
std::vector<double> random_orthogonal(std::size_t n, Rng& rng) {
  auto m = gaussian(n * n, 1.0, rng);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = m.data() + i * n;
    for (std::size_t j = 0; j < i; ++j) {
      const double* prev = m.data() + j * n;
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += row[k] * prev[k];
      for (std::size_t k = 0; k < n; ++k) row[k] -= dot * prev[k];
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < n; ++k) norm += row[k] * row[k];
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < n; ++k) row[k] /= norm;
  }
  return m;
}

std::size_t sample(std::span<const double> probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng), acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (r < acc) return i;
  }
  return probs.size() - 1;
}

void check_distribution(std::span<const double> p, const std::string& what) {
  double z = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw std::invalid_argument(what + " has a negative entry");
    z += x;
  }
  if (std::abs(z - 1.0) > 1e-9) throw std::invalid_argument(what + " is not normalized");
}

}  // namespace

void TaskSpec::validate() const {
  const std::size_t S = symbols, D = feature_dim;
  if (S == 0 || D == 0) throw std::invalid_argument("task needs symbols and features");
  if (initial.size() != S || transitions.size() != S * S || prototypes.size() != S * D || silence.size() != D ||
      channel.size() != D * D || bias.size() != D) {
    throw std::invalid_argument("task " + id + ": parameter sizes do not match symbols/feature_dim");
  }
  check_distribution(initial, "initial distribution");
  for (std::size_t r = 0; r < S; ++r) {
    check_distribution(std::span(transitions).subspan(r * S, S), "transition row " + std::to_string(r));
  }
  if (min_frames_per_token < 1 || max_frames_per_token < min_frames_per_token) {
    throw std::invalid_argument("frames per token range must satisfy 1 <= min <= max");
  }
  if (min_length < 1 || max_length < min_length) {
    throw std::invalid_argument("utterance length range must satisfy 1 <= min <= max");
  }
  if (noise < 0.0) throw std::invalid_argument("noise must be non-negative");
}

Shift parse_shift(const std::string& s) {
  if (s == "text") return Shift::text;
  if (s == "channel") return Shift::channel;
  if (s == "both") return Shift::both;
  if (s == "accent") return Shift::accent;
  throw std::invalid_argument("unknown shift '" + s + "' (text|channel|both|accent)");
}

std::string to_string(Shift s) {
  switch (s) {
    case Shift::text: return "text";
    case Shift::channel: return "channel";
    case Shift::both: return "both";
    case Shift::accent: return "accent";
  }
  return "?";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::pretrain: return "pretrain";
    case Split::dev: return "dev";
    case Split::stream: return "stream";
    case Split::test: return "test";
  }
  return "?";
}

TaskSpec base_task(std::string id, std::size_t symbols, std::size_t feature_dim, std::uint64_t seed) {
  Rng rng(seed);
  TaskSpec t;
  t.id = std::move(id);
  t.symbols = symbols;
  t.feature_dim = feature_dim;
  t.initial = dirichlet(symbols, 1.0, rng);
  for (std::size_t r = 0; r < symbols; ++r) {
    auto row = dirichlet(symbols, kDirichletAlpha, rng);
    t.transitions.insert(t.transitions.end(), row.begin(), row.end());
  }
  t.prototypes = gaussian(symbols * feature_dim, 1.0, rng);
  t.silence.assign(feature_dim, 0.0);
  t.channel.assign(feature_dim * feature_dim, 0.0);
  for (std::size_t i = 0; i < feature_dim; ++i) t.channel[i * feature_dim + i] = 1.0;
  t.bias.assign(feature_dim, 0.0);
  t.validate();
  return t;
}

TaskSpec make_task(const TaskSpec& base, Shift shift, double magnitude, std::uint64_t seed, std::string id) {
  if (magnitude < 0.0) throw std::invalid_argument("shift magnitude must be >= 0");
  const double m = std::min(magnitude, 1.0);
  TaskSpec t = base;
  t.id = std::move(id);
  if (m == 0.0) return t;
  Rng rng(seed);
  const std::size_t S = t.symbols, D = t.feature_dim;
  if (shift == Shift::text || shift == Shift::both) {
    const auto init = dirichlet(S, 1.0, rng);
    for (std::size_t i = 0; i < S; ++i) t.initial[i] = (1.0 - m) * t.initial[i] + m * init[i];
    for (std::size_t r = 0; r < S; ++r) {
      const auto row = dirichlet(S, kDirichletAlpha, rng);
      for (std::size_t c = 0; c < S; ++c) {
        auto& p = t.transitions[r * S + c];
        p = (1.0 - m) * p + m * row[c];
      }
    }
  }
  if (shift == Shift::channel || shift == Shift::both) {
    const auto q = random_orthogonal(D, rng);
    const auto db = gaussian(D, 0.5, rng);
    std::vector<double> rotated(D * D, 0.0);
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t k = 0; k < D; ++k)
        for (std::size_t j = 0; j < D; ++j) rotated[i * D + j] += q[i * D + k] * base.channel[k * D + j];
    for (std::size_t i = 0; i < D * D; ++i) t.channel[i] = (1.0 - m) * base.channel[i] + m * rotated[i];
    for (std::size_t i = 0; i < D; ++i) t.bias[i] = base.bias[i] + m * db[i];
  }
  if (shift == Shift::accent) {
    std::vector<std::size_t> perm(S);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    // Consecutive entries of the shuffle form pairs; an odd one out keeps its prototype.
    for (std::size_t k = 0; k + 1 < S; k += 2) {
      const std::size_t a = perm[k], b = perm[k + 1];
      for (std::size_t j = 0; j < D; ++j) {
        const double pa = base.prototypes[a * D + j], pb = base.prototypes[b * D + j];
        t.prototypes[a * D + j] = (1.0 - m) * pa + m * pb;
        t.prototypes[b * D + j] = (1.0 - m) * pb + m * pa;
      }
    }
  }
  t.validate();
  return t;
}

double row_kl(const TaskSpec& p, const TaskSpec& q, std::size_t row) {
  double kl = 0.0;
  for (std::size_t c = 0; c < p.symbols; ++c) {
    const double a = p.transition(row, c), b = q.transition(row, c);
    if (a > 0.0) kl += a * std::log(a / b);
  }
  return kl;
}

Utterance synth_utterance(const TaskSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t S = spec.symbols, D = spec.feature_dim;
  std::uniform_int_distribution<std::size_t> len(spec.min_length, spec.max_length);
  std::uniform_int_distribution<std::size_t> dur(spec.min_frames_per_token, spec.max_frames_per_token);
  std::uniform_int_distribution<int> pad(1, 2);
  std::bernoulli_distribution gap(0.5);
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t n = len(rng);
  std::vector<std::size_t> symbols(n);
  symbols[0] = sample(spec.initial, rng);
  for (std::size_t i = 1; i < n; ++i) {
    symbols[i] = sample(std::span(spec.transitions).subspan(symbols[i - 1] * S, S), rng);
  }

  // Frame sources: symbol index, or S for silence.
  std::vector<std::size_t> frames;
  frames.insert(frames.end(), pad(rng), S);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && (symbols[i] == symbols[i - 1] || gap(rng))) frames.push_back(S);
    frames.insert(frames.end(), dur(rng), symbols[i]);
  }
  frames.insert(frames.end(), pad(rng), S);

  Utterance u;
  u.features = ad::Array(ad::Shape{frames.size(), D});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const double* src = frames[t] == S ? spec.silence.data() : spec.prototypes.data() + frames[t] * D;
    for (std::size_t i = 0; i < D; ++i) {
      double v = spec.bias[i];
      for (std::size_t j = 0; j < D; ++j) v += spec.channel[i * D + j] * src[j];
      u.features.at(t, i) = v + spec.noise * noise(rng);
    }
  }
  u.transcript.reserve(n);
  for (auto s : symbols) u.transcript.push_back(kFirstSymbol + static_cast<int>(s));
  return u;
}

bool Dataset::operator==(const Dataset& o) const {
  if (task_id != o.task_id || split != o.split || config_echo != o.config_echo || size() != o.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = utterances[i];
    const auto& b = o.utterances[i];
    if (a.id != b.id || !(a.features == b.features) || a.transcript != b.transcript) return false;
  }
  return true;
}

Dataset generate(const TaskSpec& spec, Split split, std::size_t count, std::uint64_t seed, std::uint64_t id_base) {
  spec.validate();
  Dataset ds;
  ds.task_id = spec.id;
  ds.split = split;
  ds.config_echo = "task=" + spec.id + " split=" + to_string(split) + " count=" + std::to_string(count) +
                   " seed=" + std::to_string(seed);
  ds.utterances.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto u = synth_utterance(spec, derive_seed(seed, i));
    u.id = id_base + i;
    ds.utterances.push_back(std::move(u));
  }
  return ds;
}

std::vector<std::uint8_t> serialize(const Dataset& ds) {
  bytes::Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.str(ds.task_id);
  w.u8(static_cast<std::uint8_t>(ds.split));
  w.str(ds.config_echo);
  w.u32(static_cast<std::uint32_t>(ds.utterances.size()));
  for (const auto& u : ds.utterances) {
    w.u64(u.id);
    w.u32(static_cast<std::uint32_t>(u.features.rows()));
    w.u32(static_cast<std::uint32_t>(u.features.cols()));
    for (double v : u.features.values()) w.f64(v);
    w.u32(static_cast<std::uint32_t>(u.transcript.size()));
    for (int k : u.transcript) w.i32(k);
  }
  return w.take();
}

Dataset deserialize(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("not a dataset file (bad magic)");
  const auto version = r.u32();
  if (version != kVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.task_id = r.str();
  const auto split = r.u8();
  if (split > 3) throw FormatError("bad split tag");
  ds.split = static_cast<Split>(split);
  ds.config_echo = r.str();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Utterance u;
    u.id = r.u64();
    const std::size_t F = r.u32(), D = r.u32();
    if (F == 0 || D == 0 || F * D * 8 > r.remaining()) throw FormatError("corrupt utterance header");
    std::vector<double> v(F * D);
    for (auto& x : v) x = r.f64();
    u.features = ad::Array(ad::Shape{F, D}, std::move(v));
    const std::size_t n = r.u32();
    if (n * 4 > r.remaining()) throw FormatError("corrupt transcript length");
    u.transcript.resize(n);
    for (auto& k : u.transcript) k = r.i32();
    ds.utterances.push_back(std::move(u));
  }
  if (!r.done()) throw FormatError("trailing bytes after dataset payload");
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) { bytes::write_file(path, serialize(ds)); }

Dataset load_dataset(const std::filesystem::path& path) { return deserialize(bytes::read_file(path)); }

}  // namespace uocl::data
