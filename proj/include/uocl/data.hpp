#pragma once

// Synthetic domain-shifted sequence tasks and the dataset container.
//
// A task couples a text model (order-1 Markov chain over symbols) with an
// acoustic model (per-symbol prototype vectors passed through an affine
// channel, plus Gaussian noise). Text shifts perturb the chain, channel
// shifts perturb the affine transform, so both kinds of domain gap can be
// dialled independently. Accent shifts pull each symbol's prototype toward
// that of a randomly paired partner symbol.
//
// Dataset container (little-endian):
//   magic "UOCLDATA", u32 version (1), str task id, u8 split, str config echo,
//   u32 count, then per utterance: u64 id, u32 frames, u32 dim,
//   frames×dim f64, u32 length, length × i32 tokens.
// Strings are u32 length + bytes. See docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uocl/autodiff.hpp"
#include "uocl/bytes.hpp"
#include "uocl/tokens.hpp"

namespace uocl::data {

struct TaskSpec {
  std::string id;
  std::size_t symbols = 13;
  std::size_t feature_dim = 10;
  std::vector<double> initial;      // symbols
  std::vector<double> transitions;  // symbols × symbols, rows sum to 1
  std::vector<double> prototypes;   // symbols × feature_dim
  std::vector<double> silence;      // feature_dim
  std::vector<double> channel;      // feature_dim × feature_dim
  std::vector<double> bias;         // feature_dim
  double noise = 0.4;
  std::size_t min_frames_per_token = 2;
  std::size_t max_frames_per_token = 4;
  std::size_t min_length = 3;
  std::size_t max_length = 10;

  void validate() const;
  double transition(std::size_t from, std::size_t to) const { return transitions[from * symbols + to]; }
  bool operator==(const TaskSpec&) const = default;
};

enum class Shift { text, channel, both, accent };

Shift parse_shift(const std::string& s);
std::string to_string(Shift s);

/// Random base task: Dirichlet transition rows, Gaussian prototypes,
/// identity channel.
TaskSpec base_task(std::string id, std::size_t symbols, std::size_t feature_dim, std::uint64_t seed);

/// magnitude 0 returns `base` unchanged (apart from the id). Text shifts
/// interpolate every transition row (and the initial distribution) toward a
/// fresh Dirichlet draw; channel shifts interpolate the transform toward a
/// random rotation of it and move the bias; accent shifts mix each prototype
/// with its partner's, so past 0.5 a symbol sounds like its partner. Magnitudes above 1 clip to 1.
TaskSpec make_task(const TaskSpec& base, Shift shift, double magnitude, std::uint64_t seed, std::string id);

/// KL(p || q) between two transition rows.
double row_kl(const TaskSpec& p, const TaskSpec& q, std::size_t row);

struct Utterance {
  std::uint64_t id = 0;
  ad::Array features;  // F × D
  Tokens transcript;   // symbol ids, each >= kFirstSymbol
};

/// Transcript from the Markov chain; every token emits its channel-mapped
/// prototype for a sampled duration; silence frames separate tokens (always
/// between repeats) and pad both ends.
Utterance synth_utterance(const TaskSpec& spec, std::uint64_t seed);

enum class Split : std::uint8_t { pretrain = 0, dev = 1, stream = 2, test = 3 };
std::string to_string(Split s);

struct Dataset {
  std::string task_id;
  Split split = Split::pretrain;
  std::string config_echo;
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  bool operator==(const Dataset& o) const;
};

/// `count` utterances; utterance i uses seed derive_seed(seed, i) and id
/// id_base + i.
Dataset generate(const TaskSpec& spec, Split split, std::size_t count, std::uint64_t seed,
                 std::uint64_t id_base);

std::vector<std::uint8_t> serialize(const Dataset& ds);
Dataset deserialize(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace uocl::data
