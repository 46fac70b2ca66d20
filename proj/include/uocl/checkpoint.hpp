#pragma once

// Flat parameter vector with a named segment map.
//
// Binary layout (all integers and floats little-endian):
//   magic   8 bytes  "UOCLCKPT"
//   version u32      (currently 1)
//   count   u32      number of segments
//   per segment: u32 name length, name bytes, u8 group, u32 rank, u64 dims[rank]
//   total   u64      parameter count N
//   payload N × f64
// See docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "uocl/autodiff.hpp"
#include "uocl/bytes.hpp"

namespace uocl::ad {

enum class Group : std::uint8_t { encoder = 0, ctc_head = 1, decoder = 2 };

std::string_view to_string(Group g);

struct Segment {
  std::string name;
  Group group = Group::encoder;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

using uocl::FormatError;

class Checkpoint {
 public:
  Checkpoint() = default;

  void add_segment(std::string name, Group group, Shape shape);

  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t parameter_count() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values(std::string_view name);
  std::span<const double> values(std::string_view name) const;
  Array array(std::string_view name) const;

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  std::span<double> grad(std::string_view name);
  void ensure_grad();
  void clear_grad() { grad_.clear(); }

  /// Same segment names, groups and shapes in the same order.
  bool compatible(const Checkpoint& other) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);

  bool operator==(const Checkpoint& other) const {
    return compatible(other) && values_ == other.values_;
  }

 private:
  std::vector<Segment> segments_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

/// Binds checkpoint segments as tape leaves on first use.
class BoundParams {
 public:
  BoundParams(Tape& tape, const Checkpoint& ckpt, bool trainable);

  Var operator[](const std::string& name) const;
  const Checkpoint& checkpoint() const { return *ckpt_; }
  bool trainable() const { return trainable_; }

  /// Adds the gradients of every bound leaf into dst.grad().
  void export_grads(Checkpoint& dst) const;
  /// Adds the gradients into a flat vector laid out like the checkpoint.
  void accumulate_grads(std::span<double> dst) const;

 private:
  Tape* tape_;
  const Checkpoint* ckpt_;
  bool trainable_;
  mutable std::unordered_map<std::string, Var> bound_;
};

}  // namespace uocl::ad

namespace uocl {
using ad::Checkpoint;
}
