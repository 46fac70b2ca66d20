#include "uocl/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "uocl/bytes.hpp"

namespace uocl::ad {

namespace {
constexpr char kMagic[8] = {'U', 'O', 'C', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string_view to_string(Group g) {
  switch (g) {
    case Group::encoder: return "encoder";
    case Group::ctc_head: return "ctc_head";
    case Group::decoder: return "decoder";
  }
  return "unknown";
}

void Checkpoint::add_segment(std::string name, Group group, Shape shape) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate segment " + name);
  Segment s{std::move(name), group, std::move(shape), values_.size(), 0};
  s.size = element_count(s.shape);
  if (s.size == 0) throw ShapeError("segment " + s.name + " has an empty shape");
  values_.resize(values_.size() + s.size, 0.0);
  if (!grad_.empty()) grad_.resize(values_.size(), 0.0);
  index_.emplace(s.name, segments_.size());
  segments_.push_back(std::move(s));
}

const Segment& Checkpoint::segment(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no segment named " + std::string(name));
  return segments_[it->second];
}

bool Checkpoint::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::span<double> Checkpoint::values(std::string_view name) {
  const auto& s = segment(name);
  return std::span<double>(values_).subspan(s.offset, s.size);
}

std::span<const double> Checkpoint::values(std::string_view name) const {
  const auto& s = segment(name);
  return std::span<const double>(values_).subspan(s.offset, s.size);
}

Array Checkpoint::array(std::string_view name) const {
  const auto& s = segment(name);
  auto v = values(name);
  return Array(s.shape, std::vector<double>(v.begin(), v.end()));
}

std::span<double> Checkpoint::grad(std::string_view name) {
  ensure_grad();
  const auto& s = segment(name);
  return std::span<double>(grad_).subspan(s.offset, s.size);
}

void Checkpoint::ensure_grad() {
  if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
}

bool Checkpoint::compatible(const Checkpoint& other) const {
  if (segments_.size() != other.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& a = segments_[i];
    const auto& b = other.segments_[i];
    if (a.name != b.name || a.group != b.group || a.shape != b.shape) return false;
  }
  return true;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  bytes::Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(segments_.size()));
  for (const auto& s : segments_) {
    w.str(s.name);
    w.u8(static_cast<std::uint8_t>(s.group));
    w.u32(static_cast<std::uint32_t>(s.shape.size()));
    for (auto d : s.shape) w.u64(d);
  }
  w.u64(values_.size());
  for (double v : values_) w.f64(v);
  return w.take();
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto group = r.u8();
    if (group > 2) throw FormatError("bad segment group in " + name);
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    ck.add_segment(std::move(name), static_cast<Group>(group), std::move(shape));
  }
  const auto n = r.u64();
  if (n != ck.values_.size()) throw FormatError("payload size does not match segment map");
  for (auto& v : ck.values_) v = r.f64();
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  bytes::write_file(path, serialize());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return deserialize(bytes::read_file(path));
}

// ---- BoundParams ------------------------------------------------------------

BoundParams::BoundParams(Tape& tape, const Checkpoint& ckpt, bool trainable)
    : tape_(&tape), ckpt_(&ckpt), trainable_(trainable) {}

Var BoundParams::operator[](const std::string& name) const {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = trainable_ ? tape_->leaf(ckpt_->array(name), true) : tape_->constant(ckpt_->array(name));
  bound_.emplace(name, v);
  return v;
}

void BoundParams::export_grads(Checkpoint& dst) const {
  if (!dst.compatible(*ckpt_)) throw std::invalid_argument("export_grads: incompatible checkpoint");
  dst.ensure_grad();
  accumulate_grads(dst.grad());
}

void BoundParams::accumulate_grads(std::span<double> dst) const {
  if (dst.size() != ckpt_->parameter_count()) throw std::invalid_argument("accumulate_grads: size mismatch");
  for (const auto& [name, var] : bound_) {
    auto g = var.grad();
    if (g.empty()) continue;
    const auto& seg = ckpt_->segment(name);
    for (std::size_t i = 0; i < seg.size; ++i) dst[seg.offset + i] += g[i];
  }
}

void sgd_step(Checkpoint& params, double lr) {
  if (!params.has_grad()) throw GraphError("sgd_step: no gradients populated");
  auto v = params.values();
  auto g = params.grad();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  params.clear_grad();
}

}  // namespace uocl::ad
