#pragma once

// key=value experiment configuration.
//
//   # comment
//   key = value            whitespace around '=' is ignored
//
// Later assignments override earlier ones; overrides from the command line
// use the same syntax. Every key that a run reads is recorded with its
// effective value (defaults included), which is what gets echoed into run
// outputs. Reading finishes with check_unused(), so typos fail loudly.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace uocl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  Config() = default;
  static Config parse(const std::string& text, const std::string& origin = "<string>");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  /// "key=value" override.
  void apply(const std::string& assignment);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::string& fallback) const;

  /// Throws ConfigError naming any key that was set but never read.
  void check_unused() const;
  /// Effective configuration, one "key=value" per line, sorted by key.
  std::string echo() const;
  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  std::string lookup(const std::string& key, const std::string& fallback) const;

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> effective_;
};

}  // namespace uocl
