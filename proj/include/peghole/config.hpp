#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace peghole::cfg {

// Flat dotted-key configuration with a closed schema.  Every key has a
// default; files and command-line overrides may only touch known keys, so a
// typo is an error instead of a silently ignored setting.
class Config {
 public:
  Config();  // all defaults

  // Parses `key = value` lines (# comments, blank lines allowed).
  // Throws UsageError on malformed lines or unknown keys, IoError on I/O.
  void apply_file(const std::string& path);

  // Applies one "key=value" override.  Throws UsageError.
  void apply_override(const std::string& assignment);

  void set(const std::string& key, const std::string& value);

  const std::string& raw(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;  // true/false/1/0
  const std::string& get_string(const std::string& key) const;
  // Comma-separated list of doubles, e.g. "0.15,0.30".
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  // Sorted (key, value) pairs of the full effective configuration.
  std::vector<std::pair<std::string, std::string>> entries() const;

 private:
  std::map<std::string, std::string> values_;
};

struct SchemaEntry {
  const char* key;
  const char* default_value;
  const char* help;
};

// The closed key set with defaults and one-line help.
const std::vector<SchemaEntry>& schema();

}  // namespace peghole::cfg
