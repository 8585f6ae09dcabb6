#ifndef DPGRAD_CONFIG_HPP_
#define DPGRAD_CONFIG_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dpgrad {

// Flat string-keyed configuration. Two on-disk forms: `key = value` lines
// with '#' comments, or a flat JSON object ('.json' files). Typed accessors
// throw ConfigError on missing keys or unparsable values; harnesses also
// reject keys they do not know to catch typos early.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  static Config from_text(const std::string& text);
  static Config from_json_text(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  // Execution details (thread counts) are erased before hashing so the same
  // experiment hashes identically regardless of how it was scheduled.
  void erase(const std::string& key) { values_.erase(key); }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  uint64_t get_u64(const std::string& key) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  uint32_t get_u32(const std::string& key) const;
  uint32_t get_u32(const std::string& key, uint32_t fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Throws ConfigError naming the first key outside `allowed`.
  void check_keys(const std::vector<std::string>& allowed) const;

  // Sorted "key=value\n" text; the identity the config hash is taken over.
  std::string canonical() const;

  // FNV-1a over canonical(), reported in every output file so results can
  // be traced back to the exact configuration.
  uint64_t hash() const;
  std::string hash_hex() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dpgrad

#endif  // DPGRAD_CONFIG_HPP_
