#include "dpgrad/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dpgrad/errors.hpp"

namespace dpgrad {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  if (ends_with(path, ".json")) return from_json_text(buf.str());
  return from_text(buf.str());
}

Config Config::from_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(lineno));
    if (cfg.values_.count(key)) throw ConfigError("config: duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

Config Config::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: JSON root must be an object");
  Config cfg;
  for (const auto& [key, value] : j.items()) {
    if (value.is_string()) {
      cfg.values_[key] = value.get<std::string>();
    } else if (value.is_boolean()) {
      cfg.values_[key] = value.get<bool>() ? "true" : "false";
    } else if (value.is_number() || value.is_null()) {
      cfg.values_[key] = value.dump();
    } else {
      throw ConfigError("config: key '" + key + "' must be scalar");
    }
  }
  return cfg;
}

std::string Config::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? values_.at(key) : fallback;
}

double Config::get_double(const std::string& key) const {
  const std::string raw = get_string(key);
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(raw.c_str(), &end);
  if (errno != 0 || end == raw.c_str() || *end != '\0') {
    throw ConfigError("config: key '" + key + "' is not a number: '" + raw + "'");
  }
  return v;
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

uint64_t Config::get_u64(const std::string& key) const {
  const std::string raw = get_string(key);
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw.c_str(), &end, 10);
  if (errno != 0 || end == raw.c_str() || *end != '\0' || raw.find('-') != std::string::npos) {
    throw ConfigError("config: key '" + key + "' is not a non-negative integer: '" + raw + "'");
  }
  return v;
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
  return has(key) ? get_u64(key) : fallback;
}

uint32_t Config::get_u32(const std::string& key) const {
  const uint64_t v = get_u64(key);
  if (v > 0xffffffffull) throw ConfigError("config: key '" + key + "' exceeds 32 bits");
  return static_cast<uint32_t>(v);
}

uint32_t Config::get_u32(const std::string& key, uint32_t fallback) const {
  return has(key) ? get_u32(key) : fallback;
}

bool Config::get_bool(const std::string& key) const {
  const std::string raw = get_string(key);
  if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
  if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
  throw ConfigError("config: key '" + key + "' is not a boolean: '" + raw + "'");
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

void Config::check_keys(const std::vector<std::string>& allowed) const {
  for (const auto& [key, value] : values_) {
    bool known = false;
    for (const auto& a : allowed) {
      if (a == key) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config: unknown key '" + key + "'");
  }
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [key, value] : values_) {  // std::map iterates sorted
    out += key;
    out += '=';
    out += value;
    out += '\n';
  }
  return out;
}

uint64_t Config::hash() const {
  // FNV-1a, 64-bit.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : canonical()) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string Config::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
  return std::string(buf);
}

}  // namespace dpgrad
