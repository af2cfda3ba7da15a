#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spen/error.hpp"

namespace spen {

namespace detail {
inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}
}  // namespace detail

// Line-oriented `key = value` configuration with [section] headers. Keys are
// flattened to "section.key". CLI overrides are applied after file values.
class ConfigMap {
 public:
  ConfigMap() = default;

  static ConfigMap parse_file(const std::string& path) {
    std::ifstream in(path);
    check_config(in.good(), msg_cat("config: cannot open ", path));
    ConfigMap cfg;
    std::string line, section;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      if (t.front() == '[' && t.back() == ']') {
        section = detail::trim(t.substr(1, t.size() - 2));
        check_config(!section.empty(), msg_cat("config: empty section (", path, ":", line_no,
                                               ")"));
        continue;
      }
      auto eq = t.find('=');
      check_config(eq != std::string::npos,
                   msg_cat("config: expected key = value (", path, ":", line_no, ")"));
      std::string key = detail::trim(t.substr(0, eq));
      std::string value = detail::trim(t.substr(eq + 1));
      check_config(!key.empty(), msg_cat("config: empty key (", path, ":", line_no, ")"));
      cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
  }

  // "key=value" or "section.key=value".
  void apply_override(const std::string& spec) {
    auto eq = spec.find('=');
    check_config(eq != std::string::npos && eq > 0,
                 msg_cat("override: expected key=value, got '", spec, "'"));
    values_[detail::trim(spec.substr(0, eq))] = detail::trim(spec.substr(eq + 1));
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback = "") const {
    touched_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    touched_.insert(key);
    auto it = values_.find(key);
    check_config(it != values_.end(), msg_cat("config: missing required key '", key, "'"));
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    touched_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw ConfigError(msg_cat("config: key '", key, "' is not a number: '", it->second,
                                "'"));
    }
  }

  size_t get_size(const std::string& key, size_t fallback) const {
    touched_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw ConfigError(msg_cat("config: key '", key, "' is not an integer: '", it->second,
                                "'"));
    }
  }

  uint64_t get_u64(const std::string& key, uint64_t fallback) const {
    return get_size(key, fallback);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    touched_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError(msg_cat("config: key '", key, "' is not a boolean: '", it->second,
                              "'"));
  }

  // Every present key must have been read by the command; anything else is a
  // typo or a key for a different command.
  void reject_unknown_keys() const {
    for (const auto& [key, _] : values_) {
      check_config(touched_.count(key) > 0, msg_cat("config: unknown key '", key, "'"));
    }
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> touched_;
};

inline void check_path_exists(const std::string& path, const std::string& key) {
  std::ifstream probe(path);
  check_config(probe.good(), msg_cat("config: path for '", key, "' does not exist: ", path));
}

}  // namespace spen
