#pragma once

// Flat key-value configuration with [sections]. Keys are addressed as
// "section.key" (or "key" before the first section). Later assignments win.

#include <adnorm/errors.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace adnorm {

inline std::uint64_t fnv1a(std::string_view text, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

class Config {
 public:
  static Config parse(std::istream& in, const std::string& source = "<config>") {
    Config c;
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw ConfigError(source + ":" + std::to_string(lineno), "unterminated section header");
        section = trim(std::string_view(t).substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno), "expected key = value");
      const std::string key = trim(std::string_view(t).substr(0, eq));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno), "empty key");
      c.set(section.empty() ? key : section + "." + key, trim(std::string_view(t).substr(eq + 1)));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot read config file " + path);
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key, "expected a number, got '" + it->second + "'");
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key, "expected an integer, got '" + it->second + "'");
    }
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      if (!it->second.empty() && it->second[0] == '-') throw std::invalid_argument(it->second);
      const unsigned long long v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key, "expected a non-negative integer, got '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key, "expected a boolean, got '" + v + "'");
  }

  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const std::string& item : split_list(it->second)) {
      try {
        std::size_t pos = 0;
        out.push_back(std::stod(item, &pos));
        if (pos != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ConfigError(key, "expected a comma-separated list of numbers, got '" + it->second + "'");
      }
    }
    return out;
  }

  std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return split_list(it->second);
  }

  /// Keys present in the file that no getter has asked for.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  /// Canonical text: sections in key order, one "key = value" per line.
  std::string canonical() const {
    std::ostringstream out;
    std::string current = "\x01";
    for (const auto& [k, v] : values_) {
      const auto dot = k.find('.');
      const std::string section = dot == std::string::npos ? "" : k.substr(0, dot);
      const std::string name = dot == std::string::npos ? k : k.substr(dot + 1);
      if (section != current) {
        if (!section.empty()) out << "[" << section << "]\n";
        current = section;
      }
      out << name << " = " << v << "\n";
    }
    return out.str();
  }

  std::uint64_t hash() const { return fnv1a(canonical()); }

  static std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string t = trim(item);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace adnorm
