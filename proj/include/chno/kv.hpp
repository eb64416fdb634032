#pragma once

// Plain-text `key = value` files. `#` starts a comment; blank lines are
// skipped; keys are written sorted.

#include <fstream>
#include <istream>
#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <iomanip>
#include <string>

#include "chno/error.hpp"

namespace chno {

using KeyValues = std::map<std::string, std::string>;

inline void write_kv(const std::string &path, const KeyValues &m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (const auto &[k, v] : m) os << k << " = " << v << '\n';
}

inline KeyValues read_kv(std::istream &is, const std::string &origin) {
  KeyValues m;
  std::string line;
  int n = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
    m[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return m;
}

inline KeyValues read_kv(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw MissingFileError("cannot open " + path);
  return read_kv(is, path);
}

/// Looks up a required key.
inline const std::string &kv_get(const KeyValues &m, const std::string &key, const std::string &origin) {
  auto it = m.find(key);
  if (it == m.end()) throw ConfigError(origin + " lacks key '" + key + "'");
  return it->second;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T> T parse_number(const std::string &text, const std::string &what) {
  T v{};
  const auto *end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError(what + ": cannot parse '" + text + "' as a number");
  return v;
}

} // namespace chno
