#include "ttalab/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ttalab {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::parse_text(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  std::map<std::string, std::string> raw;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (raw.count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
    raw[key] = val;
  }
  auto it = raw.find("schema");
  if (it == raw.end())
    throw VersionError(origin + ": missing required 'schema' key");
  if (it->second != "1")
    throw VersionError(origin + ": unsupported schema '" + it->second + "'");
  raw.erase(it);
  cfg.values = std::move(raw);
  return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("config: cannot open: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_text(buf.str(), path);
}

void KvConfig::apply_override(const std::string& kv) {
  const std::size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + kv + "' is not key=value");
  const std::string key = trim(kv.substr(0, eq));
  const std::string val = trim(kv.substr(eq + 1));
  if (key.empty()) throw ConfigError("override '" + kv + "' has an empty key");
  if (key == "schema") throw ConfigError("schema cannot be overridden");
  values[key] = val;
}

std::string KvConfig::get_str(const std::string& key,
                              const std::string& fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  char* end = nullptr;
  const long v = std::strtol(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    throw ConfigError("key '" + key + "' is not an integer: " + it->second);
  return static_cast<int>(v);
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str() || *end != '\0')
    throw ConfigError("key '" + key + "' is not a number: " + it->second);
  return v;
}

std::uint64_t KvConfig::get_u64(const std::string& key,
                                std::uint64_t fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    throw ConfigError("key '" + key + "' is not an unsigned integer: " +
                      it->second);
  return static_cast<std::uint64_t>(v);
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' is not a boolean: " + v);
}

std::string KvConfig::render() const {
  std::ostringstream out;
  out << "schema = 1\n";
  for (const auto& [k, v] : values) out << k << " = " << v << '\n';
  return out.str();
}

}  // namespace ttalab
