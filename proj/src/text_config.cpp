#include "rfnet/text_config.hpp"

#include <charconv>
#include <fstream>

#include "rfnet/error.hpp"

namespace rfnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace

const std::string& KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues load_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return parse_key_values(os.str());
}

int parse_int(const std::string& s) {
  int v = 0;
  const auto t = trim(s);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError("expected an integer, got '" + s + "'");
  }
  return v;
}

double parse_double(const std::string& s) {
  const auto t = trim(s);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
}

bool parse_bool(const std::string& s) {
  const auto t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& part : split_commas(s)) out.push_back(parse_int(part));
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : split_commas(s)) out.push_back(parse_double(part));
  return out;
}

}  // namespace rfnet
