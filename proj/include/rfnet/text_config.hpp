#pragma once

// Plain-text `key = value` configuration parsing ('#' starts a comment).

#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace rfnet {

class KeyValues {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  /// Throws ConfigError when the key is missing.
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  const std::map<std::string, std::string>& all() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::string& path);

int parse_int(const std::string& s);
double parse_double(const std::string& s);
bool parse_bool(const std::string& s);
std::vector<int> parse_int_list(const std::string& s);
std::vector<double> parse_double_list(const std::string& s);

template <typename Range>
std::string join_ints(const Range& values) {
  std::ostringstream os;
  bool first = true;
  for (auto v : values) {
    if (!first) os << ',';
    os << v;
    first = false;
  }
  return os.str();
}

}  // namespace rfnet
