#pragma once

#include <istream>
#include <map>
#include <string>
#include <vector>

namespace ffzo::cfg {

/// Line-oriented key-value configuration with [section] headers.
///
///   [train]
///   # full-line comments start with '#' or ';'
///   epochs = 20
///   seeds = 0 1 2
///
/// Keys before any header land in the "" section. Later duplicates win.
/// List values are whitespace-separated.
class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in);
  static Config parse_string(const std::string& text);
  static Config parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;

  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  /// Throwing variant for required keys.
  std::string require(const std::string& section, const std::string& key) const;

  int get_int(const std::string& section, const std::string& key, int fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  unsigned long long get_u64(const std::string& section, const std::string& key,
                             unsigned long long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  std::vector<std::string> get_list(const std::string& section, const std::string& key) const;
  std::vector<int> get_int_list(const std::string& section, const std::string& key) const;
  std::vector<unsigned long long> get_u64_list(const std::string& section,
                                               const std::string& key) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

  std::vector<std::string> sections() const;
  std::vector<std::string> keys(const std::string& section) const;

 private:
  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace ffzo::cfg
