#include "ffzo/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ffzo::cfg {
namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse(std::istream& in) {
  Config cfg;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": unterminated section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      cfg.values_[section];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    }
    cfg.values_[section][key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

Config Config::parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return parse(in);
}

bool Config::has(const std::string& section, const std::string& key) const {
  const auto s = values_.find(section);
  return s != values_.end() && s->second.count(key) > 0;
}

std::string Config::get(const std::string& section, const std::string& key,
                        const std::string& fallback) const {
  const auto s = values_.find(section);
  if (s == values_.end()) return fallback;
  const auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

std::string Config::require(const std::string& section, const std::string& key) const {
  if (!has(section, key)) {
    throw std::invalid_argument("config: missing required key [" + section + "] " + key);
  }
  return get(section, key, "");
}

int Config::get_int(const std::string& section, const std::string& key, int fallback) const {
  if (!has(section, key)) return fallback;
  return std::stoi(get(section, key, ""));
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
  if (!has(section, key)) return fallback;
  return std::stod(get(section, key, ""));
}

unsigned long long Config::get_u64(const std::string& section, const std::string& key,
                                   unsigned long long fallback) const {
  if (!has(section, key)) return fallback;
  return std::stoull(get(section, key, ""));
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: [" + section + "] " + key + " is not a boolean: " + v);
}

std::vector<std::string> Config::get_list(const std::string& section,
                                          const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(section, key, ""));
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::vector<int> Config::get_int_list(const std::string& section, const std::string& key) const {
  std::vector<int> out;
  for (const auto& tok : get_list(section, key)) out.push_back(std::stoi(tok));
  return out;
}

std::vector<unsigned long long> Config::get_u64_list(const std::string& section,
                                                     const std::string& key) const {
  std::vector<unsigned long long> out;
  for (const auto& tok : get_list(section, key)) out.push_back(std::stoull(tok));
  return out;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  values_[section][key] = value;
}

std::vector<std::string> Config::sections() const {
  std::vector<std::string> out;
  for (const auto& [name, keys] : values_) out.push_back(name);
  return out;
}

std::vector<std::string> Config::keys(const std::string& section) const {
  std::vector<std::string> out;
  const auto s = values_.find(section);
  if (s == values_.end()) return out;
  for (const auto& [key, value] : s->second) out.push_back(key);
  return out;
}

}  // namespace ffzo::cfg
