#pragma once

#include <calsens/common.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

namespace calsens {

// plain-text config: [section] headers, key = value lines, '#' comments,
// lists comma-separated; insertion order preserved so emission is stable
class Config {
 public:
  static Config parse_string(const std::string& text, const std::string& origin = "<string>") {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#') continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw LoadError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
        section = strip(s.substr(1, s.size() - 2));
        if (section.empty())
          throw LoadError(origin + ":" + std::to_string(lineno) + ": empty section name");
        cfg.section_index(section);
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw LoadError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = strip(s.substr(0, eq));
      std::string value = strip(s.substr(eq + 1));
      if (key.empty())
        throw LoadError(origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.set(section, key, value);
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw LoadError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str(), path);
  }

  bool has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
  }

  std::string get_string(const std::string& section, const std::string& key) const {
    const std::string* v = find(section, key);
    if (!v) throw LoadError("missing config key [" + section + "] " + key);
    return *v;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
    const std::string* v = find(section, key);
    return v ? *v : fallback;
  }

  double get_double(const std::string& section, const std::string& key) const {
    return to_double(get_string(section, key), section, key);
  }

  double get_double(const std::string& section, const std::string& key, double fallback) const {
    const std::string* v = find(section, key);
    return v ? to_double(*v, section, key) : fallback;
  }

  long get_long(const std::string& section, const std::string& key, long fallback) const {
    const std::string* v = find(section, key);
    if (!v) return fallback;
    char* end = nullptr;
    long out = std::strtol(v->c_str(), &end, 10);
    if (end == v->c_str() || *end != '\0')
      throw LoadError("config key [" + section + "] " + key + " is not an integer: " + *v);
    return out;
  }

  std::vector<double> get_list(const std::string& section, const std::string& key) const {
    std::string raw = get_string(section, key);
    std::vector<double> out;
    std::string item;
    std::istringstream in(raw);
    while (std::getline(in, item, ',')) {
      std::string t = strip(item);
      if (t.empty()) continue;
      out.push_back(to_double(t, section, key));
    }
    return out;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    auto& sec = sections_[section_index(section)];
    for (auto& kv : sec.second)
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    sec.second.emplace_back(key, value);
  }

  std::string to_string() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& sec : sections_) {
      if (!first) out << "\n";
      first = false;
      out << "[" << sec.first << "]\n";
      for (const auto& kv : sec.second) out << kv.first << " = " << kv.second << "\n";
    }
    return out.str();
  }

  std::vector<std::string> section_names() const {
    std::vector<std::string> out;
    out.reserve(sections_.size());
    for (const auto& s : sections_) out.push_back(s.first);
    return out;
  }

  std::vector<std::string> keys(const std::string& section) const {
    std::vector<std::string> out;
    for (const auto& s : sections_)
      if (s.first == section)
        for (const auto& kv : s.second) out.push_back(kv.first);
    return out;
  }

 private:
  using Section = std::pair<std::string, std::vector<std::pair<std::string, std::string>>>;
  std::vector<Section> sections_;

  size_t section_index(const std::string& name) {
    for (size_t i = 0; i < sections_.size(); ++i)
      if (sections_[i].first == name) return i;
    sections_.push_back({name, {}});
    return sections_.size() - 1;
  }

  const std::string* find(const std::string& section, const std::string& key) const {
    for (const auto& s : sections_)
      if (s.first == section)
        for (const auto& kv : s.second)
          if (kv.first == key) return &kv.second;
    return nullptr;
  }

  static std::string strip(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double to_double(const std::string& s, const std::string& section,
                          const std::string& key) {
    char* end = nullptr;
    double out = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
      throw LoadError("config key [" + section + "] " + key + " is not a number: " + s);
    return out;
  }
};

}  // namespace calsens
