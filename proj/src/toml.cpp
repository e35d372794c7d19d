#include "dress/toml.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace dress::toml {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// strips a trailing comment that is not inside a quoted string
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

std::string unquote(const std::string& raw, const std::string& where) {
  std::string s = trim(raw);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  throw ConfigError("expected a quoted string for " + where + ", got: " + raw);
}

std::vector<std::string> split_array(const std::string& raw, const std::string& where) {
  std::string s = trim(raw);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']')
    throw ConfigError("expected an array for " + where + ", got: " + raw);
  s = s.substr(1, s.size() - 2);
  std::vector<std::string> items;
  std::string cur;
  bool in_str = false;
  for (char c : s) {
    if (c == '"') in_str = !in_str;
    if (c == ',' && !in_str) {
      if (!trim(cur).empty()) items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) items.push_back(trim(cur));
  return items;
}

}  // namespace

Table Table::parse(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section");
      section = trim(line.substr(1, line.size() - 2));
      t.sections_[section];
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
    t.sections_[section][key] = value;
  }
  return t;
}

Table Table::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string* Table::find(const std::string& section, const std::string& key) const {
  auto sit = sections_.find(section);
  if (sit == sections_.end()) return nullptr;
  auto kit = sit->second.find(key);
  if (kit == sit->second.end()) return nullptr;
  return &kit->second;
}

bool Table::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string Table::get_string(const std::string& section, const std::string& key,
                              const std::string& fallback) const {
  const std::string* raw = find(section, key);
  if (!raw) return fallback;
  return unquote(*raw, section + "." + key);
}

long long Table::get_int(const std::string& section, const std::string& key,
                         long long fallback) const {
  const std::string* raw = find(section, key);
  if (!raw) return fallback;
  try {
    size_t pos = 0;
    long long v = std::stoll(*raw, &pos);
    if (pos != raw->size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("expected an integer for " + section + "." + key + ", got: " + *raw);
  }
}

double Table::get_double(const std::string& section, const std::string& key,
                         double fallback) const {
  const std::string* raw = find(section, key);
  if (!raw) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(*raw, &pos);
    if (pos != raw->size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("expected a number for " + section + "." + key + ", got: " + *raw);
  }
}

bool Table::get_bool(const std::string& section, const std::string& key,
                     bool fallback) const {
  const std::string* raw = find(section, key);
  if (!raw) return fallback;
  if (*raw == "true") return true;
  if (*raw == "false") return false;
  throw ConfigError("expected true/false for " + section + "." + key + ", got: " + *raw);
}

std::vector<std::string> Table::get_string_array(const std::string& section,
                                                 const std::string& key) const {
  const std::string* raw = find(section, key);
  if (!raw) return {};
  std::vector<std::string> out;
  for (const std::string& item : split_array(*raw, section + "." + key))
    out.push_back(unquote(item, section + "." + key));
  return out;
}

std::vector<double> Table::get_double_array(const std::string& section,
                                            const std::string& key) const {
  const std::string* raw = find(section, key);
  if (!raw) return {};
  std::vector<double> out;
  for (const std::string& item : split_array(*raw, section + "." + key)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("expected numbers in array " + section + "." + key);
    }
  }
  return out;
}

void Table::set(const std::string& section, const std::string& key, const std::string& raw) {
  sections_[section][key] = raw;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

}  // namespace dress::toml
