#pragma once

#include <map>
#include <string>
#include <vector>

#include "dress/common.hpp"

namespace dress::toml {

/// Minimal TOML-style document: [section] headers, key = value pairs,
/// # comments. Values: integers, floats, booleans, double-quoted strings,
/// and flat arrays of those. Enough for run configs and scenario files;
/// nested tables and dates are out of scope.
class Table {
 public:
  static Table parse(const std::string& text);
  static Table parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  long long get_int(const std::string& section, const std::string& key,
                    long long fallback) const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<std::string> get_string_array(const std::string& section,
                                            const std::string& key) const;
  std::vector<double> get_double_array(const std::string& section,
                                       const std::string& key) const;

  void set(const std::string& section, const std::string& key, const std::string& raw);

 private:
  const std::string* find(const std::string& section, const std::string& key) const;
  // raw token text per (section, key); parsing to a type happens on access
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

std::string quote(const std::string& s);

}  // namespace dress::toml
