#pragma once

// Small helpers for schema-checked JSON reading. Every error names the key path.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfergodic/errors.hpp"

namespace mfergodic::detail {

using nlohmann::json;

// Non-negative integer, whether parsed (unsigned) or built in code (signed).
inline bool is_index(const json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

inline void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
}

inline void reject_unknown_keys(const json& j, const std::string& path,
                                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(path + "." + it.key() + ": unknown key");
  }
}

inline double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path + ": expected a number");
  return j.get<double>();
}

inline double number_or(const json& j, const char* key, double fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  return get_number(j.at(key), path + "." + key);
}

inline std::vector<double> get_vector(const json& j, const std::string& path) {
  if (j.is_number()) return {j.get<double>()};
  if (!j.is_array()) throw ConfigError(path + ": expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(get_number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

/// Row-major rows x cols. A bare number is accepted for 1 x 1.
inline std::vector<double> get_matrix(const json& j, std::size_t rows, std::size_t cols,
                                      const std::string& path) {
  if (j.is_number()) {
    if (rows != 1 || cols != 1) throw ConfigError(path + ": scalar given for a matrix");
    return {j.get<double>()};
  }
  if (!j.is_array() || j.size() != rows)
    throw ConfigError(path + ": expected " + std::to_string(rows) + " rows");
  std::vector<double> out;
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = get_vector(j[r], path + "[" + std::to_string(r) + "]");
    if (row.size() != cols)
      throw ConfigError(path + "[" + std::to_string(r) + "]: expected " + std::to_string(cols) +
                        " columns");
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

inline json matrix_to_json(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
  json out = json::array();
  for (std::size_t r = 0; r < rows; ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < cols; ++c) row.push_back(m[r * cols + c]);
    out.push_back(row);
  }
  return out;
}

}  // namespace mfergodic::detail
