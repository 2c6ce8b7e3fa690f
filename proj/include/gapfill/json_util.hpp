#pragma once

// Strict reading of JSON configuration objects: every key must be consumed,
// and type mismatches or unknown keys raise ConfigError naming the key.

#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "gapfill/errors.hpp"

namespace gapfill::json_util {

class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string context) : j_(j), ctx_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(ctx_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  /// Assigns `out` when `key` is present; leaves it untouched otherwise.
  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(key, "a boolean");
      } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) fail(key, "a non-negative integer");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) fail(key, "an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) fail(key, "a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(key, "a string");
      }
      out = v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ctx_ + "." + key + ": " + e.what());
    }
  }

  /// Sub-object for `key` (must be present when `required`); null when absent.
  const nlohmann::json* child(const std::string& key, bool required = false) {
    seen_.push_back(key);
    if (!j_.contains(key)) {
      if (required) throw ConfigError(ctx_ + ": missing key '" + key + "'");
      return nullptr;
    }
    return &j_.at(key);
  }

  /// Throws on any key that was never requested.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      bool known = false;
      for (const auto& s : seen_) known = known || s == key;
      if (!known) throw ConfigError(ctx_ + ": unknown key '" + key + "'");
    }
  }

  const std::string& context() const { return ctx_; }

 private:
  [[noreturn]] void fail(const std::string& key, const char* what) const {
    throw ConfigError(ctx_ + "." + key + ": expected " + what);
  }

  const nlohmann::json& j_;
  std::string ctx_;
  std::vector<std::string> seen_;
};

}  // namespace gapfill::json_util
