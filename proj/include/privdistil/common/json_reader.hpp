#pragma once

#include <set>
#include <string>
#include <utility>

#include <json.hpp>

#include "privdistil/common/error.hpp"

namespace privdistil {

/// Strict reader over a JSON object: every accessed key is recorded, `finish()` rejects
/// keys that were never read, and every error names the dotted path of the field.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  const std::string& path() const { return path_; }
  std::string field_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return obj_.contains(key); }

  template <typename T>
  T required(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) throw ConfigError("missing required field \"" + field_path(key) + "\"");
    return convert<T>(obj_.at(key), key);
  }

  template <typename T>
  T optional(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!obj_.contains(key)) return fallback;
    return convert<T>(obj_.at(key), key);
  }

  /// Nested object reader; the caller must call finish() on it.
  JsonReader child(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) throw ConfigError("missing required field \"" + field_path(key) + "\"");
    return JsonReader(obj_.at(key), field_path(key));
  }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) throw ConfigError("missing required field \"" + field_path(key) + "\"");
    return obj_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown field \"" + field_path(key) + "\"");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  template <typename T>
  T convert(const nlohmann::json& v, const std::string& key) const {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("field \"" + field_path(key) + "\" has the wrong type");
    }
  }

  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace privdistil
