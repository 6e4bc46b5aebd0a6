#pragma once

#include <set>
#include <string>

#include "json.hpp"

#include "gcn/errors.hpp"

namespace gcn {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

/// Strict reader for one JSON object: every key must be consumed, and type
/// errors are reported with the dotted key path.
class ObjectReader {
public:
  ObjectReader(const Json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return object_.contains(key); }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json& raw(const std::string& key) {
    if (!object_.contains(key)) throw ConfigError("missing key '" + path(key) + "'");
    used_.insert(key);
    return object_.at(key);
  }

  template <typename T>
  T required(const std::string& key) {
    return convert<T>(raw(key), key);
  }

  template <typename T>
  T optional(const std::string& key, T fallback) {
    if (!object_.contains(key)) return fallback;
    return convert<T>(raw(key), key);
  }

  /// Throws on keys that were never read.
  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown key '" + path(it.key()) + "'");
  }

private:
  template <typename T>
  T convert(const Json& value, const std::string& key) const {
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!value.is_number_integer()) throw ConfigError("bad value for '" + path(key) + "': expected an integer");
    }
    try {
      return value.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for '" + path(key) + "': " + e.what());
    }
  }

  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const Json& object_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace gcn
