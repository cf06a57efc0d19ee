#pragma once

#include <set>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "tapd/error.hpp"

namespace tapd::train {

using Json = nlohmann::json;

// Reads keys from one JSON object, rejecting unknown and mistyped entries.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j.is_object()) throw ConfigError(what_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) fail(key, "a boolean");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) fail(key, "a number");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) fail(key, "a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) fail(key, "an integer");
    }
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(key, "a value of the expected type");
    }
  }

  const std::string& what() const { return what_; }

  const Json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(what_ + ": unknown key '" + k + "'");
    }
  }

 private:
  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw ConfigError(what_ + "." + key + ": expected " + expected);
  }

  const Json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

}  // namespace tapd::train
