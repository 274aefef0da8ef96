// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_CONFIG_JSON_IO_HPP_
#define MOEUP_CONFIG_JSON_IO_HPP_

#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "moeup/core/error.hpp"

namespace moeup {

using Json = nlohmann::json;

// Reads the keys of one JSON object and rejects anything it was not asked
// about. Missing keys keep the caller's defaults.
class JsonSection {
 public:
  JsonSection(const Json& object, std::string name)
      : object_(object), name_(std::move(name)) {
    if (!object_.is_object()) {
      fail(ErrorCode::kConfig, "section '" + name_ + "' must be an object");
    }
  }

  bool has(const char* key) const { return object_.contains(key); }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end()) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_unsigned()) {
        fail(ErrorCode::kConfig, name_ + "." + key + " must be a non-negative integer");
      }
    }
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kConfig, name_ + "." + key + ": " + e.what());
    }
  }

  const Json* raw(const char* key) {
    seen_.insert(key);
    auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!seen_.count(it.key())) {
        fail(ErrorCode::kConfig, "unknown key '" + it.key() + "' in section '" +
                                     name_ + "'");
      }
    }
  }

  const std::string& name() const { return name_; }

 private:
  const Json& object_;
  std::string name_;
  std::set<std::string> seen_;
};

// A layer selection: "all" (std::nullopt) or a list of indices.
inline std::optional<std::vector<std::size_t>> parse_layer_set(const Json& j,
                                                               const std::string& where) {
  if (j.is_string() && j.get<std::string>() == "all") return std::nullopt;
  if (!j.is_array()) fail(ErrorCode::kConfig, where + " must be \"all\" or a list of layer indices");
  std::vector<std::size_t> out;
  for (const Json& v : j) {
    if (!v.is_number_unsigned()) {
      fail(ErrorCode::kConfig, where + " entries must be non-negative integers");
    }
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

}  // namespace moeup

#endif  // MOEUP_CONFIG_JSON_IO_HPP_
