// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include "error.hpp"
#include "json.hpp"

namespace cmcl::jsonutil {

using json = nlohmann::ordered_json;

inline void require_object(const json& obj, std::string_view where, ErrorCode code) {
  if (!obj.is_object()) throw Error(code, std::string(where) + " must be a JSON object");
}

inline void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                                std::string_view where, ErrorCode code) {
  require_object(obj, where, code);
  for (const auto& item : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw Error(code, "unknown key '" + item.key() + "' in " + std::string(where));
    }
  }
}

/// Overwrites `out` when `key` is present; type errors become `code`.
template <typename T>
void read_optional(const json& obj, const char* key, T& out, ErrorCode code) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw Error(code, std::string("key '") + key + "': " + e.what());
  }
}

}  // namespace cmcl::jsonutil
