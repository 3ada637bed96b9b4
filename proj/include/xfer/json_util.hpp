// Copyright 2026 The xfer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef XFER_JSON_UTIL_HPP_
#define XFER_JSON_UTIL_HPP_

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "xfer/error.hpp"

namespace xfer {

inline void require_object(const nlohmann::json& j, std::string_view context) {
  if (!j.is_object()) throw ConfigError(std::string(context) + " must be a JSON object");
}

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                                std::string_view context) {
  require_object(j, context);
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw ConfigError(std::string(context) + ": unknown key '" + item.key() + "'");
    }
  }
}

// j[key] converted to T, or `fallback` if absent. Type errors name the key.
template <typename T>
T get_or(const nlohmann::json& j, const char* key, const T& fallback, std::string_view context) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(context) + ": bad value for '" + key + "': " + it->dump());
  }
}

}  // namespace xfer

#endif  // XFER_JSON_UTIL_HPP_
