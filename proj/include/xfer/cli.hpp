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

#ifndef XFER_CLI_HPP_
#define XFER_CLI_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfer/data.hpp"

namespace xfer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct Options {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool json = false;
};

// Parses JSON text; syntax errors become a ConfigError naming `source` with
// the line and column of the offending byte.
nlohmann::json parse_json_text(const std::string& text, const std::string& source);

// Validates a run config for `command` and fills every default. Flags in
// `opts` override the document's `seed` and `output`.
nlohmann::json resolve_config(const std::string& command, const nlohmann::json& raw, const Options& opts);

struct Splits {
  Dataset zoo_train;
  Dataset transfer;
  Dataset val;
};

// Builds the dataset section of a resolved config and splits it.
Splits build_splits(const nlohmann::json& resolved);

// Each command writes resolved_config.json and its outputs under the resolved
// output directory and returns an exit code.
int cmd_zoo(const nlohmann::json& resolved, const Options& opts, std::ostream& out);
int cmd_flips(const nlohmann::json& resolved, const Options& opts, std::ostream& out);
int cmd_transfer(const nlohmann::json& resolved, const Options& opts, std::ostream& out);
int cmd_sweep(const nlohmann::json& resolved, const Options& opts, std::ostream& out);

// Full command line, argv[0] excluded: `<command> --config <path> [flags]`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xfer::cli

#endif  // XFER_CLI_HPP_
