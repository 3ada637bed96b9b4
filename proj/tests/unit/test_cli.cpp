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

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "support/tempdir.hpp"
#include "xfer/cli.hpp"
#include "xfer/error.hpp"

using namespace xfer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char ch : s) n += ch == '\n';
  return n;
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json dataset() {
  return {{"synthetic", {{"kind", "vector"}, {"dims", 16}, {"num_samples", 1500}, {"separation", 4.5}, {"seed", 5}}}};
}

json mlp(std::size_t depth, std::size_t width) {
  return {{"family", "mlp"}, {"depth", depth}, {"width", width}, {"input_shape", {16}}, {"num_classes", 10}};
}

json zoo_config(std::size_t models) {
  const std::vector<std::pair<std::size_t, std::size_t>> shapes{{1, 0}, {2, 8}, {2, 16}, {2, 32}, {3, 32}, {3, 64}};
  json list = json::array();
  for (std::size_t i = 0; i < models; ++i)
    list.push_back({{"name", "m" + std::to_string(i)}, {"spec", mlp(shapes[i].first, shapes[i].second)}, {"seed", i + 1}});
  return {{"seed", 3}, {"dataset", dataset()}, {"zoo", {{"train", {{"epochs", 4}}}, {"models", list}}}};
}

// Six-model zoo shared by the tests below.
struct Zoo {
  testing::TempDir dir;
  fs::path manifest;
  Zoo() {
    write(dir.path() / "zoo.json", zoo_config(6).dump());
    const auto r = run_cli({"zoo", "--config", (dir.path() / "zoo.json").string(), "--out",
                            (dir.path() / "zoo").string(), "--jobs", "2"});
    REQUIRE(r.code == cli::kExitOk);
    manifest = dir.path() / "zoo" / "manifest.json";
  }
};

const Zoo& zoo() {
  static const Zoo z;
  return z;
}

json base() { return {{"seed", 3}, {"dataset", dataset()}, {"zoo", {{"manifest", zoo().manifest.string()}}}}; }

}  // namespace

TEST_CASE("malformed JSON reports line and column") {
  testing::TempDir dir;
  write(dir.path() / "bad.json", "{\n  \"seed\": 1,\n  \"dataset\": {oops}\n}\n");
  const auto r = run_cli({"zoo", "--config", (dir.path() / "bad.json").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("bad.json:3:15") != std::string::npos);
  CHECK_THROWS_AS(cli::parse_json_text("[1, 2", "x"), ConfigError);
  CHECK(cli::parse_json_text("[1, 2]", "x") == json::array({1, 2}));
}

TEST_CASE("config validation") {
  cli::Options opts;
  auto raw = zoo_config(2);
  raw["colour"] = "blue";
  CHECK_THROWS_AS(cli::resolve_config("zoo", raw, opts), ConfigError);
  raw = zoo_config(2);
  raw["zoo"]["models"][0]["spec"]["depht"] = 2;
  CHECK_THROWS_AS(cli::resolve_config("zoo", raw, opts), ConfigError);
  CHECK_THROWS_AS(cli::resolve_config("zoo", zoo_config(1), opts), ConfigError);
  raw = zoo_config(2);
  raw["zoo"]["models"][1]["name"] = "m0";
  CHECK_THROWS_AS(cli::resolve_config("zoo", raw, opts), ConfigError);
  raw = zoo_config(2);
  raw["dataset"]["val_fraction"] = 1.5;
  CHECK_THROWS_AS(cli::resolve_config("zoo", raw, opts), ConfigError);
  CHECK_THROWS_AS(cli::resolve_config("flips", {{"dataset", dataset()}}, opts), ConfigError);
  CHECK_THROWS_AS(cli::resolve_config("train", zoo_config(2), opts), ConfigError);
}

TEST_CASE("resolution fills defaults and is idempotent") {
  cli::Options opts;
  opts.seed = 9;
  opts.out = "elsewhere";
  json raw = base();
  raw["transfer"] = {{"student", "m0"}, {"teacher", "m5"}, {"hyperparams", {{"epochs", 1}}}};
  const auto resolved = cli::resolve_config("transfer", raw, opts);
  CHECK(resolved.at("seed") == 9);
  CHECK(resolved.at("output") == "elsewhere");
  CHECK(resolved.at("transfer").at("method") == "kl_dp_sup");
  const auto& hp = resolved.at("transfer").at("method_hyperparams").at("kl_dp_sup");
  CHECK(hp.at("epochs") == 1);
  CHECK(hp.at("lr") == 1e-4);
  CHECK(hp.at("seed") == 9);
  CHECK(cli::resolve_config("transfer", resolved, cli::Options{}) == resolved);

  json sweep = base();
  sweep["output"] = "sweep";
  const auto s = cli::resolve_config("sweep", sweep, cli::Options{});
  CHECK(s.at("transfer").at("methods") == json::array({"kl", "kl_dp_sup"}));
  CHECK(cli::resolve_config("sweep", s, cli::Options{}) == s);
}

TEST_CASE("zoo command") {
  testing::TempDir dir;
  write(dir.path() / "zoo.json", zoo_config(2).dump());
  const auto r = run_cli({"zoo", "--config", (dir.path() / "zoo.json").string(), "--out",
                          (dir.path() / "out").string(), "--json"});
  REQUIRE(r.code == cli::kExitOk);
  const auto manifest = json::parse(slurp(dir.path() / "out" / "manifest.json"));
  CHECK(manifest.at("entries").size() == 2);
  CHECK(json::parse(r.out) == manifest);
  CHECK(fs::exists(dir.path() / "out" / "resolved_config.json"));

  auto diverge = zoo_config(2);
  diverge["zoo"]["models"][1]["train"] = {{"lr", 1e200}};
  write(dir.path() / "bad.json", diverge.dump());
  CHECK(run_cli({"zoo", "--config", (dir.path() / "bad.json").string(), "--out", (dir.path() / "bad").string()}).code ==
        cli::kExitRuntime);
}

TEST_CASE("flips command covers every ordered pair") {
  testing::TempDir dir;
  json cfg = base();
  cfg["output"] = (dir.path() / "flips").string();
  write(dir.path() / "flips.json", cfg.dump());
  const auto r = run_cli({"flips", "--config", (dir.path() / "flips.json").string()});
  REQUIRE(r.code == cli::kExitOk);
  const auto flips = json::parse(slurp(dir.path() / "flips" / "flips.json"));
  CHECK(flips.at("pairs").size() == 30);
  CHECK(count_lines(slurp(dir.path() / "flips" / "entropy_vs_delta_acc.csv")) == 31);
  CHECK(count_lines(slurp(dir.path() / "flips" / "per_class_flips.csv")) > 30);
}

TEST_CASE("transfer reruns are byte-identical") {
  testing::TempDir dir;
  json cfg = base();
  cfg["transfer"] = {{"student", "m1"}, {"teacher", "m5"}, {"hyperparams", {{"epochs", 2}, {"lr", 0.01}}}};
  write(dir.path() / "t.json", cfg.dump());
  const auto first = dir.path() / "first";
  REQUIRE(run_cli({"transfer", "--config", (dir.path() / "t.json").string(), "--out", first.string()}).code ==
          cli::kExitOk);
  const auto second = dir.path() / "second";
  REQUIRE(run_cli({"transfer", "--config", (first / "resolved_config.json").string(), "--out", second.string()})
              .code == cli::kExitOk);
  for (const char* f : {"report.json", "per_epoch.csv"}) {
    CAPTURE(f);
    CHECK(slurp(first / f) == slurp(second / f));
  }
  CHECK(slurp(first / "student.xfk") == slurp(second / "student.xfk"));
  CHECK(count_lines(slurp(first / "per_epoch.csv")) == 3);

  cfg["transfer"]["plan"] = {{"mode", "sequential"}, {"teachers", {"m4", "m5"}}};
  cfg["transfer"].erase("teacher");
  write(dir.path() / "p.json", cfg.dump());
  REQUIRE(run_cli({"transfer", "--config", (dir.path() / "p.json").string(), "--out", (dir.path() / "p").string()})
              .code == cli::kExitOk);
  CHECK(count_lines(slurp(dir.path() / "p" / "per_epoch.csv")) == 5);

  cfg["transfer"]["method"] = "distill";
  write(dir.path() / "m.json", cfg.dump());
  const auto bad =
      run_cli({"transfer", "--config", (dir.path() / "m.json").string(), "--out", (dir.path() / "m").string()});
  CHECK(bad.code == cli::kExitConfig);
  CHECK(bad.err.find("kl_dp_unsup") != std::string::npos);
}

TEST_CASE("sweep writes one row per method and pair") {
  testing::TempDir dir;
  json cfg = base();
  cfg["transfer"] = {{"hyperparams", {{"epochs", 1}, {"lr", 0.01}}}, {"methods", {"kl", "kl_dp_sup", "xe_kl"}}};
  write(dir.path() / "s.json", cfg.dump());
  const auto out = dir.path() / "sweep";
  REQUIRE(run_cli({"sweep", "--config", (dir.path() / "s.json").string(), "--out", out.string(), "--jobs", "2"}).code ==
          cli::kExitOk);
  CHECK(count_lines(slurp(out / "sweep.csv")) == 1 + 3 * 30);
  const auto summary = json::parse(slurp(out / "summary.json"));
  for (const char* m : {"kl", "kl_dp_sup", "xe_kl"}) CHECK(summary.at("methods").at(m).contains("success_rate"));

  const auto again = dir.path() / "again";
  REQUIRE(run_cli({"sweep", "--config", (out / "resolved_config.json").string(), "--out", again.string()}).code ==
          cli::kExitOk);
  CHECK(slurp(out / "sweep.csv") == slurp(again / "sweep.csv"));
  CHECK(slurp(out / "summary.json") == slurp(again / "summary.json"));

  cfg["transfer"]["pairs"] = {{"min_delta_acc", 0.9}};
  write(dir.path() / "empty.json", cfg.dump());
  const auto r = run_cli({"sweep", "--config", (dir.path() / "empty.json").string(), "--out", (dir.path() / "e").string()});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("no pairs matched") != std::string::npos);
}

TEST_CASE("command line errors") {
  CHECK(run_cli({}).code == cli::kExitConfig);
  CHECK(run_cli({"zoo"}).code == cli::kExitConfig);
  CHECK(run_cli({"zoo", "--config", "/nonexistent/x.json"}).code == cli::kExitConfig);
}
