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

#include "xfer/zoo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "xfer/analysis.hpp"
#include "xfer/json_util.hpp"
#include "xfer/objectives.hpp"
#include "xfer/sgd.hpp"

namespace xfer {

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.lr},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"data_seed", cfg.data_seed},
          {"augment_noise", cfg.augment_noise},
          {"augment_shift", cfg.augment_shift}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  constexpr std::string_view ctx = "train config";
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "lr", "momentum", "weight_decay", "data_seed",
                       "augment_noise", "augment_shift"},
                      ctx);
  TrainConfig cfg;
  cfg.epochs = get_or(j, "epochs", cfg.epochs, ctx);
  cfg.batch_size = get_or(j, "batch_size", cfg.batch_size, ctx);
  cfg.lr = get_or(j, "lr", cfg.lr, ctx);
  cfg.momentum = get_or(j, "momentum", cfg.momentum, ctx);
  cfg.weight_decay = get_or(j, "weight_decay", cfg.weight_decay, ctx);
  cfg.data_seed = get_or(j, "data_seed", cfg.data_seed, ctx);
  cfg.augment_noise = get_or(j, "augment_noise", cfg.augment_noise, ctx);
  cfg.augment_shift = get_or(j, "augment_shift", cfg.augment_shift, ctx);
  if (cfg.batch_size == 0) throw ConfigError("train config: batch_size must be positive");
  if (!(cfg.lr >= 0.0) || !(cfg.momentum >= 0.0 && cfg.momentum < 1.0) || !(cfg.weight_decay >= 0.0) ||
      !(cfg.augment_noise >= 0.0)) {
    throw ConfigError("train config: lr, weight_decay, augment_noise must be >= 0 and momentum in [0, 1)");
  }
  return cfg;
}

TrainOutcome train_model(const ModelSpec& spec, std::uint64_t init_seed, const TrainConfig& cfg,
                         const Dataset& train, const Dataset& val) {
  if (train.num_classes != spec.num_classes || train.sample_shape() != spec.input_shape) {
    throw ConfigError("train_model: dataset does not match the model spec " + to_string(spec.input_shape));
  }
  if (cfg.batch_size == 0) throw ConfigError("train_model: batch_size must be positive");
  TrainOutcome out;
  out.checkpoint = build(spec, init_seed);
  const ModelSpec& resolved = out.checkpoint.spec;
  auto params = parameter_values(out.checkpoint);
  std::vector<std::string> names;
  for (const auto& p : out.checkpoint.params) names.push_back(p.name);
  SgdState opt{cfg.lr, cfg.momentum, cfg.weight_decay, {}};

  const std::size_t n = train.size();
  std::uint64_t step = 0;
  try {
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto order = epoch_order(n, cfg.data_seed, epoch);
      double loss_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
        const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, n - start));
        Tensor x = train.batch(idx);
        Rng aug = Rng::derive(cfg.data_seed, 0xa9, step);
        if (cfg.augment_noise > 0.0 || cfg.augment_shift) augment(x, cfg.augment_noise, cfg.augment_shift, aug);
        std::vector<int> y;
        y.reserve(idx.size());
        for (auto i : idx) y.push_back(train.labels[i]);

        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const auto& p : params) vars.push_back(tape.parameter(p));
        Rng drop = Rng::derive(init_seed, 0xd0, step);
        const auto fwd = forward(resolved, vars, tape.constant(std::move(x)), Mode::train, &drop);
        const auto loss = cross_entropy(fwd.logits, y);
        const double value = loss.value()[0];
        if (!std::isfinite(value)) {
          throw NumericError(fmt::format("non-finite training loss at epoch {} step {}", epoch, step));
        }
        tape.backward(loss);
        std::vector<Tensor> grads;
        for (const auto& v : vars) grads.push_back(tape.grad(v));
        sgd_step(params, grads, opt, names);
        loss_sum += value;
        ++batches;
      }
      out.epoch_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
    }
  } catch (const NumericError& e) {
    out.failed = true;
    out.error = e.what();
  }
  for (std::size_t i = 0; i < params.size(); ++i) out.checkpoint.params[i].value = std::move(params[i]);
  if (!out.failed) {
    out.val_accuracy = accuracy(predict_logits(out.checkpoint, val.inputs), val.labels);
    out.checkpoint.meta["val_accuracy"] = out.val_accuracy;
  }
  out.checkpoint.meta["train"] = to_json(cfg);
  return out;
}

namespace {

nlohmann::json entry_json(const ZooEntry& e) {
  nlohmann::json j = {{"name", e.name},
                      {"checkpoint", e.checkpoint},
                      {"digest", e.digest},
                      {"spec", to_json(e.spec)},
                      {"train", to_json(e.train)},
                      {"seed", e.seed},
                      {"status", e.failed ? "failed" : "ok"}};
  if (e.failed) {
    j["val_accuracy"] = nullptr;
    j["error"] = e.error;
  } else {
    j["val_accuracy"] = e.val_accuracy;
  }
  return j;
}

ZooEntry entry_from_json(const nlohmann::json& j) {
  constexpr std::string_view ctx = "manifest entry";
  reject_unknown_keys(j, {"name", "checkpoint", "digest", "spec", "train", "seed", "status", "val_accuracy", "error"},
                      ctx);
  ZooEntry e;
  try {
    e.name = j.at("name").get<std::string>();
    e.checkpoint = j.at("checkpoint").get<std::string>();
    e.digest = j.at("digest").get<std::string>();
    e.spec = spec_from_json(j.at("spec"));
    e.train = train_config_from_json(j.at("train"));
    e.seed = j.at("seed").get<std::uint64_t>();
    e.failed = j.at("status").get<std::string>() == "failed";
    if (e.failed) {
      e.error = j.value("error", "");
    } else {
      e.val_accuracy = j.at("val_accuracy").get<double>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("manifest entry: ") + ex.what());
  }
  if (!e.failed && !(e.val_accuracy >= 0.0 && e.val_accuracy <= 1.0)) {
    throw ConfigError("manifest entry " + e.name + ": val_accuracy outside [0, 1]");
  }
  return e;
}

void sort_entries(std::vector<ZooEntry>& entries) {
  std::stable_sort(entries.begin(), entries.end(), [](const ZooEntry& a, const ZooEntry& b) {
    if (a.failed != b.failed) return !a.failed;
    if (a.spec.family != b.spec.family) return a.spec.family < b.spec.family;
    return a.val_accuracy < b.val_accuracy;
  });
}

}  // namespace

Checkpoint ZooManifest::load(const ZooEntry& entry) const {
  if (entry.failed) throw Error("zoo entry " + entry.name + " failed to train and has no checkpoint");
  return xfer::load(checkpoint_path(entry));
}

std::vector<const ZooEntry*> ZooManifest::usable() const {
  std::vector<const ZooEntry*> out;
  for (const auto& e : entries)
    if (!e.failed) out.push_back(&e);
  return out;
}

ZooManifest pretrain_zoo(const std::vector<ZooRequest>& requests, const Dataset& train, const Dataset& val,
                         const std::filesystem::path& out_dir, std::size_t jobs) {
  if (requests.size() < 2) throw ConfigError("pretrain_zoo: need at least 2 model specs");
  validate(train);
  validate(val);
  std::filesystem::create_directories(out_dir);

  std::vector<ZooEntry> entries(requests.size());
  std::vector<std::exception_ptr> errors(requests.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      try {
        const auto& req = requests[i];
        auto outcome = train_model(req.spec, req.seed, req.train, train, val);
        ZooEntry& e = entries[i];
        e.name = req.name.empty() ? fmt::format("model{:02}", i) : req.name;
        e.spec = outcome.checkpoint.spec;
        e.digest = digest(e.spec);
        e.train = req.train;
        e.seed = req.seed;
        e.failed = outcome.failed;
        e.error = outcome.error;
        if (!outcome.failed) {
          e.val_accuracy = outcome.val_accuracy;
          e.checkpoint = fmt::format("{:02}_{}.xfk", i, e.name);
          outcome.checkpoint.meta["name"] = e.name;
          save(outcome.checkpoint, out_dir / e.checkpoint);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, requests.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  ZooManifest manifest{std::move(entries), out_dir};
  sort_entries(manifest.entries);
  save_manifest(manifest);
  return manifest;
}

nlohmann::json to_json(const ZooManifest& manifest) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : manifest.entries) entries.push_back(entry_json(e));
  return {{"version", 1}, {"entries", std::move(entries)}};
}

void save_manifest(const ZooManifest& manifest) {
  const auto path = manifest.root / "manifest.json";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << to_json(manifest).dump(2) << '\n';
  if (!f) throw Error("write failed: " + path.string());
}

ZooManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  reject_unknown_keys(j, {"version", "entries"}, "manifest");
  if (j.value("version", 0) != 1) throw ConfigError("manifest: unsupported version");
  ZooManifest manifest;
  manifest.root = path.parent_path();
  for (const auto& item : j.at("entries")) manifest.entries.push_back(entry_from_json(item));
  for (const auto& e : manifest.entries) {
    if (!e.failed && !std::filesystem::exists(manifest.checkpoint_path(e))) {
      throw Error("missing checkpoint " + manifest.checkpoint_path(e).string());
    }
  }
  return manifest;
}

nlohmann::json to_json(const PairFilter& filter) {
  nlohmann::json j = nlohmann::json::object();
  if (filter.min_delta_acc) j["min_delta_acc"] = *filter.min_delta_acc;
  if (filter.max_delta_acc) j["max_delta_acc"] = *filter.max_delta_acc;
  if (filter.teacher_family) j["teacher_family"] = to_string(*filter.teacher_family);
  if (filter.student_family) j["student_family"] = to_string(*filter.student_family);
  return j;
}

PairFilter pair_filter_from_json(const nlohmann::json& j) {
  constexpr std::string_view ctx = "pair filter";
  reject_unknown_keys(j, {"min_delta_acc", "max_delta_acc", "teacher_family", "student_family"}, ctx);
  PairFilter f;
  if (j.contains("min_delta_acc")) f.min_delta_acc = get_or(j, "min_delta_acc", 0.0, ctx);
  if (j.contains("max_delta_acc")) f.max_delta_acc = get_or(j, "max_delta_acc", 0.0, ctx);
  if (j.contains("teacher_family")) f.teacher_family = family_from_string(get_or<std::string>(j, "teacher_family", "", ctx));
  if (j.contains("student_family")) f.student_family = family_from_string(get_or<std::string>(j, "student_family", "", ctx));
  return f;
}

std::vector<ModelPair> pair_grid(const ZooManifest& manifest, const PairFilter& filter) {
  const auto& es = manifest.entries;
  std::vector<ModelPair> out;
  for (std::size_t t = 0; t < es.size(); ++t) {
    if (es[t].failed) continue;
    if (filter.teacher_family && es[t].spec.family != *filter.teacher_family) continue;
    for (std::size_t s = 0; s < es.size(); ++s) {
      if (s == t || es[s].failed) continue;
      if (filter.student_family && es[s].spec.family != *filter.student_family) continue;
      const double delta = es[t].val_accuracy - es[s].val_accuracy;
      if (filter.min_delta_acc && delta < *filter.min_delta_acc) continue;
      if (filter.max_delta_acc && !(delta < *filter.max_delta_acc)) continue;
      out.push_back({t, s, delta});
    }
  }
  return out;
}

}  // namespace xfer
