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

#include "xfer/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "xfer/analysis.hpp"
#include "xfer/json_util.hpp"
#include "xfer/multiteacher.hpp"
#include "xfer/transfer.hpp"
#include "xfer/zoo.hpp"

namespace xfer::cli {

using nlohmann::json;
namespace fs = std::filesystem;

json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is 1-based and points at the offending character.
    std::size_t line = 1, column = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::string detail = e.what();
    if (auto pos = detail.find("syntax error"); pos != std::string::npos) detail = detail.substr(pos);
    throw ConfigError(fmt::format("{}:{}:{}: malformed JSON: {}", source, line, column, detail));
  }
}

namespace {

// ---- config sections -------------------------------------------------------

json synthetic_to_json(const SyntheticConfig& c) {
  return {{"kind", c.kind == SyntheticConfig::Kind::image ? "image" : "vector"},
          {"num_classes", c.num_classes},
          {"num_samples", c.num_samples},
          {"dims", c.dims},
          {"image_size", c.image_size},
          {"modes_per_class", c.modes_per_class},
          {"label_noise", c.label_noise},
          {"separation", c.separation},
          {"noise_std", c.noise_std},
          {"seed", c.seed}};
}

SyntheticConfig synthetic_from_json(const json& j) {
  constexpr std::string_view ctx = "dataset.synthetic";
  reject_unknown_keys(j,
                      {"kind", "num_classes", "num_samples", "dims", "image_size", "modes_per_class",
                       "label_noise", "separation", "noise_std", "seed"},
                      ctx);
  SyntheticConfig c;
  const auto kind = get_or<std::string>(j, "kind", "vector", ctx);
  if (kind == "image") {
    c.kind = SyntheticConfig::Kind::image;
  } else if (kind != "vector") {
    throw ConfigError("dataset.synthetic: kind must be 'vector' or 'image'");
  }
  c.num_classes = get_or(j, "num_classes", c.num_classes, ctx);
  c.num_samples = get_or(j, "num_samples", c.num_samples, ctx);
  c.dims = get_or(j, "dims", c.dims, ctx);
  c.image_size = get_or(j, "image_size", c.image_size, ctx);
  c.modes_per_class = get_or(j, "modes_per_class", c.modes_per_class, ctx);
  c.label_noise = get_or(j, "label_noise", c.label_noise, ctx);
  c.separation = get_or(j, "separation", c.separation, ctx);
  c.noise_std = get_or(j, "noise_std", c.noise_std, ctx);
  c.seed = get_or(j, "seed", c.seed, ctx);
  return c;
}

json resolve_dataset(const json& raw) {
  constexpr std::string_view ctx = "dataset";
  reject_unknown_keys(raw, {"synthetic", "idx", "subsample", "val_fraction", "transfer_fraction"}, ctx);
  json out;
  const bool synthetic = raw.contains("synthetic"), idx = raw.contains("idx");
  if (synthetic == idx) throw ConfigError("dataset: give exactly one of 'synthetic' or 'idx'");
  if (synthetic) {
    out["synthetic"] = synthetic_to_json(synthetic_from_json(raw.at("synthetic")));
  } else {
    const auto& i = raw.at("idx");
    reject_unknown_keys(i, {"images", "labels"}, "dataset.idx");
    out["idx"] = {{"images", get_or<std::string>(i, "images", "", "dataset.idx")},
                  {"labels", get_or<std::string>(i, "labels", "", "dataset.idx")}};
    if (out["idx"]["images"].get<std::string>().empty() || out["idx"]["labels"].get<std::string>().empty()) {
      throw ConfigError("dataset.idx: 'images' and 'labels' paths are required");
    }
  }
  out["subsample"] = get_or(raw, "subsample", 1.0, ctx);
  out["val_fraction"] = get_or(raw, "val_fraction", 0.25, ctx);
  out["transfer_fraction"] = get_or(raw, "transfer_fraction", 0.5, ctx);
  for (const char* key : {"subsample", "val_fraction", "transfer_fraction"}) {
    const double v = out[key].get<double>();
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError(fmt::format("dataset: {} must lie in (0, 1]", key));
  }
  if (out["val_fraction"].get<double>() >= 1.0 || out["transfer_fraction"].get<double>() >= 1.0) {
    throw ConfigError("dataset: val_fraction and transfer_fraction must be below 1");
  }
  return out;
}

json resolve_zoo_models(const json& zoo) {
  const TrainConfig base = train_config_from_json(zoo.value("train", json::object()));
  if (!zoo.contains("models") || !zoo.at("models").is_array()) throw ConfigError("zoo: 'models' list is required");
  json models = json::array();
  std::size_t index = 0;
  for (const auto& m : zoo.at("models")) {
    constexpr std::string_view ctx = "zoo.models[]";
    reject_unknown_keys(m, {"name", "spec", "seed", "train"}, ctx);
    if (!m.contains("spec")) throw ConfigError("zoo.models[]: 'spec' is required");
    json train = to_json(base);
    if (m.contains("train")) {
      require_object(m.at("train"), "zoo.models[].train");
      for (const auto& item : m.at("train").items()) train[item.key()] = item.value();
    }
    models.push_back({{"name", get_or<std::string>(m, "name", fmt::format("model{:02}", index), ctx)},
                      {"spec", to_json(spec_from_json(m.at("spec")))},
                      {"seed", get_or<std::uint64_t>(m, "seed", index, ctx)},
                      {"train", to_json(train_config_from_json(train))}});
    ++index;
  }
  if (models.size() < 2) throw ConfigError("zoo: at least 2 models are required");
  std::vector<std::string> names;
  for (const auto& m : models) names.push_back(m.at("name").get<std::string>());
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) throw ConfigError("zoo: model names must be unique");
  return {{"train", to_json(base)}, {"models", std::move(models)}};
}

// Common `hyperparams` overrides apply to every method; `method_hyperparams`
// entries override per method.
json resolve_method_hyperparams(const json& transfer, const std::vector<Method>& methods) {
  const json common = transfer.value("hyperparams", json::object());
  const json specific = transfer.value("method_hyperparams", json::object());
  require_object(common, "transfer.hyperparams");
  require_object(specific, "transfer.method_hyperparams");
  for (const auto& item : specific.items()) method_from_string(item.key());
  json out = json::object();
  for (Method m : methods) {
    json merged = common;
    if (specific.contains(to_string(m))) {
      require_object(specific.at(to_string(m)), "transfer.method_hyperparams." + to_string(m));
      for (const auto& item : specific.at(to_string(m)).items()) merged[item.key()] = item.value();
    }
    out[to_string(m)] = to_json(hyperparams_from_json(merged, m));
  }
  return out;
}

std::vector<Method> methods_of(const json& list) {
  if (!list.is_array() || list.empty()) throw ConfigError("transfer.methods must be a non-empty list");
  std::vector<Method> out;
  for (const auto& m : list) {
    if (!m.is_string()) throw ConfigError("transfer.methods entries must be strings");
    const Method method = method_from_string(m.get<std::string>());
    if (std::find(out.begin(), out.end(), method) != out.end()) throw ConfigError("transfer.methods: duplicate method");
    out.push_back(method);
  }
  return out;
}

json resolve_transfer(const std::string& command, const json& raw, std::uint64_t seed) {
  constexpr std::string_view ctx = "transfer";
  reject_unknown_keys(raw,
                      {"method", "methods", "hyperparams", "method_hyperparams", "teacher", "student", "plan", "pairs",
                       "max_pairs", "bins"},
                      ctx);
  json out;
  json common = raw.value("hyperparams", json::object());
  require_object(common, "transfer.hyperparams");
  if (!common.contains("seed")) common["seed"] = seed;
  json with_seed = raw;
  with_seed["hyperparams"] = common;
  if (command == "transfer") {
    const Method method = method_from_string(get_or<std::string>(raw, "method", "kl_dp_sup", ctx));
    out["method"] = to_string(method);
    out["method_hyperparams"] = resolve_method_hyperparams(with_seed, {method});
    out["student"] = get_or<std::string>(raw, "student", "", ctx);
    if (out["student"].get<std::string>().empty()) throw ConfigError("transfer: 'student' is required");
    if (raw.contains("plan") == raw.contains("teacher")) throw ConfigError("transfer: give exactly one of 'teacher' or 'plan'");
    if (raw.contains("teacher")) {
      out["teacher"] = get_or<std::string>(raw, "teacher", "", ctx);
    } else {
      const auto& p = raw.at("plan");
      reject_unknown_keys(p, {"mode", "teachers", "order", "retain_original_reference"}, "transfer.plan");
      const auto mode = plan_mode_from_string(get_or<std::string>(p, "mode", "sequential", "transfer.plan"));
      const auto order = teacher_order_from_string(get_or<std::string>(p, "order", "ascending", "transfer.plan"));
      const auto teachers = get_or<std::vector<std::string>>(p, "teachers", {}, "transfer.plan");
      if (mode != PlanMode::sequential && teachers.empty()) throw ConfigError("transfer.plan: teachers list is empty");
      if (mode != PlanMode::sequential && !is_partitioned(method)) {
        throw ConfigError("transfer.plan: " + to_string(mode) + " needs method kl_dp_sup or kl_dp_unsup");
      }
      out["plan"] = {{"mode", to_string(mode)},
                     {"teachers", teachers},
                     {"order", to_string(order)},
                     {"retain_original_reference", get_or(p, "retain_original_reference", false, "transfer.plan")}};
    }
  } else {
    const auto methods = methods_of(raw.value("methods", json::array({"kl", "kl_dp_sup"})));
    json names = json::array();
    for (Method m : methods) names.push_back(to_string(m));
    out["methods"] = names;
    out["method_hyperparams"] = resolve_method_hyperparams(with_seed, methods);
    out["pairs"] = to_json(pair_filter_from_json(raw.value("pairs", json::object())));
    out["max_pairs"] = get_or<std::size_t>(raw, "max_pairs", 0, ctx);
    auto bins = get_or<std::vector<double>>(raw, "bins", {-1.0, -0.1, -0.05, 0.0, 0.05, 0.1, 1.0}, ctx);
    if (bins.size() < 2 || !std::is_sorted(bins.begin(), bins.end()) ||
        std::adjacent_find(bins.begin(), bins.end()) != bins.end()) {
      throw ConfigError("transfer.bins must be at least two strictly increasing edges");
    }
    out["bins"] = bins;
  }
  return out;
}

}  // namespace

json resolve_config(const std::string& command, const json& raw, const Options& opts) {
  static const std::vector<std::string> commands = {"zoo", "flips", "transfer", "sweep"};
  if (std::find(commands.begin(), commands.end(), command) == commands.end()) {
    throw ConfigError("unknown command '" + command + "' (valid: zoo, flips, transfer, sweep)");
  }
  reject_unknown_keys(raw, {"seed", "output", "dataset", "zoo", "analysis", "transfer"}, "config");
  json out;
  out["seed"] = opts.seed ? *opts.seed : get_or<std::uint64_t>(raw, "seed", 0, "config");
  out["output"] = opts.out ? opts.out->string() : get_or<std::string>(raw, "output", "", "config");
  if (out["output"].get<std::string>().empty()) throw ConfigError("config: output directory is required (--out)");
  if (!raw.contains("dataset")) throw ConfigError("config: 'dataset' section is required");
  out["dataset"] = resolve_dataset(raw.at("dataset"));

  const json zoo = raw.value("zoo", json::object());
  reject_unknown_keys(zoo, {"manifest", "train", "models"}, "zoo");
  if (command == "zoo") {
    out["zoo"] = resolve_zoo_models(zoo);
  } else {
    const auto manifest = get_or<std::string>(zoo, "manifest", "", "zoo");
    if (manifest.empty()) throw ConfigError("zoo.manifest path is required for " + command);
    out["zoo"] = {{"manifest", manifest}};
  }
  if (command == "flips") {
    const json analysis = raw.value("analysis", json::object());
    reject_unknown_keys(analysis, {"embeddings", "top_percent"}, "analysis");
    out["analysis"] = {{"embeddings", get_or<std::string>(analysis, "embeddings", "", "analysis")},
                       {"top_percent", get_or(analysis, "top_percent", 20.0, "analysis")}};
    const double p = out["analysis"]["top_percent"].get<double>();
    if (!(p > 0.0 && p <= 100.0)) throw ConfigError("analysis.top_percent must lie in (0, 100]");
  }
  if (command == "transfer" || command == "sweep") {
    out["transfer"] = resolve_transfer(command, raw.value("transfer", json::object()), out["seed"].get<std::uint64_t>());
  }
  return out;
}

Splits build_splits(const json& resolved) {
  const json& d = resolved.at("dataset");
  const auto seed = resolved.at("seed").get<std::uint64_t>();
  Dataset full = d.contains("synthetic")
                     ? generate_synthetic(synthetic_from_json(d.at("synthetic")))
                     : load_idx(d.at("idx").at("images").get<std::string>(), d.at("idx").at("labels").get<std::string>());
  const double sub = d.at("subsample").get<double>();
  if (sub < 1.0) full = stratified_subsample(full, sub, Rng::mix(seed ^ 0x5b));
  auto [rest, val] = stratified_split(full, d.at("val_fraction").get<double>(), Rng::mix(seed ^ 0x5c));
  auto [zoo_train, transfer] = stratified_split(rest, d.at("transfer_fraction").get<double>(), Rng::mix(seed ^ 0x5d));
  return {std::move(zoo_train), std::move(transfer), std::move(val)};
}

namespace {

// ---- output helpers ----------------------------------------------------------

fs::path output_dir(const json& resolved) { return resolved.at("output").get<std::string>(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void prepare_output(const json& resolved) {
  const auto dir = output_dir(resolved);
  fs::create_directories(dir);
  write_json(dir / "resolved_config.json", resolved);
}

std::string num(double v) { return fmt::format("{}", v); }
std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }
json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void emit(const Options& opts, std::ostream& out, const json& summary) {
  if (opts.json) out << summary.dump(2) << '\n';
}

struct LoadedZoo {
  ZooManifest manifest;
  std::vector<const ZooEntry*> entries;
  std::vector<Checkpoint> models;
  std::map<std::string, std::size_t> by_name;

  std::size_t index(const std::string& name) const {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("no trained zoo model named '" + name + "'");
    return it->second;
  }
};

LoadedZoo load_zoo(const json& resolved) {
  LoadedZoo z;
  z.manifest = load_manifest(resolved.at("zoo").at("manifest").get<std::string>());
  z.entries = z.manifest.usable();
  for (std::size_t i = 0; i < z.entries.size(); ++i) {
    const auto path = z.manifest.checkpoint_path(*z.entries[i]);
    if (!fs::exists(path)) throw Error("missing checkpoint " + path.string());
    z.models.push_back(load(path));
    z.by_name[z.entries[i]->name] = i;
  }
  return z;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first failure, by
// index, is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, n));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string epoch_rows(std::size_t stage, const std::vector<EpochRecord>& records) {
  std::string s;
  for (const auto& r : records) {
    s += fmt::format("{},{},{},{},{},{},{},{}\n", stage, r.epoch, num(r.train_loss), num(r.val_accuracy), num(r.gain),
                     num(r.loss), num(r.teacher_share), opt_num(r.fast_val_accuracy));
  }
  return s;
}

constexpr const char* kEpochHeader = "stage,epoch,train_loss,val_accuracy,gain,loss,teacher_share,fast_val_accuracy\n";

}  // namespace

// ---- commands ------------------------------------------------------------------

int cmd_zoo(const json& resolved, const Options& opts, std::ostream& out) {
  prepare_output(resolved);
  const auto splits = build_splits(resolved);
  std::vector<ZooRequest> requests;
  for (const auto& m : resolved.at("zoo").at("models")) {
    requests.push_back({m.at("name").get<std::string>(), spec_from_json(m.at("spec")), m.at("seed").get<std::uint64_t>(),
                        train_config_from_json(m.at("train"))});
  }
  std::cerr << fmt::format("training {} models on {} samples\n", requests.size(), splits.zoo_train.size());
  const auto manifest = pretrain_zoo(requests, splits.zoo_train, splits.val, output_dir(resolved), opts.jobs);
  emit(opts, out, to_json(manifest));
  std::size_t failed = 0;
  for (const auto& e : manifest.entries) {
    if (!e.failed) continue;
    ++failed;
    std::cerr << fmt::format("model {} failed: {}\n", e.name, e.error);
  }
  return failed ? kExitRuntime : kExitOk;
}

int cmd_flips(const json& resolved, const Options& opts, std::ostream& out) {
  prepare_output(resolved);
  const auto splits = build_splits(resolved);
  const auto zoo = load_zoo(resolved);
  const auto& val = splits.val;
  const std::size_t m = zoo.models.size();
  if (m < 2) throw ConfigError("flips: the manifest has fewer than 2 trained models");
  std::vector<Tensor> logits(m);
  std::vector<double> acc(m);
  parallel_for(m, opts.jobs, [&](std::size_t i) {
    logits[i] = predict_logits(zoo.models[i], val.inputs);
    acc[i] = accuracy(logits[i], val.labels);
  });

  const auto& analysis = resolved.at("analysis");
  const double top_percent = analysis.at("top_percent").get<double>();
  std::optional<Tensor> embeddings;
  if (const auto path = analysis.at("embeddings").get<std::string>(); !path.empty()) {
    embeddings = load_embeddings_csv(path);
    if (embeddings->rows() != val.num_classes) {
      throw ConfigError(fmt::format("analysis.embeddings: {} rows for {} classes", embeddings->rows(), val.num_classes));
    }
  }

  json pairs = json::array();
  std::string per_class = "teacher,student,rank,class,count,share\n";
  std::string entropy_csv = "teacher,student,delta_acc,rho_pos,entropy,semantic_similarity\n";
  for (std::size_t t = 0; t < m; ++t) {
    for (std::size_t s = 0; s < m; ++s) {
      if (s == t) continue;
      const auto& tn = zoo.entries[t]->name;
      const auto& sn = zoo.entries[s]->name;
      const auto stats = positive_flips(logits[t], logits[s], val.labels);
      std::optional<double> entropy, similarity;
      json top = json::array();
      if (stats.total() > 0) {
        entropy = flip_entropy(stats);
        const auto classes = top_share_classes(stats, top_percent);
        for (auto c : classes) top.push_back(c);
        if (embeddings && classes.size() >= 2) similarity = semantic_similarity(*embeddings, classes);
      }
      const double delta = acc[t] - acc[s];
      pairs.push_back({{"teacher", tn},
                       {"student", sn},
                       {"teacher_accuracy", acc[t]},
                       {"student_accuracy", acc[s]},
                       {"delta_acc", delta},
                       {"rho_pos", stats.rho_pos},
                       {"flip_count", stats.total()},
                       {"entropy", opt_json(entropy)},
                       {"top_classes", top},
                       {"semantic_similarity", opt_json(similarity)},
                       {"per_class_counts", stats.per_class_counts}});
      entropy_csv += fmt::format("{},{},{},{},{},{}\n", tn, sn, num(delta), num(stats.rho_pos), opt_num(entropy),
                                 opt_num(similarity));
      std::vector<std::size_t> order(stats.per_class_counts.size());
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return stats.per_class_counts[a] > stats.per_class_counts[b];
      });
      for (std::size_t r = 0; r < order.size(); ++r) {
        const auto count = stats.per_class_counts[order[r]];
        const double share = stats.total() ? static_cast<double>(count) / static_cast<double>(stats.total()) : 0.0;
        per_class += fmt::format("{},{},{},{},{},{}\n", tn, sn, r + 1, order[r], count, num(share));
      }
    }
  }
  const auto dir = output_dir(resolved);
  const json doc = {{"val_size", val.size()}, {"top_percent", top_percent}, {"pairs", pairs}};
  write_json(dir / "flips.json", doc);
  write_text(dir / "per_class_flips.csv", per_class);
  write_text(dir / "entropy_vs_delta_acc.csv", entropy_csv);
  emit(opts, out, doc);
  return kExitOk;
}

int cmd_transfer(const json& resolved, const Options& opts, std::ostream& out) {
  prepare_output(resolved);
  const auto splits = build_splits(resolved);
  const auto zoo = load_zoo(resolved);
  const auto& tr = resolved.at("transfer");
  const Method method = method_from_string(tr.at("method").get<std::string>());
  const auto hp = hyperparams_from_json(tr.at("method_hyperparams").at(to_string(method)), method);
  const auto& student_name = tr.at("student").get_ref<const std::string&>();
  const Checkpoint& student = zoo.models[zoo.index(student_name)];
  const auto dir = output_dir(resolved);

  json report;
  std::string epochs = kEpochHeader;
  Checkpoint final_student;
  if (tr.contains("teacher")) {
    const auto& teacher_name = tr.at("teacher").get_ref<const std::string&>();
    if (teacher_name == student_name) std::cerr << "note: teacher and student are the same model\n";
    const auto result = run_transfer(student, zoo.models[zoo.index(teacher_name)], method, hp, splits.transfer, splits.val);
    report = to_json(result);
    report["teacher"] = teacher_name;
    report["student"] = student_name;
    epochs += epoch_rows(0, result.per_epoch);
    final_student = result.student;
  } else {
    const auto& p = tr.at("plan");
    MultiTeacherPlan plan;
    plan.mode = plan_mode_from_string(p.at("mode").get<std::string>());
    plan.order = teacher_order_from_string(p.at("order").get<std::string>());
    plan.method = method;
    plan.hp = hp;
    plan.retain_original_reference = p.at("retain_original_reference").get<bool>();
    plan.jobs = opts.jobs;
    std::vector<std::string> names = p.at("teachers").get<std::vector<std::string>>();
    for (const auto& n : names) plan.teachers.push_back(&zoo.models[zoo.index(n)]);
    const auto result = run_plan(student, plan, splits.transfer, splits.val);
    report = to_json(result.overall);
    report["method"] = to_string(method);
    report["hyperparams"] = to_json(hp);
    report["student"] = student_name;
    report["mode"] = to_string(plan.mode);
    json order = json::array(), stages = json::array();
    for (auto i : result.order) order.push_back(names[i]);
    for (std::size_t k = 0; k < result.stages.size(); ++k) {
      json stage = to_json(result.stages[k]);
      stage["teacher"] = names[result.order[k]];
      stages.push_back(std::move(stage));
      epochs += epoch_rows(k, result.stages[k].per_epoch);
    }
    if (plan.mode == PlanMode::parallel) epochs += epoch_rows(0, result.overall.per_epoch);
    report["teacher_order"] = order;
    report["stages"] = stages;
    final_student = result.overall.student;
  }
  write_json(dir / "report.json", report);
  write_text(dir / "per_epoch.csv", epochs);
  save(final_student, dir / "student.xfk");
  emit(opts, out, report);
  return kExitOk;
}

int cmd_sweep(const json& resolved, const Options& opts, std::ostream& out) {
  const auto& tr = resolved.at("transfer");
  prepare_output(resolved);
  const auto splits = build_splits(resolved);
  const auto zoo = load_zoo(resolved);
  auto pairs = pair_grid(zoo.manifest, pair_filter_from_json(tr.at("pairs")));
  if (pairs.empty()) throw ConfigError("no pairs matched the pair filter");
  const auto max_pairs = tr.at("max_pairs").get<std::size_t>();
  if (max_pairs > 0 && pairs.size() > max_pairs) {
    // Evenly spaced picks along delta_acc keep the spread of the full grid.
    std::stable_sort(pairs.begin(), pairs.end(), [](const ModelPair& a, const ModelPair& b) { return a.delta_acc < b.delta_acc; });
    std::vector<ModelPair> picked;
    for (std::size_t i = 0; i < max_pairs; ++i) {
      const std::size_t at = max_pairs == 1 ? 0 : i * (pairs.size() - 1) / (max_pairs - 1);
      picked.push_back(pairs[at]);
    }
    pairs = std::move(picked);
  }
  std::vector<Method> methods;
  for (const auto& m : tr.at("methods")) methods.push_back(method_from_string(m.get<std::string>()));
  std::vector<TransferHyperparams> hps;
  for (Method m : methods) hps.push_back(hyperparams_from_json(tr.at("method_hyperparams").at(to_string(m)), m));

  const std::size_t runs = pairs.size() * methods.size();
  std::vector<TransferResult> results(runs);
  std::cerr << fmt::format("sweep: {} pairs x {} methods\n", pairs.size(), methods.size());
  auto model_of = [&](std::size_t manifest_index) -> const Checkpoint& {
    return zoo.models[zoo.index(zoo.manifest.entries[manifest_index].name)];
  };
  parallel_for(runs, opts.jobs, [&](std::size_t r) {
    const auto& p = pairs[r / methods.size()];
    const std::size_t mi = r % methods.size();
    results[r] = run_transfer(model_of(p.student), model_of(p.teacher), methods[mi], hps[mi], splits.transfer, splits.val);
  });

  std::string csv =
      "teacher,student,teacher_family,student_family,method,delta_acc,delta_transf,knowledge_gain,knowledge_loss,rho_pos,"
      "transfer_rate\n";
  std::vector<std::vector<PairReport>> by_method(methods.size());
  for (std::size_t r = 0; r < runs; ++r) {
    const auto& p = pairs[r / methods.size()];
    const auto& res = results[r];
    const auto& te = zoo.manifest.entries[p.teacher];
    const auto& se = zoo.manifest.entries[p.student];
    by_method[r % methods.size()].push_back(res.report);
    csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", te.name, se.name, to_string(te.spec.family),
                       to_string(se.spec.family), to_string(res.method), num(res.report.delta_acc),
                       num(res.report.delta_transf), num(res.report.knowledge_gain), num(res.report.knowledge_loss),
                       num(res.flips.rho_pos), res.transfer_rate ? num(res.transfer_rate->overall) : "");
  }
  const auto edges = tr.at("bins").get<std::vector<double>>();
  json summary = {{"pairs", pairs.size()}, {"bins", edges}, {"methods", json::object()}};
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const auto& reps = by_method[mi];
    double total = 0.0;
    for (const auto& r : reps) total += r.delta_transf;
    json binned = json::array();
    for (const auto& b : binned_top_quartile_delta(reps, edges)) binned.push_back(opt_json(b));
    summary["methods"][to_string(methods[mi])] = {{"success_rate", success_rate(reps)},
                                                  {"mean_delta_transf", total / static_cast<double>(reps.size())},
                                                  {"binned_top_quartile_delta", binned}};
  }
  const auto dir = output_dir(resolved);
  write_text(dir / "sweep.csv", csv);
  write_json(dir / "summary.json", summary);
  emit(opts, out, summary);
  return kExitOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Model zoo training, complementary-knowledge analysis and knowledge transfer"};
  app.require_subcommand(1);
  Options opts;
  std::string config, out_dir;
  std::uint64_t seed = 0;
  for (const char* name : {"zoo", "flips", "transfer", "sweep"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "run config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides the config)");
    sub->add_option("--seed", seed, "base seed (overrides the config)");
    sub->add_option("--jobs", opts.jobs, "parallel workers")->check(CLI::PositiveNumber);
    sub->add_flag("--json", opts.json, "print the summary as JSON on stdout");
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  const auto* sub = app.get_subcommands().front();
  opts.config = config;
  if (sub->count("--out")) opts.out = out_dir;
  if (sub->count("--seed")) opts.seed = seed;

  try {
    std::ifstream f(opts.config, std::ios::binary);
    if (!f) throw ConfigError("cannot read config " + opts.config.string());
    std::stringstream buffer;
    buffer << f.rdbuf();
    const json resolved = resolve_config(command, parse_json_text(buffer.str(), opts.config.string()), opts);
    if (command == "zoo") return cmd_zoo(resolved, opts, out);
    if (command == "flips") return cmd_flips(resolved, opts, out);
    if (command == "transfer") return cmd_transfer(resolved, opts, out);
    return cmd_sweep(resolved, opts, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace xfer::cli
