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

#include "xfer/multiteacher.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <thread>

namespace xfer {

std::string to_string(PlanMode mode) {
  switch (mode) {
    case PlanMode::sequential: return "sequential";
    case PlanMode::parallel: return "parallel";
    case PlanMode::soup: return "soup";
  }
  return "?";
}

PlanMode plan_mode_from_string(const std::string& name) {
  if (name == "sequential") return PlanMode::sequential;
  if (name == "parallel") return PlanMode::parallel;
  if (name == "soup") return PlanMode::soup;
  throw ConfigError("unknown multi-teacher mode '" + name + "' (valid: sequential, parallel, soup)");
}

std::string to_string(TeacherOrder order) {
  switch (order) {
    case TeacherOrder::ascending: return "ascending";
    case TeacherOrder::descending: return "descending";
    case TeacherOrder::given: return "given";
  }
  return "?";
}

TeacherOrder teacher_order_from_string(const std::string& name) {
  if (name == "ascending") return TeacherOrder::ascending;
  if (name == "descending") return TeacherOrder::descending;
  if (name == "given") return TeacherOrder::given;
  throw ConfigError("unknown teacher order '" + name + "' (valid: ascending, descending, given)");
}

std::vector<std::size_t> order_teachers(std::span<const Checkpoint* const> teachers, TeacherOrder order,
                                        const Dataset& val_set) {
  std::vector<std::size_t> idx(teachers.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (order == TeacherOrder::given) return idx;
  std::vector<double> acc;
  for (const auto* t : teachers) acc.push_back(accuracy(predict_logits(*t, val_set.inputs), val_set.labels));
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return order == TeacherOrder::ascending ? acc[a] < acc[b] : acc[a] > acc[b];
  });
  return idx;
}

namespace {

void require_partitioned(const MultiTeacherPlan& plan, const char* op) {
  if (!is_partitioned(plan.method)) {
    throw ConfigError(std::string(op) + ": method must be kl_dp_sup or kl_dp_unsup, got " + to_string(plan.method));
  }
}

void require_teachers(const MultiTeacherPlan& plan, const char* op) {
  if (plan.teachers.empty()) throw ConfigError(std::string(op) + ": plan has no teachers");
  for (const auto* t : plan.teachers)
    if (t == nullptr) throw ConfigError(std::string(op) + ": null teacher");
}

}  // namespace

MultiTeacherResult sequential_transfer(const Checkpoint& student, const MultiTeacherPlan& plan,
                                       const Dataset& transfer_set, const Dataset& val_set) {
  MultiTeacherResult out;
  out.order = order_teachers(plan.teachers, plan.order, val_set);
  Checkpoint current = student;
  for (std::size_t stage = 0; stage < out.order.size(); ++stage) {
    TransferHyperparams hp = plan.hp;
    hp.seed = plan.hp.seed + stage;
    TransferOptions options;
    if (plan.retain_original_reference) options.reference = &student;
    auto result = run_transfer(current, *plan.teachers[out.order[stage]], plan.method, hp, transfer_set, val_set,
                               options);
    current = result.student;
    out.stages.push_back(std::move(result));
  }
  if (plan.teachers.empty()) {
    out.overall.student = student;
    const Flags correct = correct_flags(predict_logits(student, val_set.inputs), val_set.labels);
    out.overall.report.student_accuracy_before = out.overall.report.student_accuracy_after = mean(correct);
    return out;
  }
  out.overall = assess_transfer(student, current, plan.teachers, val_set);
  out.overall.method = plan.method;
  out.overall.hp = plan.hp;
  return out;
}

MultiTeacherResult parallel_transfer(const Checkpoint& student, const MultiTeacherPlan& plan,
                                     const Dataset& transfer_set, const Dataset& val_set) {
  require_teachers(plan, "parallel_transfer");
  require_partitioned(plan, "parallel_transfer");
  MultiTeacherResult out;
  out.order.resize(plan.teachers.size());
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  out.overall = run_partitioned_transfer(student, plan.teachers, plan.method == Method::kl_dp_sup, plan.hp,
                                         transfer_set, val_set);
  return out;
}

Checkpoint average_checkpoints(std::span<const Checkpoint* const> variants) {
  if (variants.empty()) throw ConfigError("average_checkpoints: no variants");
  const Checkpoint& first = *variants[0];
  for (const auto* v : variants) {
    if (!(v->spec == first.spec)) throw ConfigError("average_checkpoints: variants differ in architecture");
  }
  Checkpoint merged = first;
  const double k = static_cast<double>(variants.size());
  for (std::size_t p = 0; p < merged.params.size(); ++p) {
    auto dst = merged.params[p].value.data();
    const auto base = first.params[p].value.data();
    for (std::size_t j = 0; j < dst.size(); ++j) {
      double acc = 0.0;
      for (std::size_t b = 1; b < variants.size(); ++b) acc += (variants[b]->params[p].value[j] - base[j]) / k;
      dst[j] = base[j] + acc;
    }
  }
  return merged;
}

MultiTeacherResult soup_transfer(const Checkpoint& student, const MultiTeacherPlan& plan,
                                 const Dataset& transfer_set, const Dataset& val_set) {
  require_teachers(plan, "soup_transfer");
  require_partitioned(plan, "soup_transfer");
  const std::size_t k = plan.teachers.size();
  std::vector<TransferResult> branches(k);
  std::vector<std::exception_ptr> errors(k);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < k; i = next++) {
      try {
        branches[i] = run_transfer(student, *plan.teachers[i], plan.method, plan.hp, transfer_set, val_set);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(plan.jobs, k));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  // Branches are merged in order of their weights' hash so the soup does not
  // depend on teacher order.
  MultiTeacherResult out;
  out.order.resize(k);
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  std::vector<std::uint64_t> hashes;
  for (const auto& b : branches) hashes.push_back(parameter_hash(b.student));
  std::vector<std::size_t> merge_order = out.order;
  std::stable_sort(merge_order.begin(), merge_order.end(),
                   [&](std::size_t a, std::size_t b) { return hashes[a] < hashes[b]; });
  std::vector<const Checkpoint*> variants;
  for (std::size_t i : merge_order) variants.push_back(&branches[i].student);
  Checkpoint merged = average_checkpoints(variants);

  out.overall = assess_transfer(student, merged, plan.teachers, val_set);
  out.overall.method = plan.method;
  out.overall.hp = plan.hp;
  out.overall.student.meta["val_accuracy"] = out.overall.report.student_accuracy_after;
  out.stages = std::move(branches);
  return out;
}

MultiTeacherResult run_plan(const Checkpoint& student, const MultiTeacherPlan& plan, const Dataset& transfer_set,
                            const Dataset& val_set) {
  switch (plan.mode) {
    case PlanMode::sequential: return sequential_transfer(student, plan, transfer_set, val_set);
    case PlanMode::parallel: return parallel_transfer(student, plan, transfer_set, val_set);
    case PlanMode::soup: return soup_transfer(student, plan, transfer_set, val_set);
  }
  throw ConfigError("unknown plan mode");
}

}  // namespace xfer
