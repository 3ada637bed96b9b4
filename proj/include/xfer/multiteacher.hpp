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

#ifndef XFER_MULTITEACHER_HPP_
#define XFER_MULTITEACHER_HPP_

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfer/transfer.hpp"

namespace xfer {

enum class PlanMode { sequential, parallel, soup };
enum class TeacherOrder { ascending, descending, given };  // by validation accuracy

std::string to_string(PlanMode mode);
PlanMode plan_mode_from_string(const std::string& name);
std::string to_string(TeacherOrder order);
TeacherOrder teacher_order_from_string(const std::string& name);

struct MultiTeacherPlan {
  std::vector<const Checkpoint*> teachers;
  PlanMode mode = PlanMode::sequential;
  TeacherOrder order = TeacherOrder::ascending;
  Method method = Method::kl_dp_sup;
  TransferHyperparams hp = default_hyperparams(Method::kl_dp_sup);
  // Sequential only: keep the original student as f_st in every stage.
  bool retain_original_reference = false;
  std::size_t jobs = 1;  // soup branches run concurrently up to this bound
};

// Indices of `teachers` in the order a plan visits them. Ties keep the given
// order.
std::vector<std::size_t> order_teachers(std::span<const Checkpoint* const> teachers, TeacherOrder order,
                                        const Dataset& val_set);

struct MultiTeacherResult {
  TransferResult overall;  // original student against the final model
  std::vector<TransferResult> stages;  // sequential stages or soup branches
  std::vector<std::size_t> order;      // teacher indices in stage order
};

// Stage k distills teacher order[k] into the output of stage k - 1, which
// also becomes the new f_st unless retain_original_reference is set. An empty
// plan returns the student unchanged.
MultiTeacherResult sequential_transfer(const Checkpoint& student, const MultiTeacherPlan& plan,
                                       const Dataset& transfer_set, const Dataset& val_set);

// One run with per-sample selection among f_st and all teachers.
MultiTeacherResult parallel_transfer(const Checkpoint& student, const MultiTeacherPlan& plan,
                                     const Dataset& transfer_set, const Dataset& val_set);

// Independent single-teacher runs from the same student, merged by a uniform
// weight average.
MultiTeacherResult soup_transfer(const Checkpoint& student, const MultiTeacherPlan& plan,
                                 const Dataset& transfer_set, const Dataset& val_set);

MultiTeacherResult run_plan(const Checkpoint& student, const MultiTeacherPlan& plan, const Dataset& transfer_set,
                            const Dataset& val_set);

// Uniform elementwise mean, accumulated as v0 + sum_k (v_k - v0) / K over the
// given order. Equal inputs give the input back bit for bit.
Checkpoint average_checkpoints(std::span<const Checkpoint* const> variants);

}  // namespace xfer

#endif  // XFER_MULTITEACHER_HPP_
