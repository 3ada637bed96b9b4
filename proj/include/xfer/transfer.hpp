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

#ifndef XFER_TRANSFER_HPP_
#define XFER_TRANSFER_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfer/analysis.hpp"
#include "xfer/data.hpp"
#include "xfer/models.hpp"
#include "xfer/objectives.hpp"

namespace xfer {

enum class Method { kl, xe_kl, xe_kl_mcl, kl_dp_sup, kl_dp_unsup, cd };

inline constexpr Method kAllMethods[] = {Method::kl,        Method::xe_kl,       Method::xe_kl_mcl,
                                         Method::kl_dp_sup, Method::kl_dp_unsup, Method::cd};

std::string to_string(Method method);
// Unknown names raise a ConfigError listing the valid ones.
Method method_from_string(const std::string& name);
bool is_partitioned(Method method);

struct TransferHyperparams {
  double lr = 1e-4;
  double temperature = 1.0;
  double lambda = 1.0;  // weight of the distillation term against cross-entropy
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double tau = 0.9999;           // MCL only
  std::size_t interp_every = 2;  // MCL only
  std::size_t topk = 0;          // 0: full divergence

  bool operator==(const TransferHyperparams&) const = default;
};

TransferHyperparams default_hyperparams(Method method);
void validate(const TransferHyperparams& hp);
nlohmann::json to_json(const TransferHyperparams& hp);
// Starts from default_hyperparams(method) and applies the given keys.
TransferHyperparams hyperparams_from_json(const nlohmann::json& j, Method method);

struct MclState {
  std::vector<Tensor> slow;
  std::vector<Tensor> fast;
  double tau = 0.9999;
  std::size_t interp_every = 2;
};

// slow = tau * slow + (1 - tau) * fast when iteration % interp_every == 0.
void mcl_interpolate(MclState& state, std::size_t iteration);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double gain = 0.0;
  double loss = 0.0;
  double teacher_share = 0.0;  // share of samples distilled from a teacher
  std::optional<double> fast_val_accuracy;
};

// What a step observer sees after each optimizer step.
struct StepInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::span<const int> labels;
  const Tensor* st_logits = nullptr;           // partitioned methods
  std::vector<const Tensor*> teacher_logits;   // per teacher, batch rows
  const PartitionMask* mask = nullptr;         // single-teacher partitioned methods
  std::span<const std::size_t> selection;      // partitioned: 0 is f_st, k is teacher k
  const MclState* mcl = nullptr;
  std::span<const Tensor> params;              // trainable student weights after the step
};

using StepObserver = std::function<void(const StepInfo&)>;

struct TransferOptions {
  // Retention target for partitioned methods; defaults to the student itself.
  const Checkpoint* reference = nullptr;
  StepObserver observer;
};

struct TransferResult {
  Method method = Method::kl;
  TransferHyperparams hp;
  PairReport report;
  FlipStats flips;
  std::optional<TransferRate> transfer_rate;  // unset when there were no flips
  std::vector<EpochRecord> per_epoch;
  Checkpoint student;  // evaluated weights (slow weights for MCL)
  std::size_t mask_checks = 0;
};

TransferResult run_transfer(const Checkpoint& student, const Checkpoint& teacher, Method method,
                            const TransferHyperparams& hp, const Dataset& transfer_set,
                            const Dataset& val_set, const TransferOptions& options = {});

// Partitioned distillation over several teachers: each sample is distilled
// from the most confident of {f_st, teacher_1, ..., teacher_K}. The report
// compares against the teacher with the highest validation accuracy.
TransferResult run_partitioned_transfer(const Checkpoint& student, std::span<const Checkpoint* const> teachers,
                                        bool supervised, const TransferHyperparams& hp,
                                        const Dataset& transfer_set, const Dataset& val_set,
                                        const TransferOptions& options = {});

// Report for a finished transfer from `before` to `after`; flips are taken
// against the most accurate teacher on `val_set`.
TransferResult assess_transfer(const Checkpoint& before, const Checkpoint& after,
                               std::span<const Checkpoint* const> teachers, const Dataset& val_set);

nlohmann::json to_json(const PairReport& report);
nlohmann::json to_json(const TransferResult& result);

}  // namespace xfer

#endif  // XFER_TRANSFER_HPP_
