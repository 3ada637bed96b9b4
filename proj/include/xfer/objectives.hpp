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

#ifndef XFER_OBJECTIVES_HPP_
#define XFER_OBJECTIVES_HPP_

#include <optional>
#include <span>
#include <vector>

#include "xfer/analysis.hpp"
#include "xfer/autodiff.hpp"
#include "xfer/tensor.hpp"

// Transfer objectives. Student-side inputs are tape variables; frozen-model
// outputs are plain tensors. Every divergence uses the frozen model's tempered
// softmax p as the target and the student's q as the adapting distribution:
//   KL = sum_j p_j (log p_j - log q_j).
namespace xfer {

struct SoftTargets {
  Tensor probs;  // [n, c], rows sum to 1
  double temperature = 1.0;
};

SoftTargets soft_targets(const Tensor& logits, double temperature);

// (T^2 / n) * sum_i KL(teacher_i || student_i) at temperature T.
ad::Var kl_loss(ad::Var student_logits, const Tensor& teacher_logits, double temperature);
double kl_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature);

// Mean negative log-likelihood of `labels`.
ad::Var cross_entropy(ad::Var logits, std::span<const int> labels);

// lambda * KL + (1 - lambda) * cross-entropy.
ad::Var xe_kl_loss(ad::Var student_logits, const Tensor& teacher_logits, std::span<const int> labels,
                   double lambda, double temperature);

// KL restricted, per sample, to the k classes the teacher ranks highest (ties
// to the lower class id); both distributions are renormalized over that
// subset. k == c is exactly kl_loss.
ad::Var topk_restricted_kl(ad::Var student_logits, const Tensor& teacher_logits, double temperature,
                           std::size_t k);

// Per-sample assignment of the distillation target: the teacher where m_t is
// set, the frozen initial student (f_st) where m_st is set.
struct PartitionMask {
  Flags m_t;
  Flags m_st;

  std::size_t size() const { return m_t.size(); }
  std::size_t teacher_count() const;
  // Exactly one of the two flags set for every sample.
  bool is_partition() const;
};

// m_t[i] = sigma_y(z_t,i) > sigma_y(z_st,i) at T = 1; ties go to f_st.
PartitionMask dp_masks_supervised(const Tensor& teacher_logits, const Tensor& st_logits,
                                  std::span<const int> labels);
// Same rule on the maximum class probability instead of the label's.
PartitionMask dp_masks_unsupervised(const Tensor& teacher_logits, const Tensor& st_logits);

// (T^2 / n) * sum_i [m_t KL(teacher_i || student_i) + m_st KL(st_i || student_i)].
// `topk` > 0 restricts each divergence as in topk_restricted_kl.
ad::Var dp_loss(ad::Var student_logits, const Tensor& teacher_logits, const Tensor& st_logits,
                const PartitionMask& mask, double temperature, std::size_t topk = 0);

// Source choice for multi-source partitioning. `sources[0]` is f_st and
// `sources[1..]` are teachers. Each sample goes to the most confident source
// (ground-truth probability when labels are given, else max probability);
// ties keep the earliest source, so f_st wins, then the lowest teacher.
std::vector<std::size_t> select_sources(std::span<const Tensor* const> sources,
                                        std::optional<std::span<const int>> labels);

// Row i of the result is row i of sources[selection[i]].
Tensor mix_rows(std::span<const Tensor* const> sources, std::span<const std::size_t> selection);

// KL against per-sample target logits (rows already chosen); topk as above.
ad::Var selected_kl_loss(ad::Var student_logits, const Tensor& target_logits, double temperature,
                         std::size_t topk = 0);

// Contrastive distillation: rows of each feature set are L2-normalized, S =
// U U^T is softmaxed row-wise, and the loss is the row-mean KL from the
// teacher's similarity distribution to the student's.
ad::Var cd_loss(ad::Var student_feats, ad::Var teacher_feats);

}  // namespace xfer

#endif  // XFER_OBJECTIVES_HPP_
