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

#ifndef XFER_ANALYSIS_HPP_
#define XFER_ANALYSIS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "xfer/tensor.hpp"

// Complementarity and evaluation metrics between classifier pairs.
//
// Every argmax in the library goes through argmax_rows, which breaks ties
// toward the lowest class index, so accuracy, flips and masks always agree.
namespace xfer {

// One byte per sample; vector<bool> cannot be viewed as a span.
using Flags = std::vector<std::uint8_t>;

std::vector<int> argmax_rows(const Tensor& logits);
Flags correct_flags(const Tensor& logits, std::span<const int> labels);
double accuracy(const Tensor& logits, std::span<const int> labels);
double mean(const Flags& flags);

// Positive prediction flips of a (teacher, student) pair: samples the teacher
// classifies correctly and the student does not.
struct FlipStats {
  Flags per_sample;
  std::vector<std::size_t> per_class_counts;  // indexed by ground-truth label
  double rho_pos = 0.0;

  std::size_t total() const;
};

FlipStats positive_flips(const Tensor& teacher_logits, const Tensor& student_logits,
                         std::span<const int> labels);

// Shannon entropy (nats) of the per-class flip distribution.
double flip_entropy(const FlipStats& stats);

// Smallest set of classes, taken by descending flip count (ties: lower id
// first), whose flips cover at least `percent` of all flips. Returned in that
// order.
std::vector<std::size_t> top_share_classes(const FlipStats& stats, double percent);

// Mean pairwise cosine similarity of the embeddings of `class_set`, relative to
// the mean over all class pairs: within / overall - 1.
double semantic_similarity(const Tensor& class_embeddings, std::span<const std::size_t> class_set);

// c rows of d comma-separated values, no header.
Tensor load_embeddings_csv(const std::filesystem::path& path);

inline constexpr double kTransferRateShares[] = {2.0, 5.0, 20.0, 50.0, 100.0};

struct TransferRate {
  double overall = 0.0;
  // (top-X% share, rate restricted to those classes) for kTransferRateShares.
  std::vector<std::pair<double, double>> curve;
};

// Share of flip samples the student classifies correctly after transfer.
TransferRate transfer_rate(const FlipStats& flips_before, const Flags& student_correct_after,
                           std::span<const int> labels);

struct GainLoss {
  double gain = 0.0;  // flip samples now correct / flip samples
  double loss = 0.0;  // previously-correct samples now wrong / previously correct
};

GainLoss knowledge_gain_loss(const Flags& before_correct, const Flags& after_correct,
                             const Flags& flips);

// Exact split of an accuracy change over aligned flags:
//   after - before == flip_gain + other_gain - lost
// where flip_gain = gain * rho_pos and lost = loss * before_accuracy.
struct AccuracyChange {
  double flip_gain = 0.0;
  double other_gain = 0.0;  // newly-correct samples outside the flip set
  double lost = 0.0;
};

AccuracyChange decompose_accuracy_change(const Flags& before_correct, const Flags& after_correct,
                                         const Flags& flips);

struct PairReport {
  double teacher_accuracy = 0.0;
  double student_accuracy_before = 0.0;
  double student_accuracy_after = 0.0;
  double delta_acc = 0.0;     // teacher - student, before transfer
  double delta_transf = 0.0;  // student after - before
  double knowledge_gain = 0.0;
  double knowledge_loss = 0.0;
  std::vector<std::optional<double>> per_class_gain;  // empty where a class has no flips
};

// Fraction of reports with strictly positive delta_transf.
double success_rate(std::span<const PairReport> reports);

// Bins reports by delta_acc into [edges[b], edges[b + 1]) (the last bin is
// closed) and returns, per bin, the mean of the ceil(m / 4) largest
// delta_transf values. Empty bins are nullopt.
std::vector<std::optional<double>> binned_top_quartile_delta(std::span<const PairReport> reports,
                                                             std::span<const double> edges);

}  // namespace xfer

#endif  // XFER_ANALYSIS_HPP_
