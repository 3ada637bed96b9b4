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

#include "xfer/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

namespace xfer {
namespace {

void require_aligned(const char* op, std::size_t a, std::size_t b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": misaligned inputs (" + std::to_string(a) + " vs " +
                     std::to_string(b) + " samples)");
  }
}

[[noreturn]] void no_flips(const char* op) {
  throw Error(std::string(op) + ": no complementary knowledge (zero positive flips)");
}

}  // namespace

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [n, c], got " + to_string(logits.shape()));
  const std::size_t c = logits.cols();
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = logits.ptr() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

Flags correct_flags(const Tensor& logits, std::span<const int> labels) {
  require_aligned("correct_flags", logits.rows(), labels.size());
  const auto predicted = argmax_rows(logits);
  Flags out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = predicted[i] == labels[i];
  return out;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  return mean(correct_flags(logits, labels));
}

double mean(const Flags& flags) {
  if (flags.empty()) return 0.0;
  const std::size_t hits = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), 1));
  return static_cast<double>(hits) / static_cast<double>(flags.size());
}

std::size_t FlipStats::total() const {
  return std::accumulate(per_class_counts.begin(), per_class_counts.end(), std::size_t{0});
}

FlipStats positive_flips(const Tensor& teacher_logits, const Tensor& student_logits,
                         std::span<const int> labels) {
  require_aligned("positive_flips", teacher_logits.rows(), student_logits.rows());
  require_aligned("positive_flips", teacher_logits.rows(), labels.size());
  if (teacher_logits.cols() != student_logits.cols()) {
    throw ShapeError("positive_flips: class counts differ (" + std::to_string(teacher_logits.cols()) +
                     " vs " + std::to_string(student_logits.cols()) + ")");
  }
  const Flags teacher_ok = correct_flags(teacher_logits, labels);
  const Flags student_ok = correct_flags(student_logits, labels);
  FlipStats stats;
  stats.per_sample.resize(labels.size());
  stats.per_class_counts.assign(teacher_logits.cols(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    stats.per_sample[i] = teacher_ok[i] && !student_ok[i];
    if (stats.per_sample[i]) ++stats.per_class_counts[static_cast<std::size_t>(labels[i])];
  }
  stats.rho_pos = mean(stats.per_sample);
  return stats;
}

double flip_entropy(const FlipStats& stats) {
  const std::size_t total = stats.total();
  if (total == 0) no_flips("flip_entropy");
  double entropy = 0.0;
  for (std::size_t count : stats.per_class_counts) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / static_cast<double>(total);
    entropy -= p * std::log(p);
  }
  return entropy;
}

std::vector<std::size_t> top_share_classes(const FlipStats& stats, double percent) {
  if (!(percent > 0.0 && percent <= 100.0)) throw ConfigError("top_share_classes: percent must be in (0, 100]");
  const std::size_t total = stats.total();
  if (total == 0) no_flips("top_share_classes");
  std::vector<std::size_t> order(stats.per_class_counts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return stats.per_class_counts[a] > stats.per_class_counts[b];
  });
  std::vector<std::size_t> chosen;
  std::size_t covered = 0;
  for (std::size_t k : order) {
    chosen.push_back(k);
    covered += stats.per_class_counts[k];
    if (static_cast<double>(covered) * 100.0 >= percent * static_cast<double>(total)) break;
  }
  return chosen;
}

double semantic_similarity(const Tensor& class_embeddings, std::span<const std::size_t> class_set) {
  if (class_embeddings.rank() != 2) throw ShapeError("semantic_similarity: embeddings must be [c, d]");
  if (class_set.size() < 2) throw ConfigError("semantic_similarity: class set needs at least 2 classes");
  const std::size_t c = class_embeddings.rows(), d = class_embeddings.cols();
  std::vector<double> norms(c);
  for (std::size_t i = 0; i < c; ++i) {
    double sq = 0.0;
    for (double v : class_embeddings.row(i)) sq += v * v;
    norms[i] = std::sqrt(sq);
    if (!(norms[i] > 0.0)) throw NumericError("semantic_similarity: zero embedding for class " + std::to_string(i));
  }
  auto cosine = [&](std::size_t a, std::size_t b) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += class_embeddings.at(a, j) * class_embeddings.at(b, j);
    return dot / (norms[a] * norms[b]);
  };
  auto mean_pairwise = [&](std::span<const std::size_t> set) {
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < set.size(); ++a)
      for (std::size_t b = a + 1; b < set.size(); ++b, ++pairs) acc += cosine(set[a], set[b]);
    return acc / static_cast<double>(pairs);
  };
  for (std::size_t k : class_set) {
    if (k >= c) throw ConfigError("semantic_similarity: class " + std::to_string(k) + " out of range");
  }
  std::vector<std::size_t> all(c);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const double overall = mean_pairwise(all);
  if (!(overall > 0.0)) {
    throw NumericError("semantic_similarity: average class similarity must be positive");
  }
  return mean_pairwise(class_set) / overall - 1.0;
}

Tensor load_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open embeddings file " + path.string());
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream fields(line);
    std::string field;
    std::size_t count = 0;
    while (std::getline(fields, field, ',')) {
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str()) {
        throw ConfigError("embeddings: non-numeric field '" + field + "' on row " + std::to_string(rows + 1));
      }
      values.push_back(v);
      ++count;
    }
    if (rows == 0) cols = count;
    if (count != cols || count == 0) {
      throw ConfigError("embeddings: row " + std::to_string(rows + 1) + " has " + std::to_string(count) +
                        " columns, expected " + std::to_string(cols));
    }
    ++rows;
  }
  if (rows == 0) throw ConfigError("embeddings: file is empty");
  return Tensor({rows, cols}, std::move(values));
}

TransferRate transfer_rate(const FlipStats& flips_before, const Flags& student_correct_after,
                           std::span<const int> labels) {
  require_aligned("transfer_rate", flips_before.per_sample.size(), student_correct_after.size());
  require_aligned("transfer_rate", flips_before.per_sample.size(), labels.size());
  if (flips_before.total() == 0) no_flips("transfer_rate");

  auto rate_within = [&](const std::vector<std::size_t>& classes) {
    std::vector<std::uint8_t> member(flips_before.per_class_counts.size(), 0);
    for (std::size_t k : classes) member[k] = 1;
    std::size_t flips = 0, fixed = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!flips_before.per_sample[i] || !member[static_cast<std::size_t>(labels[i])]) continue;
      ++flips;
      fixed += student_correct_after[i] ? 1 : 0;
    }
    return static_cast<double>(fixed) / static_cast<double>(flips);
  };

  TransferRate out;
  std::vector<std::size_t> all(flips_before.per_class_counts.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  out.overall = rate_within(all);
  for (double share : kTransferRateShares) {
    out.curve.emplace_back(share, rate_within(top_share_classes(flips_before, share)));
  }
  return out;
}

GainLoss knowledge_gain_loss(const Flags& before_correct, const Flags& after_correct, const Flags& flips) {
  require_aligned("knowledge_gain_loss", before_correct.size(), after_correct.size());
  require_aligned("knowledge_gain_loss", before_correct.size(), flips.size());
  std::size_t flip_count = 0, gained = 0, before_count = 0, lost = 0;
  for (std::size_t i = 0; i < flips.size(); ++i) {
    if (flips[i]) {
      ++flip_count;
      gained += after_correct[i] ? 1 : 0;
    }
    if (before_correct[i]) {
      ++before_count;
      lost += after_correct[i] ? 0 : 1;
    }
  }
  if (flip_count == 0) no_flips("knowledge_gain_loss");
  if (before_count == 0) throw Error("knowledge_gain_loss: student had no correct samples before transfer");
  return {static_cast<double>(gained) / static_cast<double>(flip_count),
          static_cast<double>(lost) / static_cast<double>(before_count)};
}

AccuracyChange decompose_accuracy_change(const Flags& before_correct, const Flags& after_correct,
                                         const Flags& flips) {
  require_aligned("decompose_accuracy_change", before_correct.size(), after_correct.size());
  require_aligned("decompose_accuracy_change", before_correct.size(), flips.size());
  std::size_t flip_gain = 0, other_gain = 0, lost = 0;
  for (std::size_t i = 0; i < flips.size(); ++i) {
    if (!before_correct[i] && after_correct[i]) (flips[i] ? flip_gain : other_gain) += 1;
    if (before_correct[i] && !after_correct[i]) ++lost;
  }
  const double n = static_cast<double>(flips.size());
  return {static_cast<double>(flip_gain) / n, static_cast<double>(other_gain) / n,
          static_cast<double>(lost) / n};
}

double success_rate(std::span<const PairReport> reports) {
  if (reports.empty()) throw ConfigError("success_rate: no reports");
  const auto wins = std::count_if(reports.begin(), reports.end(),
                                  [](const PairReport& r) { return r.delta_transf > 0.0; });
  return static_cast<double>(wins) / static_cast<double>(reports.size());
}

std::vector<std::optional<double>> binned_top_quartile_delta(std::span<const PairReport> reports,
                                                             std::span<const double> edges) {
  if (reports.empty()) throw ConfigError("binned_top_quartile_delta: no reports");
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
    throw ConfigError("binned_top_quartile_delta: need at least two ascending bin edges");
  }
  const std::size_t bins = edges.size() - 1;
  std::vector<std::vector<double>> members(bins);
  for (const auto& r : reports) {
    for (std::size_t b = 0; b < bins; ++b) {
      const bool last = b + 1 == bins;
      if (r.delta_acc >= edges[b] && (r.delta_acc < edges[b + 1] || (last && r.delta_acc == edges[b + 1]))) {
        members[b].push_back(r.delta_transf);
        break;
      }
    }
  }
  std::vector<std::optional<double>> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    auto& v = members[b];
    if (v.empty()) continue;
    std::sort(v.begin(), v.end(), std::greater<>());
    const std::size_t top = (v.size() + 3) / 4;
    double acc = 0.0;
    for (std::size_t i = 0; i < top; ++i) acc += v[i];
    out[b] = acc / static_cast<double>(top);
  }
  return out;
}

}  // namespace xfer
