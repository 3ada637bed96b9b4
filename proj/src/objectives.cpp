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

#include "xfer/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace xfer {
namespace {

void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
  }
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
  }
}

Tensor divided(const Tensor& logits, double temperature) {
  if (temperature == 1.0) return logits;
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] / temperature;
  return out;
}

// Full-width tempered KL; the core every divergence reduces to.
ad::Var tempered_kl(ad::Var student_logits, const Tensor& target_logits, double temperature) {
  require_same_shape("kl_loss", student_logits.shape(), target_logits.shape());
  if (student_logits.value().rank() != 2) throw ShapeError("kl_loss: logits must be [n, c]");
  ad::Tape& tape = student_logits.tape();
  const Tensor target_log = ad::log_softmax(divided(target_logits, temperature));
  Tensor target_prob(target_log.shape());
  for (std::size_t i = 0; i < target_prob.size(); ++i) target_prob[i] = std::exp(target_log[i]);

  ad::Var student_log = ad::log_softmax(
      temperature == 1.0 ? student_logits : ad::scale(student_logits, 1.0 / temperature));
  ad::Var gap = ad::sub(tape.constant(target_log), student_log);
  ad::Var total = ad::sum(ad::mul(tape.constant(std::move(target_prob)), gap));
  const double n = static_cast<double>(target_logits.rows());
  return ad::scale(total, temperature * temperature / n);
}

// Column ids of the k largest entries per row, each row ascending by id.
std::vector<std::size_t> top_columns(const Tensor& logits, std::size_t k) {
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<std::size_t> out(n * k);
  std::vector<std::size_t> order(c);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double* row = logits.ptr() + i * c;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::copy(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), out.begin() + static_cast<std::ptrdiff_t>(i * k));
  }
  return out;
}

Tensor gather_columns(const Tensor& logits, const std::vector<std::size_t>& columns, std::size_t k) {
  const std::size_t n = logits.rows(), c = logits.cols();
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = logits[i * c + columns[i * k + j]];
  return out;
}

PartitionMask masks_from_scores(const std::vector<double>& teacher, const std::vector<double>& st) {
  PartitionMask mask;
  mask.m_t.resize(teacher.size());
  mask.m_st.resize(teacher.size());
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    mask.m_t[i] = teacher[i] > st[i];
    mask.m_st[i] = !mask.m_t[i];
  }
  return mask;
}

std::vector<double> label_probability(const Tensor& logits, std::span<const int> labels) {
  const Tensor probs = ad::softmax(logits);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.cols()) {
      throw ShapeError("label " + std::to_string(labels[i]) + " out of range");
    }
    out[i] = probs.at(i, static_cast<std::size_t>(labels[i]));
  }
  return out;
}

std::vector<double> max_probability(const Tensor& logits) {
  const Tensor probs = ad::softmax(logits);
  std::vector<double> out(probs.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = probs.row(i);
    out[i] = *std::max_element(row.begin(), row.end());
  }
  return out;
}

}  // namespace

SoftTargets soft_targets(const Tensor& logits, double temperature) {
  require_temperature(temperature);
  return {ad::softmax(divided(logits, temperature)), temperature};
}

ad::Var kl_loss(ad::Var student_logits, const Tensor& teacher_logits, double temperature) {
  require_temperature(temperature);
  return tempered_kl(student_logits, teacher_logits, temperature);
}

double kl_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature) {
  ad::Tape tape;
  return kl_loss(tape.constant(student_logits), teacher_logits, temperature).value()[0];
}

ad::Var cross_entropy(ad::Var logits, std::span<const int> labels) {
  ad::Var picked = ad::pick(ad::log_softmax(logits), labels);
  return ad::scale(ad::sum(picked), -1.0 / static_cast<double>(labels.size()));
}

ad::Var xe_kl_loss(ad::Var student_logits, const Tensor& teacher_logits, std::span<const int> labels,
                   double lambda, double temperature) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("xe_kl_loss: lambda must be in [0, 1]");
  ad::Var kl = kl_loss(student_logits, teacher_logits, temperature);
  ad::Var xe = cross_entropy(student_logits, labels);
  return ad::add(ad::scale(kl, lambda), ad::scale(xe, 1.0 - lambda));
}

ad::Var topk_restricted_kl(ad::Var student_logits, const Tensor& teacher_logits, double temperature,
                           std::size_t k) {
  require_temperature(temperature);
  require_same_shape("topk_restricted_kl", student_logits.shape(), teacher_logits.shape());
  const std::size_t c = teacher_logits.cols();
  if (k < 1 || k > c) {
    throw ConfigError("topk_restricted_kl: k must be in [1, " + std::to_string(c) + "], got " + std::to_string(k));
  }
  if (k == c) return tempered_kl(student_logits, teacher_logits, temperature);
  // Renormalizing a softmax over a subset is the softmax of the gathered logits.
  auto columns = top_columns(teacher_logits, k);
  const Tensor teacher_sub = gather_columns(teacher_logits, columns, k);
  return tempered_kl(ad::gather_cols(student_logits, std::move(columns), k), teacher_sub, temperature);
}

std::size_t PartitionMask::teacher_count() const {
  return static_cast<std::size_t>(std::count(m_t.begin(), m_t.end(), 1));
}

bool PartitionMask::is_partition() const {
  if (m_t.size() != m_st.size()) return false;
  for (std::size_t i = 0; i < m_t.size(); ++i) {
    if ((m_t[i] != 0) == (m_st[i] != 0)) return false;
  }
  return true;
}

PartitionMask dp_masks_supervised(const Tensor& teacher_logits, const Tensor& st_logits,
                                  std::span<const int> labels) {
  require_same_shape("dp_masks_supervised", teacher_logits.shape(), st_logits.shape());
  if (labels.size() != teacher_logits.rows()) throw ShapeError("dp_masks_supervised: label count mismatch");
  return masks_from_scores(label_probability(teacher_logits, labels), label_probability(st_logits, labels));
}

PartitionMask dp_masks_unsupervised(const Tensor& teacher_logits, const Tensor& st_logits) {
  require_same_shape("dp_masks_unsupervised", teacher_logits.shape(), st_logits.shape());
  return masks_from_scores(max_probability(teacher_logits), max_probability(st_logits));
}

ad::Var selected_kl_loss(ad::Var student_logits, const Tensor& target_logits, double temperature,
                         std::size_t topk) {
  if (topk == 0) return kl_loss(student_logits, target_logits, temperature);
  return topk_restricted_kl(student_logits, target_logits, temperature, topk);
}

ad::Var dp_loss(ad::Var student_logits, const Tensor& teacher_logits, const Tensor& st_logits,
                const PartitionMask& mask, double temperature, std::size_t topk) {
  require_same_shape("dp_loss", teacher_logits.shape(), st_logits.shape());
  if (mask.size() != teacher_logits.rows() || !mask.is_partition()) {
    throw ConfigError("dp_loss: mask is not an exact partition of the batch");
  }
  std::vector<std::size_t> selection(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) selection[i] = mask.m_t[i] ? 1 : 0;
  const Tensor* sources[] = {&st_logits, &teacher_logits};
  return selected_kl_loss(student_logits, mix_rows(sources, selection), temperature, topk);
}

std::vector<std::size_t> select_sources(std::span<const Tensor* const> sources,
                                        std::optional<std::span<const int>> labels) {
  if (sources.empty()) throw ConfigError("select_sources: need at least one source");
  std::vector<std::vector<double>> scores;
  scores.reserve(sources.size());
  for (const Tensor* s : sources) {
    require_same_shape("select_sources", sources[0]->shape(), s->shape());
    scores.push_back(labels ? label_probability(*s, *labels) : max_probability(*s));
  }
  std::vector<std::size_t> selection(sources[0]->rows(), 0);
  for (std::size_t i = 0; i < selection.size(); ++i) {
    for (std::size_t k = 1; k < sources.size(); ++k) {
      if (scores[k][i] > scores[selection[i]][i]) selection[i] = k;
    }
  }
  return selection;
}

Tensor mix_rows(std::span<const Tensor* const> sources, std::span<const std::size_t> selection) {
  if (sources.empty()) throw ConfigError("mix_rows: need at least one source");
  Tensor out(sources[0]->shape());
  if (selection.size() != out.rows()) throw ShapeError("mix_rows: selection length mismatch");
  const std::size_t c = out.cols();
  for (std::size_t i = 0; i < selection.size(); ++i) {
    if (selection[i] >= sources.size()) throw ShapeError("mix_rows: source index out of range");
    const Tensor& src = *sources[selection[i]];
    require_same_shape("mix_rows", out.shape(), src.shape());
    std::copy_n(src.ptr() + i * c, c, out.ptr() + i * c);
  }
  return out;
}

ad::Var cd_loss(ad::Var student_feats, ad::Var teacher_feats) {
  require_same_shape("cd_loss", student_feats.shape(), teacher_feats.shape());
  if (student_feats.value().rank() != 2 || student_feats.value().rows() < 2) {
    throw ShapeError("cd_loss: features must be [n >= 2, d]");
  }
  ad::Var us = ad::l2_normalize_rows(student_feats);
  ad::Var ut = ad::l2_normalize_rows(teacher_feats);
  ad::Var student_log = ad::log_softmax(ad::matmul_nt(us, us));
  ad::Var teacher_log = ad::log_softmax(ad::matmul_nt(ut, ut));
  ad::Var total = ad::sum(ad::mul(ad::exp(teacher_log), ad::sub(teacher_log, student_log)));
  return ad::scale(total, 1.0 / static_cast<double>(student_feats.value().rows()));
}

}  // namespace xfer
