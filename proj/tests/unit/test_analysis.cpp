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

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "xfer/analysis.hpp"
#include "xfer/random.hpp"

using namespace xfer;

namespace {

// Logits whose argmax is `predicted[i]`.
Tensor logits_for(const std::vector<int>& predicted, std::size_t c) {
  Tensor t({predicted.size(), c}, 0.0);
  for (std::size_t i = 0; i < predicted.size(); ++i) t.at(i, static_cast<std::size_t>(predicted[i])) = 1.0;
  return t;
}

FlipStats stats_from_counts(const std::vector<std::size_t>& counts) {
  FlipStats s;
  s.per_class_counts = counts;
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  s.per_sample.assign(total, 1);
  s.rho_pos = 1.0;
  return s;
}

Tensor random_logits(std::size_t n, std::size_t c, Rng& rng) {
  Tensor t({n, c});
  for (double& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("argmax ties resolve to the lowest class") {
  const Tensor t({2, 3}, {1.0, 1.0, 0.0, 0.0, 2.0, 2.0});
  CHECK(argmax_rows(t) == std::vector<int>{0, 1});
}

TEST_CASE("identical logits have no positive flips") {
  Rng rng(1);
  const Tensor z = random_logits(50, 4, rng);
  std::vector<int> labels(50);
  for (auto& y : labels) y = static_cast<int>(rng.below(4));
  CHECK(positive_flips(z, z, labels).rho_pos == 0.0);
}

TEST_CASE("hand-enumerated flip fixture") {
  const std::vector<int> labels = {0, 1, 2, 0};
  // Teacher right on {0, 1, 2}; student right on {1, 3}.
  const Tensor teacher = logits_for({0, 1, 2, 1}, 3);
  const Tensor student = logits_for({1, 1, 0, 0}, 3);
  const auto stats = positive_flips(teacher, student, labels);
  CHECK(stats.per_sample == Flags{1, 0, 1, 0});
  CHECK(stats.rho_pos == 0.5);
  CHECK(stats.per_class_counts == std::vector<std::size_t>{1, 0, 1});
}

TEST_CASE("flip counts agree with a brute-force recount and respect the accuracy bound") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1000, c = 7;
    const Tensor t = random_logits(n, c, rng);
    const Tensor s = random_logits(n, c, rng);
    std::vector<int> labels(n);
    for (auto& y : labels) y = static_cast<int>(rng.below(c));
    const auto stats = positive_flips(t, s, labels);
    std::size_t brute = 0;
    std::vector<std::size_t> per_class(c, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t bt = 0, bs = 0;
      for (std::size_t j = 0; j < c; ++j) {
        if (t.at(i, j) > t.at(i, bt)) bt = j;
        if (s.at(i, j) > s.at(i, bs)) bs = j;
      }
      if (bt == static_cast<std::size_t>(labels[i]) && bs != static_cast<std::size_t>(labels[i])) {
        ++brute;
        ++per_class[static_cast<std::size_t>(labels[i])];
      }
    }
    CHECK(stats.total() == brute);
    CHECK(stats.per_class_counts == per_class);
    CHECK(stats.rho_pos == static_cast<double>(brute) / static_cast<double>(n));
    CHECK(stats.rho_pos <= std::min(accuracy(t, labels), 1.0 - accuracy(s, labels)));
  }
}

TEST_CASE("a uniformly random teacher flips err_s / c of the samples") {
  Rng rng(3);
  const std::size_t n = 40000, c = 10;
  std::vector<int> labels(n), student(n), teacher(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(rng.below(c));
    student[i] = rng.uniform() < 0.7 ? labels[i] : static_cast<int>(rng.below(c));
    teacher[i] = static_cast<int>(rng.below(c));
  }
  const auto stats = positive_flips(logits_for(teacher, c), logits_for(student, c), labels);
  const double err = 1.0 - accuracy(logits_for(student, c), labels);
  const double expected = err / static_cast<double>(c);
  const double se = std::sqrt(expected * (1 - expected) / static_cast<double>(n));
  CHECK(std::abs(stats.rho_pos - expected) < 4 * se);
}

TEST_CASE("flip entropy") {
  CHECK(flip_entropy(stats_from_counts({0, 7, 0})) == 0.0);
  CHECK(flip_entropy(stats_from_counts({3, 3, 3, 3})) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  // Direct evaluation of -sum p ln p for p = (1/2, 1/4, 1/4).
  const double oracle = -(0.5 * std::log(0.5) + 2 * 0.25 * std::log(0.25));
  CHECK(flip_entropy(stats_from_counts({2, 1, 1})) == doctest::Approx(oracle).epsilon(1e-15));
  CHECK_THROWS_AS(flip_entropy(stats_from_counts({0, 0})), Error);
}

TEST_CASE("flip entropy never exceeds ln(classes with flips)") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> counts(8);
    for (auto& k : counts) k = rng.below(3) == 0 ? 0 : rng.below(20);
    const auto nonzero = static_cast<double>(std::count_if(counts.begin(), counts.end(), [](auto k) { return k > 0; }));
    if (nonzero == 0) continue;
    CHECK(flip_entropy(stats_from_counts(counts)) <= std::log(nonzero) + 1e-12);
  }
}

TEST_CASE("top share classes") {
  const auto s = stats_from_counts({5, 3, 2});
  CHECK(top_share_classes(s, 50) == std::vector<std::size_t>{0});
  CHECK(top_share_classes(s, 60) == std::vector<std::size_t>{0, 1});
  CHECK(top_share_classes(stats_from_counts({0, 2, 0, 1}), 100) == std::vector<std::size_t>{1, 3});
  // Equal counts: lower class id first.
  CHECK(top_share_classes(stats_from_counts({1, 4, 4}), 10) == std::vector<std::size_t>{1});
  CHECK_THROWS_AS(top_share_classes(stats_from_counts({0, 0}), 50), Error);
  CHECK_THROWS_AS(top_share_classes(s, 0), ConfigError);
}

TEST_CASE("top share classes are monotone in the share") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> counts(6);
    for (auto& k : counts) k = rng.below(10);
    counts[0] += 1;
    const auto s = stats_from_counts(counts);
    double prev = 0.5;
    for (double x : {2.0, 5.0, 20.0, 50.0, 100.0}) {
      const auto small = top_share_classes(s, prev);
      const auto big = top_share_classes(s, x);
      CHECK(small.size() <= big.size());
      CHECK(std::equal(small.begin(), small.end(), big.begin()));
      prev = x;
    }
  }
}

TEST_CASE("semantic similarity") {
  Rng rng(6);
  SUBCASE("the full set is the baseline") {
    Tensor emb({5, 3});
    for (double& v : emb.data()) v = rng.uniform();
    const std::vector<std::size_t> all = {0, 1, 2, 3, 4};
    CHECK(std::abs(semantic_similarity(emb, all)) < 1e-12);
  }
  SUBCASE("a set of identical rows is more similar than average") {
    const Tensor emb({4, 3}, {1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1});
    const std::vector<std::size_t> set = {0, 1};
    // Overall mean pairwise cosine is 1/6; within the set it is 1.
    CHECK(semantic_similarity(emb, set) == doctest::Approx(5.0));
  }
  SUBCASE("random sets average to zero") {
    const int draws = 400;
    double total = 0.0, total_sq = 0.0;
    for (int d = 0; d < draws; ++d) {
      Tensor emb({10, 8});
      for (double& v : emb.data()) v = rng.uniform();
      std::vector<std::size_t> ids = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
      rng.shuffle(std::span<std::size_t>(ids));
      const std::vector<std::size_t> set(ids.begin(), ids.begin() + 3);
      const double r = semantic_similarity(emb, set);
      total += r;
      total_sq += r * r;
    }
    const double m = total / draws;
    const double se = std::sqrt((total_sq / draws - m * m) / draws);
    CHECK(std::abs(m) < 4 * se);
  }
  SUBCASE("errors") {
    const Tensor emb({3, 2}, 1.0);
    const std::vector<std::size_t> one = {1};
    CHECK_THROWS_AS(semantic_similarity(emb, one), ConfigError);
  }
}

TEST_CASE("transfer rate") {
  // Ten flips over classes 0 (six) and 1 (four).
  std::vector<int> labels(12);
  Flags flags(12, 0);
  for (std::size_t i = 0; i < 10; ++i) {
    labels[i] = i < 6 ? 0 : 1;
    flags[i] = 1;
  }
  labels[10] = labels[11] = 2;
  FlipStats stats;
  stats.per_sample = flags;
  stats.per_class_counts = {6, 4, 0};
  stats.rho_pos = 10.0 / 12.0;

  Flags all_fixed(12, 1);
  for (const auto& [x, r] : transfer_rate(stats, all_fixed, labels).curve) CHECK(r == 1.0);
  const Flags none(12, 0);
  const auto zero = transfer_rate(stats, none, labels);
  CHECK(zero.overall == 0.0);
  for (const auto& [x, r] : zero.curve) CHECK(r == 0.0);

  Flags six(12, 0);
  for (std::size_t i = 0; i < 6; ++i) six[i] = 1;
  const auto rate = transfer_rate(stats, six, labels);
  CHECK(rate.overall == doctest::Approx(0.6));
  // Class 0 alone covers 60% of flips, so the 2% curve point is class 0 only.
  CHECK(rate.curve.front().second == 1.0);
  CHECK(rate.curve.back().second == doctest::Approx(0.6));
}

TEST_CASE("knowledge gain and loss") {
  SUBCASE("no change") {
    const Flags before = {1, 0, 1, 0}, flips = {0, 1, 0, 0};
    const auto gl = knowledge_gain_loss(before, before, flips);
    CHECK(gl.gain == 0.0);
    CHECK(gl.loss == 0.0);
  }
  SUBCASE("student copies the teacher") {
    // Six samples; teacher right on {0, 1, 2, 3}, student right on {2, 3, 4, 5}.
    const Flags teacher = {1, 1, 1, 1, 0, 0};
    const Flags student = {0, 0, 1, 1, 1, 1};
    const Flags flips = {1, 1, 0, 0, 0, 0};
    const auto gl = knowledge_gain_loss(student, teacher, flips);
    CHECK(gl.gain == 1.0);
    // Student-correct samples the teacher gets wrong: {4, 5} out of 4.
    CHECK(gl.loss == 0.5);
  }
  SUBCASE("randomized predictions") {
    Rng rng(7);
    const std::size_t n = 50000, c = 10;
    Flags before(n), after(n), flips(n);
    for (std::size_t i = 0; i < n; ++i) {
      before[i] = rng.uniform() < 0.6;
      flips[i] = !before[i] && rng.uniform() < 0.5;
      after[i] = rng.below(c) == 0;
    }
    const auto gl = knowledge_gain_loss(before, after, flips);
    CHECK(gl.gain == doctest::Approx(0.1).epsilon(0.1));
    CHECK(gl.loss == doctest::Approx(0.9).epsilon(0.02));
  }
  SUBCASE("empty denominators") {
    const Flags z = {0, 0};
    CHECK_THROWS_AS(knowledge_gain_loss(z, z, z), Error);
  }
}

TEST_CASE("accuracy change decomposes exactly over aligned flags") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 300;
    Flags before(n), after(n), teacher(n), flips(n);
    for (std::size_t i = 0; i < n; ++i) {
      before[i] = rng.uniform() < 0.6;
      teacher[i] = rng.uniform() < 0.6;
      after[i] = rng.uniform() < 0.6;
      flips[i] = teacher[i] && !before[i];
    }
    const double delta = mean(after) - mean(before);
    const double rho = mean(flips);
    const auto gl = knowledge_gain_loss(before, after, flips);
    const auto parts = decompose_accuracy_change(before, after, flips);
    CHECK(std::abs(delta - (parts.flip_gain + parts.other_gain - parts.lost)) <= 1e-12);
    CHECK(std::abs(parts.flip_gain - gl.gain * rho) <= 1e-12);
    CHECK(std::abs(parts.lost - gl.loss * mean(before)) <= 1e-12);
    // Without gains outside the flip set, delta = gain * rho - loss * acc_before.
    Flags restricted = after;
    for (std::size_t i = 0; i < n; ++i) {
      if (!before[i] && !flips[i]) restricted[i] = 0;
    }
    const auto g2 = knowledge_gain_loss(before, restricted, flips);
    CHECK(std::abs((mean(restricted) - mean(before)) - (g2.gain * rho - g2.loss * mean(before))) <= 1e-12);
  }
}

TEST_CASE("success rate and binned top-quartile deltas") {
  auto report = [](double acc, double transf) {
    PairReport r;
    r.delta_acc = acc;
    r.delta_transf = transf;
    return r;
  };
  const std::vector<PairReport> up = {report(0, 0.1), report(0, 0.2)};
  CHECK(success_rate(up) == 1.0);
  const std::vector<PairReport> mixed = {report(0, -1), report(0, 1)};
  CHECK(success_rate(mixed) == 0.5);
  const std::vector<PairReport> zero = {report(0, 0.0)};
  CHECK(success_rate(zero) == 0.0);

  const std::vector<PairReport> four = {report(0.1, 1), report(0.2, 2), report(0.3, 3), report(0.4, 4)};
  const double edges[] = {-1.0, 0.0, 1.0, 2.0};
  const auto bins = binned_top_quartile_delta(four, edges);
  CHECK_FALSE(bins[0].has_value());
  CHECK(bins[1].value() == 4.0);
  CHECK_FALSE(bins[2].has_value());

  // Five members: ceil(5 / 4) = 2 top values averaged.
  std::vector<PairReport> five = four;
  five.push_back(report(1.0, 10));  // right edge of the middle bin belongs to the next bin
  five.push_back(report(0.5, 5));
  const auto bins5 = binned_top_quartile_delta(five, edges);
  CHECK(bins5[1].value() == 4.5);
  CHECK(bins5[2].value() == 10.0);
  CHECK_THROWS_AS(success_rate({}), ConfigError);
}
