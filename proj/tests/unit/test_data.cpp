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

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "xfer/data.hpp"

using namespace xfer;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig cfg;
  cfg.num_classes = 5;
  cfg.num_samples = 200;
  cfg.dims = 6;
  cfg.modes_per_class = 3;
  cfg.label_noise = 0.1;
  cfg.seed = 17;
  return cfg;
}

// IDX bytes laid out by hand: magic, counts and dims big-endian, then u8 data.
std::vector<std::uint8_t> idx_images() {
  return {0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
          0, 255, 51, 102,     // image 0
          204, 153, 255, 0};   // image 1
}

std::vector<std::uint8_t> idx_labels(std::uint8_t count = 2) {
  std::vector<std::uint8_t> bytes = {0x00, 0x00, 0x08, 0x01, 0, 0, 0, count};
  for (std::uint8_t i = 0; i < count; ++i) bytes.push_back(i == 0 ? 3 : 1);
  return bytes;
}

std::multiset<std::vector<double>> rows_of_class(const Dataset& ds, int k) {
  std::multiset<std::vector<double>> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != k) continue;
    const auto r = ds.inputs.row(i);
    rows.emplace(r.begin(), r.end());
  }
  return rows;
}

}  // namespace

TEST_CASE("synthetic generation is reproducible byte for byte") {
  for (auto kind : {SyntheticConfig::Kind::vector, SyntheticConfig::Kind::image}) {
    auto cfg = small_config();
    cfg.kind = kind;
    const Dataset a = generate_synthetic(cfg);
    const Dataset b = generate_synthetic(cfg);
    CHECK(bit_equal(a.inputs, b.inputs));
    CHECK(a.labels == b.labels);
    cfg.seed += 1;
    CHECK_FALSE(bit_equal(a.inputs, generate_synthetic(cfg).inputs));
  }
}

TEST_CASE("synthetic classes are exactly balanced, with or without label noise") {
  for (double noise : {0.0, 0.3}) {
    auto cfg = small_config();
    cfg.label_noise = noise;
    const Dataset ds = generate_synthetic(cfg);
    for (auto count : ds.class_counts()) CHECK(count == cfg.num_samples / cfg.num_classes);
  }
}

TEST_CASE("label noise corrupts roughly the requested share") {
  auto cfg = small_config();
  cfg.num_samples = 2000;
  cfg.label_noise = 0.0;
  const Dataset clean = generate_synthetic(cfg);
  cfg.label_noise = 0.2;
  const Dataset noisy = generate_synthetic(cfg);
  CHECK(bit_equal(clean.inputs, noisy.inputs));
  std::size_t changed = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) changed += clean.labels[i] != noisy.labels[i];
  // 400 permuted labels; about 1/c of them land back on their own class.
  const double share = static_cast<double>(changed) / 2000.0;
  CHECK(share > 0.14);
  CHECK(share <= 0.2);
}

TEST_CASE("image variant has [n, 1, s, s] inputs") {
  auto cfg = small_config();
  cfg.kind = SyntheticConfig::Kind::image;
  cfg.image_size = 6;
  const Dataset ds = generate_synthetic(cfg);
  CHECK(ds.inputs.shape() == Shape{200, 1, 6, 6});
  CHECK(ds.sample_shape() == Shape{1, 6, 6});
}

TEST_CASE("synthetic config errors") {
  auto cfg = small_config();
  cfg.num_classes = 1;
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
  cfg = small_config();
  cfg.num_samples = 201;
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
}

TEST_CASE("handcrafted IDX fixture") {
  const Dataset ds = parse_idx(idx_images(), idx_labels());
  CHECK(ds.size() == 2);
  CHECK(ds.inputs.shape() == Shape{2, 1, 2, 2});
  CHECK(ds.num_classes == 4);
  CHECK(ds.labels == std::vector<int>{3, 1});
  const double expected[] = {0.0, 1.0, 0.2, 0.4, 0.8, 0.6, 1.0, 0.0};
  for (std::size_t i = 0; i < 8; ++i) CHECK(ds.inputs[i] == doctest::Approx(expected[i]).epsilon(1e-15));
}

TEST_CASE("IDX files load from disk") {
  const auto dir = std::filesystem::temp_directory_path();
  auto write = [](const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
  };
  write(dir / "xfer_idx_images", idx_images());
  write(dir / "xfer_idx_labels", idx_labels());
  write(dir / "xfer_idx_empty", {});
  CHECK(load_idx(dir / "xfer_idx_images", dir / "xfer_idx_labels").size() == 2);
  try {
    load_idx(dir / "xfer_idx_empty", dir / "xfer_idx_labels");
    FAIL("expected IdxError");
  } catch (const IdxError& e) {
    CHECK(e.kind() == IdxError::Kind::truncated);
  }
  CHECK_THROWS_AS(load_idx(dir / "does_not_exist", dir / "xfer_idx_labels"), IdxError);
}

TEST_CASE("IDX errors are distinct") {
  auto kind_of = [](std::vector<std::uint8_t> images, std::vector<std::uint8_t> labels) {
    try {
      parse_idx(images, labels);
    } catch (const IdxError& e) {
      return e.kind();
    }
    FAIL("expected IdxError");
    return IdxError::Kind::io;
  };
  CHECK(kind_of(idx_images(), idx_labels(3)) == IdxError::Kind::count_mismatch);
  auto bad = idx_images();
  bad[3] = 0x01;
  CHECK(kind_of(bad, idx_labels()) == IdxError::Kind::bad_magic);
  auto cut = idx_images();
  cut.pop_back();
  CHECK(kind_of(cut, idx_labels()) == IdxError::Kind::truncated);
  CHECK(kind_of({}, idx_labels()) == IdxError::Kind::truncated);
}

TEST_CASE("stratified subsample takes floor(fraction * n_class) per class") {
  SyntheticConfig cfg;
  cfg.num_classes = 10;
  cfg.num_samples = 1300;
  cfg.dims = 3;
  const Dataset ds = generate_synthetic(cfg);
  const Dataset sub = stratified_subsample(ds, 0.1, 4);
  for (auto count : sub.class_counts()) CHECK(count == 13);
  const Dataset again = stratified_subsample(ds, 0.1, 4);
  CHECK(bit_equal(sub.inputs, again.inputs));
  CHECK_FALSE(bit_equal(sub.inputs, stratified_subsample(ds, 0.1, 5).inputs));
  // At least one sample per class even when the fraction rounds to zero.
  for (auto count : stratified_subsample(ds, 0.001, 4).class_counts()) CHECK(count == 1);
}

TEST_CASE("fraction one keeps every per-class multiset") {
  const Dataset ds = generate_synthetic(small_config());
  const Dataset all = stratified_subsample(ds, 1.0, 9);
  CHECK(all.size() == ds.size());
  for (int k = 0; k < 5; ++k) CHECK(rows_of_class(all, k) == rows_of_class(ds, k));
}

TEST_CASE("stratified subsample errors") {
  Dataset ds{Tensor({4, 1}, 1.0), {0, 1, 0, 1}, 3};
  CHECK_THROWS_AS(stratified_subsample(ds, 0.5, 0), ConfigError);
  ds.num_classes = 2;
  CHECK_THROWS_AS(stratified_subsample(ds, 0.0, 0), ConfigError);
  CHECK_THROWS_AS(stratified_subsample(ds, 1.5, 0), ConfigError);
}

TEST_CASE("stratified split is disjoint and covers the dataset") {
  const Dataset ds = generate_synthetic(small_config());
  const auto [train, held] = stratified_split(ds, 0.25, 3);
  CHECK(train.size() + held.size() == ds.size());
  for (auto count : held.class_counts()) CHECK(count == 10);
  for (int k = 0; k < 5; ++k) {
    auto all = rows_of_class(ds, k);
    auto left = rows_of_class(train, k);
    auto right = rows_of_class(held, k);
    left.insert(right.begin(), right.end());
    CHECK(left == all);
  }
}

TEST_CASE("epoch order is a pure permutation of (n, seed, epoch)") {
  const auto a = epoch_order(50, 1, 3);
  CHECK(a == epoch_order(50, 1, 3));
  CHECK(a != epoch_order(50, 1, 4));
  CHECK(a != epoch_order(50, 2, 3));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("augment shifts images by at most one pixel") {
  Tensor batch({1, 1, 3, 3}, 0.0);
  batch[4] = 1.0;
  Rng rng(0);
  augment(batch, 0.0, true, rng);
  double total = 0.0;
  for (double v : batch.data()) total += v;
  CHECK(total == 1.0);
}
