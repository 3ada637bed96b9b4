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

#ifndef XFER_DATA_HPP_
#define XFER_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "xfer/random.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

struct Dataset {
  Tensor inputs;  // [n, sample_shape...]
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  std::vector<std::size_t> class_counts() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Tensor batch(std::span<const std::size_t> indices) const { return gather_rows(inputs, indices); }
};

// Throws ConfigError when labels and inputs disagree or a label is out of range.
void validate(const Dataset& ds);

// Balanced Gaussian-mixture classification data.
//
// Every class owns `modes_per_class` anchors. A vector sample is its anchor
// plus isotropic noise; an image sample is its anchor template shifted by up
// to one pixel in each direction plus pixel noise. `label_noise` of the labels
// are permuted among themselves once at generation, which keeps class counts
// exactly balanced while corrupting about that share of labels.
struct SyntheticConfig {
  enum class Kind { vector, image };

  Kind kind = Kind::vector;
  std::size_t num_classes = 10;
  std::size_t num_samples = 1000;
  std::size_t dims = 16;
  std::size_t image_size = 8;
  std::size_t modes_per_class = 1;
  double label_noise = 0.0;
  // Anchor norm (vector) or template RMS (image), in units of noise_std = 1.
  double separation = 3.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
};

Dataset generate_synthetic(const SyntheticConfig& cfg);

class IdxError : public Error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch };

  IdxError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Reads an IDX image file (magic 0x00000803, u8 pixels) and label file (magic
// 0x00000801). Pixels are scaled to [0, 1]; inputs are [n, 1, rows, cols].
// num_classes is max(label) + 1, at least 2.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

// Per class, floor(fraction * n_class) samples (at least one) drawn without
// replacement. Selected samples keep their original relative order.
Dataset stratified_subsample(const Dataset& ds, double fraction, std::uint64_t seed);

// Disjoint per-class split; the second dataset holds floor(holdout * n_class)
// samples of each class (at least one).
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double holdout, std::uint64_t seed);

// Visiting order for one epoch; a pure function of (n, seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

// Train-time jitter: additive Gaussian noise and, for [C, H, W] samples, an
// optional random translation by up to one pixel (zero fill).
void augment(Tensor& batch, double noise_std, bool shift, Rng& rng);

}  // namespace xfer

#endif  // XFER_DATA_HPP_
