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

#include "xfer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace xfer {
namespace {

// Copies a [rows, cols] plane shifted by (dy, dx) with zero fill.
void shift_plane(const double* src, double* dst, std::size_t rows, std::size_t cols,
                 int dy, int dx) {
  for (std::size_t y = 0; y < rows; ++y) {
    for (std::size_t x = 0; x < cols; ++x) {
      const auto sy = static_cast<std::ptrdiff_t>(y) - dy;
      const auto sx = static_cast<std::ptrdiff_t>(x) - dx;
      const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(rows) &&
                          sx < static_cast<std::ptrdiff_t>(cols);
      dst[y * cols + x] = inside ? src[static_cast<std::size_t>(sy) * cols + static_cast<std::size_t>(sx)] : 0.0;
    }
  }
}

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  return by_class;
}

std::size_t per_class_take(double fraction, std::size_t available) {
  // The epsilon absorbs representation error, e.g. 0.29 * 100 = 28.999...
  const auto take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(available) + 1e-9));
  return std::clamp<std::size_t>(take, 1, available);
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Shape Dataset::sample_shape() const {
  Shape shape = inputs.shape();
  if (!shape.empty()) shape.erase(shape.begin());
  return shape;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.inputs = gather_rows(inputs, indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels.at(i));
  out.num_classes = num_classes;
  return out;
}

void validate(const Dataset& ds) {
  if (ds.num_classes < 2) throw ConfigError("dataset: need at least 2 classes");
  if (ds.inputs.rows() != ds.labels.size()) {
    throw ConfigError("dataset: " + std::to_string(ds.inputs.rows()) + " inputs but " +
                      std::to_string(ds.labels.size()) + " labels");
  }
  for (int y : ds.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= ds.num_classes) {
      throw ConfigError("dataset: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(ds.num_classes) + ")");
    }
  }
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
  if (cfg.num_samples == 0 || cfg.num_samples % cfg.num_classes != 0) {
    throw ConfigError("synthetic: num_samples must be a positive multiple of num_classes");
  }
  if (cfg.modes_per_class == 0) throw ConfigError("synthetic: modes_per_class must be >= 1");
  if (!(cfg.label_noise >= 0.0 && cfg.label_noise < 1.0)) {
    throw ConfigError("synthetic: label_noise must be in [0, 1)");
  }
  if (!(cfg.noise_std >= 0.0) || !(cfg.separation >= 0.0)) {
    throw ConfigError("synthetic: separation and noise_std must be nonnegative");
  }
  const bool image = cfg.kind == SyntheticConfig::Kind::image;
  if (image && cfg.image_size < 3) throw ConfigError("synthetic: image_size must be >= 3");
  if (!image && cfg.dims == 0) throw ConfigError("synthetic: dims must be >= 1");

  const std::size_t side = cfg.image_size;
  const std::size_t width = image ? side * side : cfg.dims;
  const std::size_t num_anchors = cfg.num_classes * cfg.modes_per_class;

  Rng anchor_rng = Rng::derive(cfg.seed, 1);
  std::vector<std::vector<double>> anchors(num_anchors, std::vector<double>(width));
  for (auto& anchor : anchors) {
    for (double& v : anchor) v = anchor_rng.normal();
    if (image) {
      // 3x3 box blur gives templates spatial structure worth convolving over.
      std::vector<double> blurred(width, 0.0);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
              const auto sx = static_cast<std::ptrdiff_t>(x) + dx;
              if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(side) ||
                  sx >= static_cast<std::ptrdiff_t>(side)) {
                continue;
              }
              blurred[y * side + x] += anchor[static_cast<std::size_t>(sy) * side + static_cast<std::size_t>(sx)];
            }
      anchor = std::move(blurred);
    }
    double sq = 0.0;
    for (double v : anchor) sq += v * v;
    // Vector anchors get norm `separation`; image templates get RMS `separation`.
    const double norm = image ? std::sqrt(sq / static_cast<double>(width)) : std::sqrt(sq);
    for (double& v : anchor) v *= cfg.separation / norm;
  }

  const std::size_t n = cfg.num_samples;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % cfg.num_classes);
  Rng sample_rng = Rng::derive(cfg.seed, 2);
  sample_rng.shuffle(std::span<int>(labels));

  Shape shape = image ? Shape{n, 1, side, side} : Shape{n, cfg.dims};
  Tensor inputs(shape);
  std::vector<double> shifted(width);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t mode = sample_rng.below(cfg.modes_per_class);
    const auto& anchor = anchors[static_cast<std::size_t>(labels[i]) * cfg.modes_per_class + mode];
    double* out = inputs.ptr() + i * width;
    if (image) {
      const int dy = static_cast<int>(sample_rng.below(3)) - 1;
      const int dx = static_cast<int>(sample_rng.below(3)) - 1;
      shift_plane(anchor.data(), shifted.data(), side, side, dy, dx);
      for (std::size_t j = 0; j < width; ++j) out[j] = shifted[j] + cfg.noise_std * sample_rng.normal();
    } else {
      for (std::size_t j = 0; j < width; ++j) out[j] = anchor[j] + cfg.noise_std * sample_rng.normal();
    }
  }

  // Corrupt a fixed subset by permuting its labels: class totals are unchanged.
  const auto noisy = static_cast<std::size_t>(std::llround(cfg.label_noise * static_cast<double>(n)));
  if (noisy > 1) {
    Rng noise_rng = Rng::derive(cfg.seed, 3);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    noise_rng.shuffle(std::span<std::size_t>(order));
    std::vector<int> picked(noisy);
    for (std::size_t k = 0; k < noisy; ++k) picked[k] = labels[order[k]];
    noise_rng.shuffle(std::span<int>(picked));
    for (std::size_t k = 0; k < noisy; ++k) labels[order[k]] = picked[k];
  }

  Dataset ds{std::move(inputs), std::move(labels), cfg.num_classes};
  return ds;
}

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  using Kind = IdxError::Kind;
  if (images.size() < 16) throw IdxError(Kind::truncated, "idx images: file shorter than header");
  if (labels.size() < 8) throw IdxError(Kind::truncated, "idx labels: file shorter than header");
  if (read_be32(images, 0) != 0x00000803) {
    throw IdxError(Kind::bad_magic, "idx images: bad magic (expected 0x00000803)");
  }
  if (read_be32(labels, 0) != 0x00000801) {
    throw IdxError(Kind::bad_magic, "idx labels: bad magic (expected 0x00000801)");
  }
  const std::size_t n = read_be32(images, 4);
  const std::size_t rows = read_be32(images, 8);
  const std::size_t cols = read_be32(images, 12);
  const std::size_t label_count = read_be32(labels, 4);
  if (n != label_count) {
    throw IdxError(Kind::count_mismatch, "idx: " + std::to_string(n) + " images but " +
                                             std::to_string(label_count) + " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw IdxError(Kind::truncated, "idx images: empty dataset");
  const std::size_t plane = rows * cols;
  if (images.size() - 16 < n * plane) {
    throw IdxError(Kind::truncated, "idx images: payload shorter than " + std::to_string(n) + " images");
  }
  if (labels.size() - 8 < n) throw IdxError(Kind::truncated, "idx labels: payload shorter than declared");

  Tensor inputs({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * plane; ++i) inputs[i] = static_cast<double>(images[16 + i]) / 255.0;
  std::vector<int> ys(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ys[i] = labels[8 + i];
    max_label = std::max(max_label, ys[i]);
  }
  return Dataset{std::move(inputs), std::move(ys), std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1)};
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto image_bytes = read_file(images);
  const auto label_bytes = read_file(labels);
  return parse_idx(image_bytes, label_bytes);
}

Dataset stratified_subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("stratified_subsample: fraction must be in (0, 1]");
  }
  validate(ds);
  const auto by_class = indices_by_class(ds);
  std::vector<std::size_t> chosen;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    if (by_class[k].empty()) throw ConfigError("stratified_subsample: class " + std::to_string(k) + " is empty");
    auto pool = by_class[k];
    Rng rng = Rng::derive(seed, 0x5u, k);
    rng.shuffle(std::span<std::size_t>(pool));
    pool.resize(per_class_take(fraction, pool.size()));
    chosen.insert(chosen.end(), pool.begin(), pool.end());
  }
  std::sort(chosen.begin(), chosen.end());
  return ds.subset(chosen);
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double holdout, std::uint64_t seed) {
  if (!(holdout > 0.0 && holdout < 1.0)) throw ConfigError("stratified_split: holdout must be in (0, 1)");
  validate(ds);
  const auto by_class = indices_by_class(ds);
  std::vector<std::size_t> keep;
  std::vector<std::size_t> held;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    if (by_class[k].size() < 2) {
      throw ConfigError("stratified_split: class " + std::to_string(k) + " needs at least 2 samples");
    }
    auto pool = by_class[k];
    Rng rng = Rng::derive(seed, 0x6u, k);
    rng.shuffle(std::span<std::size_t>(pool));
    const std::size_t take = std::min(per_class_take(holdout, pool.size()), pool.size() - 1);
    held.insert(held.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    keep.insert(keep.end(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end());
  }
  std::sort(keep.begin(), keep.end());
  std::sort(held.begin(), held.end());
  return {ds.subset(keep), ds.subset(held)};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, 0x7u, epoch);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

void augment(Tensor& batch, double noise_std, bool shift, Rng& rng) {
  if (shift && batch.rank() == 4) {
    const std::size_t rows = batch.dim(2), cols = batch.dim(3);
    const std::size_t plane = rows * cols;
    std::vector<double> scratch(plane);
    for (std::size_t s = 0; s < batch.dim(0); ++s) {
      const int dy = static_cast<int>(rng.below(3)) - 1;
      const int dx = static_cast<int>(rng.below(3)) - 1;
      for (std::size_t c = 0; c < batch.dim(1); ++c) {
        double* p = batch.ptr() + (s * batch.dim(1) + c) * plane;
        shift_plane(p, scratch.data(), rows, cols, dy, dx);
        std::copy(scratch.begin(), scratch.end(), p);
      }
    }
  }
  if (noise_std > 0.0) {
    for (double& v : batch.data()) v += noise_std * rng.normal();
  }
}

}  // namespace xfer
