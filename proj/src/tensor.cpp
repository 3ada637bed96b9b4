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

#include "xfer/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

namespace xfer {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(numel(shape_), fill) {
  for (auto extent : shape_) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto extent : shape_) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape_));
  }
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + to_string(shape_) + " needs " +
                     std::to_string(numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  Shape shape = t.shape();
  shape[0] = indices.size();
  const std::size_t width = t.cols();
  std::vector<double> data(indices.size() * width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.rows()) throw ShapeError("gather_rows: index out of range");
    std::memcpy(data.data() + i * width, t.ptr() + indices[i] * width, width * sizeof(double));
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace xfer
