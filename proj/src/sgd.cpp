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

#include "xfer/sgd.hpp"

#include <cmath>

namespace xfer {

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, SgdState& state,
              std::span<const std::string> names) {
  if (!(state.lr >= 0.0) || !(state.momentum >= 0.0 && state.momentum < 1.0) ||
      !(state.weight_decay >= 0.0)) {
    throw ConfigError("sgd: lr and weight_decay must be >= 0 and momentum in [0, 1)");
  }
  if (params.size() != grads.size()) {
    throw ShapeError("sgd: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  auto label = [&](std::size_t i) {
    return i < names.size() ? names[i] : "#" + std::to_string(i);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw ShapeError("sgd: parameter " + label(i) + " has shape " +
                       to_string(params[i].shape()) + " but gradient " +
                       to_string(grads[i].shape()));
    }
    if (!grads[i].all_finite()) throw NumericError("sgd: non-finite gradient for parameter " + label(i));
  }
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const Tensor& p : params) state.velocity.emplace_back(p.shape(), 0.0);
  }
  if (state.velocity.size() != params.size()) throw ShapeError("sgd: velocity count mismatch");

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = params[i];
    Tensor& v = state.velocity[i];
    if (v.shape() != theta.shape()) throw ShapeError("sgd: velocity shape mismatch for " + label(i));
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j] + state.weight_decay * theta[j];
      theta[j] -= state.lr * v[j];
    }
  }
}

}  // namespace xfer
