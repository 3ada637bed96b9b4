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

#ifndef XFER_SGD_HPP_
#define XFER_SGD_HPP_

#include <span>
#include <string>
#include <vector>

#include "xfer/tensor.hpp"

namespace xfer {

// Heavy-ball SGD with L2 weight decay folded into the gradient:
//   v <- momentum * v + grad + weight_decay * theta
//   theta <- theta - lr * v
struct SgdState {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<Tensor> velocity;  // lazily zero-initialized on first step
};

// Updates `params` in place. `names` labels parameters in error messages and
// may be empty.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, SgdState& state,
              std::span<const std::string> names = {});

}  // namespace xfer

#endif  // XFER_SGD_HPP_
