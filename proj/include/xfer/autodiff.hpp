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

#ifndef XFER_AUTODIFF_HPP_
#define XFER_AUTODIFF_HPP_

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "xfer/random.hpp"
#include "xfer/tensor.hpp"

// Define-by-run reverse-mode differentiation over dense f64 tensors.
//
// A Tape records every operation of one forward pass. Nodes are appended in
// evaluation order, so the reverse of insertion order is a valid topological
// order for the backward sweep. Build a fresh tape for every forward pass.
namespace xfer::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the tape and the id of the node whose output gradient is ready;
  // accumulates into the operands' gradient slots.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  // Leaf whose gradient is accumulated by backward().
  Var parameter(Tensor value);

  // Appends an operation node. It requires a gradient iff any input does.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t input(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  // Gradient accumulated for `v` by the last backward(); zero-filled if the
  // node was not reached. Throws for nodes that do not require a gradient.
  const Tensor& grad(Var v) const;

  // Gradient of the node currently being back-propagated.
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  // Gradient accumulator for an operand, or nullptr if it takes no gradient.
  Tensor* grad_slot(std::size_t id);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// y = x W + b with x [n, k], W [k, m], b [m].
Var affine(Var x, Var weight, Var bias);
// a [n, k] times b [k, m].
Var matmul(Var a, Var b);
// a [n, d] times the transpose of b [m, d].
Var matmul_nt(Var a, Var b);

Var relu(Var x);

// 3x3 convolution with zero padding 1. x [n, C, H, W], weight [O, C, 3, 3],
// bias [O]; stride 1 or 2. Output spatial extent is (H - 1) / stride + 1.
Var conv2d(Var x, Var weight, Var bias, std::size_t stride);

// Mean over spatial positions: [n, C, H, W] -> [n, C].
Var global_avg_pool(Var x);

// [n, ...] -> [n, prod(...)].
Var flatten(Var x);

// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, Rng& rng);

// Row-wise log-softmax over the last axis of a 2-D input, max-shifted.
Var log_softmax(Var x);

Var exp(Var x);
Var scale(Var x, double factor);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// Sum of all elements, shape [1].
Var sum(Var x);
Var mean(Var x);

// out[i, j] = x[i, columns[i * k + j]] with x [n, c]; out is [n, k].
Var gather_cols(Var x, std::vector<std::size_t> columns, std::size_t k);
// out[i] = x[i, labels[i]]; out is [n].
Var pick(Var x, std::span<const int> labels);
// Each row divided by its Euclidean norm. Zero rows are an error.
Var l2_normalize_rows(Var x);

// Non-differentiated helpers on plain tensors, sharing the kernels above.
Tensor log_softmax(const Tensor& x);
Tensor softmax(const Tensor& x);

}  // namespace xfer::ad

#endif  // XFER_AUTODIFF_HPP_
