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

#ifndef XFER_TESTS_SUPPORT_FIXTURES_HPP_
#define XFER_TESTS_SUPPORT_FIXTURES_HPP_

#include <utility>

#include "xfer/data.hpp"
#include "xfer/models.hpp"
#include "xfer/zoo.hpp"

namespace xfer::testing {

// Small vector task: 10 classes, two modes per class.
struct SmallTask {
  Dataset zoo_train;
  Dataset transfer;
  Dataset val;
};

inline SmallTask small_task(std::size_t n = 3000, std::uint64_t seed = 11) {
  SyntheticConfig cfg;
  cfg.num_samples = n;
  cfg.dims = 16;
  cfg.modes_per_class = 2;
  cfg.separation = 4.5;
  cfg.seed = seed;
  auto [rest, val] = stratified_split(generate_synthetic(cfg), 0.25, seed + 1);
  auto [zoo_train, transfer] = stratified_split(rest, 0.5, seed + 2);
  return {std::move(zoo_train), std::move(transfer), std::move(val)};
}

inline ModelSpec vector_mlp(std::size_t depth, std::size_t width, std::size_t dims = 16) {
  ModelSpec s;
  s.family = Family::mlp;
  s.depth = depth;
  s.width = width;
  s.input_shape = {dims};
  s.num_classes = 10;
  return s;
}

inline Checkpoint trained(const SmallTask& task, const ModelSpec& spec, std::uint64_t seed, std::size_t epochs = 8) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.data_seed = seed;
  return train_model(spec, seed, tc, task.zoo_train, task.val).checkpoint;
}

}  // namespace xfer::testing

#endif  // XFER_TESTS_SUPPORT_FIXTURES_HPP_
