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

#ifndef XFER_ZOO_HPP_
#define XFER_ZOO_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfer/data.hpp"
#include "xfer/models.hpp"

namespace xfer {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t data_seed = 0;  // batch order and augmentation draws
  double augment_noise = 0.0;
  bool augment_shift = false;

  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys are a ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainOutcome {
  Checkpoint checkpoint;
  double val_accuracy = 0.0;
  std::vector<double> epoch_loss;  // mean training loss per epoch
  bool failed = false;
  std::string error;
};

// Cross-entropy training from the seeded initialization with SGD. A non-finite
// loss stops training and marks the outcome failed.
TrainOutcome train_model(const ModelSpec& spec, std::uint64_t init_seed, const TrainConfig& cfg,
                         const Dataset& train, const Dataset& val);

struct ZooRequest {
  std::string name;
  ModelSpec spec;
  std::uint64_t seed = 0;
  TrainConfig train;
};

struct ZooEntry {
  std::string name;
  std::string checkpoint;  // relative to the manifest directory; empty if failed
  std::string digest;
  ModelSpec spec;
  TrainConfig train;
  std::uint64_t seed = 0;
  double val_accuracy = 0.0;
  bool failed = false;
  std::string error;
};

struct ZooManifest {
  std::vector<ZooEntry> entries;
  std::filesystem::path root;  // directory holding manifest.json

  std::filesystem::path checkpoint_path(const ZooEntry& entry) const { return root / entry.checkpoint; }
  Checkpoint load(const ZooEntry& entry) const;
  std::vector<const ZooEntry*> usable() const;
};

// Trains every request (up to `jobs` at a time), writes one checkpoint per
// model and manifest.json into `out_dir`. Entries are sorted by family then
// validation accuracy; failed entries follow the trained ones.
ZooManifest pretrain_zoo(const std::vector<ZooRequest>& requests, const Dataset& train,
                         const Dataset& val, const std::filesystem::path& out_dir,
                         std::size_t jobs = 1);

nlohmann::json to_json(const ZooManifest& manifest);
void save_manifest(const ZooManifest& manifest);
ZooManifest load_manifest(const std::filesystem::path& path);

struct PairFilter {
  std::optional<double> min_delta_acc;  // inclusive, accuracy fraction
  std::optional<double> max_delta_acc;  // exclusive
  std::optional<Family> teacher_family;
  std::optional<Family> student_family;
};

nlohmann::json to_json(const PairFilter& filter);
PairFilter pair_filter_from_json(const nlohmann::json& j);

struct ModelPair {
  std::size_t teacher = 0;  // manifest entry index
  std::size_t student = 0;
  double delta_acc = 0.0;  // teacher minus student validation accuracy
};

// Ordered (teacher, student) pairs over the trained entries, teacher-major in
// manifest order, without self-pairs.
std::vector<ModelPair> pair_grid(const ZooManifest& manifest, const PairFilter& filter = {});

}  // namespace xfer

#endif  // XFER_ZOO_HPP_
