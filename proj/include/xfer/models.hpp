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

#ifndef XFER_MODELS_HPP_
#define XFER_MODELS_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xfer/autodiff.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

enum class Family { mlp, cnn };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

// Architecture of a zoo classifier.
//
// mlp: `depth` affine layers; the first depth - 1 are hidden layers of
//      `width` units with ReLU. depth == 1 is a linear probe.
// cnn: one 3x3 conv + ReLU per entry of `channels` (stride from `strides`,
//      default 1 for the first layer and 2 afterwards), global average pool,
//      then a linear head. Input must be [C, H, W].
// Both families apply `dropout` to the pooled features in train mode.
struct ModelSpec {
  Family family = Family::mlp;
  std::size_t depth = 2;
  std::size_t width = 32;
  std::vector<std::size_t> channels;
  std::vector<std::size_t> strides;
  double dropout = 0.0;
  Shape input_shape;
  std::size_t num_classes = 10;

  bool operator==(const ModelSpec&) const = default;
};

// Throws ConfigError describing the first violated constraint.
void validate(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);
// Width of the representation fed to the classification head.
std::size_t feature_width(const ModelSpec& spec);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);
// Stable 16-hex-digit digest of the canonical JSON form.
std::string digest(const ModelSpec& spec);

struct ParamInfo {
  std::string name;
  Shape shape;
};
// Parameter names and shapes in canonical (serialization) order.
std::vector<ParamInfo> param_layout(const ModelSpec& spec);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  ModelSpec spec;
  std::vector<NamedTensor> params;
  nlohmann::json meta = nlohmann::json::object();
};

// Spec, parameter names, meta and every parameter bit pattern agree.
bool operator==(const Checkpoint& a, const Checkpoint& b);

// Kaiming-uniform (fan-in, ReLU gain) weights and zero biases.
Checkpoint build(const ModelSpec& spec, std::uint64_t seed);

class CheckpointError : public Error {
 public:
  enum class Kind { not_checkpoint, unsupported_version, truncated, corrupt_header, shape_mismatch, trailing_data, io };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Binary layout: "XFKZ", version byte, u32 little-endian header length, UTF-8
// JSON header {spec, params: [{name, shape}], meta}, then the parameters as
// little-endian f64 in header order.
std::vector<std::uint8_t> serialize(const Checkpoint& ck);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);
void save(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

enum class Mode { eval, train };

struct ForwardOutput {
  ad::Var logits;    // [n, num_classes]
  ad::Var features;  // [n, feature_width], pre-dropout
};

// Records the model on `tape`. `params` follow param_layout order. In train
// mode dropout draws from `dropout_rng`, which may be null in eval mode.
ForwardOutput forward(const ModelSpec& spec, std::span<const ad::Var> params, ad::Var input,
                      Mode mode, Rng* dropout_rng);

// Eval-mode logits for a batch [n, input_shape...].
Tensor predict_logits(const Checkpoint& ck, const Tensor& batch);
// Eval-mode logits and pre-head features.
std::pair<Tensor, Tensor> predict_logits_and_features(const Checkpoint& ck, const Tensor& batch);

// Parameter tensors in layout order (copies).
std::vector<Tensor> parameter_values(const Checkpoint& ck);
// Content hash over the parameter bit patterns.
std::uint64_t parameter_hash(const Checkpoint& ck);

}  // namespace xfer

#endif  // XFER_MODELS_HPP_
