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

#include "xfer/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "xfer/hash.hpp"
#include "xfer/random.hpp"

namespace xfer {
namespace {

constexpr char kMagic[4] = {'X', 'F', 'K', 'Z'};
constexpr std::uint8_t kVersion = 1;

std::vector<std::size_t> resolved_strides(const ModelSpec& spec) {
  if (!spec.strides.empty()) return spec.strides;
  std::vector<std::size_t> strides(spec.channels.size(), 2);
  if (!strides.empty()) strides[0] = 1;
  return strides;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string to_string(Family family) { return family == Family::mlp ? "mlp" : "cnn"; }

Family family_from_string(const std::string& name) {
  if (name == "mlp") return Family::mlp;
  if (name == "cnn") return Family::cnn;
  throw ConfigError("unsupported model family '" + name + "' (expected mlp or cnn)");
}

void validate(const ModelSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  if (!(spec.dropout >= 0.0 && spec.dropout < 1.0)) {
    throw ConfigError("model: dropout must be in [0, 1)");
  }
  if (spec.input_shape.empty()) throw ConfigError("model: input_shape must be nonempty");
  for (auto extent : spec.input_shape) {
    if (extent == 0) throw ConfigError("model: input_shape extents must be positive");
  }
  switch (spec.family) {
    case Family::mlp:
      if (spec.depth == 0) throw ConfigError("mlp: depth must be >= 1");
      if (spec.depth > 1 && spec.width == 0) throw ConfigError("mlp: width must be >= 1");
      if (!spec.channels.empty() || !spec.strides.empty()) {
        throw ConfigError("mlp: channels/strides are cnn-only fields");
      }
      break;
    case Family::cnn:
      if (spec.channels.empty()) throw ConfigError("cnn: channels must be nonempty");
      if (spec.depth != spec.channels.size()) {
        throw ConfigError("cnn: depth must equal the number of conv layers");
      }
      if (spec.input_shape.size() != 3) throw ConfigError("cnn: input_shape must be [C, H, W]");
      for (auto c : spec.channels) {
        if (c == 0) throw ConfigError("cnn: channel counts must be positive");
      }
      if (!spec.strides.empty() && spec.strides.size() != spec.channels.size()) {
        throw ConfigError("cnn: strides must match channels in length");
      }
      for (auto s : spec.strides) {
        if (s != 1 && s != 2) throw ConfigError("cnn: strides must be 1 or 2");
      }
      break;
  }
}

std::vector<ParamInfo> param_layout(const ModelSpec& spec) {
  validate(spec);
  std::vector<ParamInfo> layout;
  std::size_t in = numel(spec.input_shape);
  if (spec.family == Family::mlp) {
    for (std::size_t l = 0; l + 1 < spec.depth; ++l) {
      layout.push_back({"fc" + std::to_string(l) + ".weight", {in, spec.width}});
      layout.push_back({"fc" + std::to_string(l) + ".bias", {spec.width}});
      in = spec.width;
    }
  } else {
    in = spec.input_shape[0];
    for (std::size_t l = 0; l < spec.channels.size(); ++l) {
      layout.push_back({"conv" + std::to_string(l) + ".weight", {spec.channels[l], in, 3, 3}});
      layout.push_back({"conv" + std::to_string(l) + ".bias", {spec.channels[l]}});
      in = spec.channels[l];
    }
  }
  layout.push_back({"head.weight", {in, spec.num_classes}});
  layout.push_back({"head.bias", {spec.num_classes}});
  return layout;
}

std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t total = 0;
  for (const auto& p : param_layout(spec)) total += numel(p.shape);
  return total;
}

std::size_t feature_width(const ModelSpec& spec) {
  validate(spec);
  if (spec.family == Family::cnn) return spec.channels.back();
  return spec.depth > 1 ? spec.width : numel(spec.input_shape);
}

nlohmann::json to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["family"] = to_string(spec.family);
  j["depth"] = spec.depth;
  if (spec.family == Family::mlp) {
    if (spec.depth > 1) j["width"] = spec.width;
  } else {
    j["channels"] = spec.channels;
    j["strides"] = resolved_strides(spec);
  }
  j["dropout"] = spec.dropout;
  j["input_shape"] = spec.input_shape;
  j["num_classes"] = spec.num_classes;
  return j;
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model spec must be a JSON object");
  static const std::vector<std::string> known = {"family",  "depth",       "width",      "channels",
                                                 "strides", "dropout",     "input_shape", "num_classes"};
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw ConfigError("model spec: unknown key '" + item.key() + "'");
    }
  }
  try {
    ModelSpec spec;
    spec.family = family_from_string(j.at("family").get<std::string>());
    if (spec.family == Family::cnn) {
      spec.channels = j.at("channels").get<std::vector<std::size_t>>();
      spec.depth = j.value("depth", spec.channels.size());
      if (j.contains("strides")) spec.strides = j.at("strides").get<std::vector<std::size_t>>();
      if (j.contains("width")) throw ConfigError("cnn: width is an mlp-only field");
    } else {
      spec.depth = j.at("depth").get<std::size_t>();
      spec.width = j.value("width", std::size_t{0});
      if (spec.depth == 1) spec.width = 0;
      if (j.contains("channels") || j.contains("strides")) {
        throw ConfigError("mlp: channels/strides are cnn-only fields");
      }
    }
    spec.dropout = j.value("dropout", 0.0);
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    if (spec.family == Family::cnn && spec.strides.empty()) spec.strides = resolved_strides(spec);
    validate(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
}

std::string digest(const ModelSpec& spec) {
  Fnv1a h;
  h.update(to_json(spec).dump());
  return to_hex(h.value());
}

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.spec == b.spec) || a.meta != b.meta || a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].name != b.params[i].name || !bit_equal(a.params[i].value, b.params[i].value)) {
      return false;
    }
  }
  return true;
}

Checkpoint build(const ModelSpec& spec, std::uint64_t seed) {
  Checkpoint ck;
  ck.spec = spec;
  if (ck.spec.family == Family::cnn && ck.spec.strides.empty()) {
    ck.spec.strides = resolved_strides(spec);
  }
  if (ck.spec.family == Family::mlp && ck.spec.depth == 1) ck.spec.width = 0;
  Rng rng(seed);
  for (auto& info : param_layout(ck.spec)) {
    Tensor t(info.shape, 0.0);
    if (info.shape.size() > 1) {
      // Fan-in: rows of an affine weight, in_channels * 9 for a conv kernel.
      const std::size_t fan_in =
          info.shape.size() == 4 ? info.shape[1] * info.shape[2] * info.shape[3] : info.shape[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
    }
    ck.params.push_back({std::move(info.name), std::move(t)});
  }
  ck.meta["seed"] = seed;
  return ck;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ck) {
  nlohmann::json header;
  header["spec"] = to_json(ck.spec);
  header["params"] = nlohmann::json::array();
  for (const auto& p : ck.params) {
    header["params"].push_back({{"name", p.name}, {"shape", p.value.shape()}});
  }
  header["meta"] = ck.meta;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : ck.params) {
    for (double v : p.value.data()) put_f64(out, v);
  }
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(Kind::not_checkpoint, "not a checkpoint file (bad magic bytes)");
  }
  if (bytes.size() < 9) throw CheckpointError(Kind::truncated, "checkpoint truncated inside preamble");
  if (bytes[4] != kVersion) {
    throw CheckpointError(Kind::unsupported_version,
                          "unsupported checkpoint version " + std::to_string(bytes[4]));
  }
  std::uint32_t header_len = 0;
  for (int i = 0; i < 4; ++i) header_len |= static_cast<std::uint32_t>(bytes[5 + i]) << (8 * i);
  if (bytes.size() - 9 < header_len) {
    throw CheckpointError(Kind::truncated, "checkpoint truncated inside header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::corrupt_header, std::string("checkpoint header: ") + e.what());
  }

  Checkpoint ck;
  std::size_t declared = 0;
  try {
    ck.spec = spec_from_json(header.at("spec"));
    ck.meta = header.value("meta", nlohmann::json::object());
    const auto layout = param_layout(ck.spec);
    const auto& entries = header.at("params");
    if (entries.size() != layout.size()) {
      throw CheckpointError(Kind::shape_mismatch,
                            "checkpoint header lists " + std::to_string(entries.size()) +
                                " parameters, spec requires " + std::to_string(layout.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto name = entries[i].at("name").get<std::string>();
      const auto shape = entries[i].at("shape").get<Shape>();
      if (name != layout[i].name || shape != layout[i].shape) {
        throw CheckpointError(Kind::shape_mismatch,
                              "checkpoint parameter " + name + " " + to_string(shape) +
                                  " disagrees with spec (" + layout[i].name + " " +
                                  to_string(layout[i].shape) + ")");
      }
      declared += numel(shape);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::corrupt_header, std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::corrupt_header, std::string("checkpoint header: ") + e.what());
  }

  const std::size_t payload = bytes.size() - 9 - header_len;
  if (payload < declared * 8) {
    throw CheckpointError(Kind::truncated, "checkpoint truncated: header declares " +
                                               std::to_string(declared) + " floats, payload has " +
                                               std::to_string(payload / 8));
  }
  if (payload > declared * 8) {
    throw CheckpointError(Kind::trailing_data, "checkpoint has " +
                                                   std::to_string(payload - declared * 8) +
                                                   " unexpected trailing bytes");
  }
  const std::uint8_t* cursor = bytes.data() + 9 + header_len;
  for (auto& info : param_layout(ck.spec)) {
    std::vector<double> values(numel(info.shape));
    for (double& v : values) {
      v = get_f64(cursor);
      cursor += 8;
    }
    ck.params.push_back({info.name, Tensor(info.shape, std::move(values))});
  }
  return ck;
}

void save(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

ForwardOutput forward(const ModelSpec& spec, std::span<const ad::Var> params, ad::Var input,
                      Mode mode, Rng* dropout_rng) {
  const auto layout = param_layout(spec);
  if (params.size() != layout.size()) {
    throw ShapeError("forward: expected " + std::to_string(layout.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  Shape expected = spec.input_shape;
  expected.insert(expected.begin(), input.value().rows());
  if (input.shape() != expected) {
    throw ShapeError("forward: input shape " + to_string(input.shape()) + " does not match model input " +
                     to_string(expected));
  }

  ad::Var h = input;
  std::size_t p = 0;
  if (spec.family == Family::mlp) {
    h = ad::flatten(h);
    for (std::size_t l = 0; l + 1 < spec.depth; ++l, p += 2) {
      h = ad::relu(ad::affine(h, params[p], params[p + 1]));
    }
  } else {
    const auto strides = resolved_strides(spec);
    for (std::size_t l = 0; l < spec.channels.size(); ++l, p += 2) {
      h = ad::relu(ad::conv2d(h, params[p], params[p + 1], strides[l]));
    }
    h = ad::global_avg_pool(h);
  }
  ForwardOutput out;
  out.features = h;
  if (mode == Mode::train && spec.dropout > 0.0) {
    if (dropout_rng == nullptr) throw Error("forward: train-mode dropout needs an rng");
    h = ad::dropout(h, spec.dropout, *dropout_rng);
  }
  out.logits = ad::affine(h, params[p], params[p + 1]);
  return out;
}

std::pair<Tensor, Tensor> predict_logits_and_features(const Checkpoint& ck, const Tensor& batch) {
  ad::Tape tape;
  std::vector<ad::Var> params;
  params.reserve(ck.params.size());
  for (const auto& p : ck.params) params.push_back(tape.constant(p.value));
  const auto out = forward(ck.spec, params, tape.constant(batch), Mode::eval, nullptr);
  return {out.logits.value(), out.features.value()};
}

Tensor predict_logits(const Checkpoint& ck, const Tensor& batch) {
  return predict_logits_and_features(ck, batch).first;
}

std::vector<Tensor> parameter_values(const Checkpoint& ck) {
  std::vector<Tensor> values;
  values.reserve(ck.params.size());
  for (const auto& p : ck.params) values.push_back(p.value);
  return values;
}

std::uint64_t parameter_hash(const Checkpoint& ck) {
  Fnv1a h;
  for (const auto& p : ck.params) {
    h.update(p.name);
    h.update(p.value.ptr(), p.value.size() * sizeof(double));
  }
  return h.value();
}

}  // namespace xfer
