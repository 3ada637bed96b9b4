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

#include "xfer/transfer.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "xfer/json_util.hpp"
#include "xfer/sgd.hpp"

namespace xfer {

std::string to_string(Method method) {
  switch (method) {
    case Method::kl: return "kl";
    case Method::xe_kl: return "xe_kl";
    case Method::xe_kl_mcl: return "xe_kl_mcl";
    case Method::kl_dp_sup: return "kl_dp_sup";
    case Method::kl_dp_unsup: return "kl_dp_unsup";
    case Method::cd: return "cd";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  std::string valid;
  for (Method m : kAllMethods) {
    if (to_string(m) == name) return m;
    valid += (valid.empty() ? "" : ", ") + to_string(m);
  }
  throw ConfigError("unknown transfer method '" + name + "' (valid: " + valid + ")");
}

bool is_partitioned(Method method) { return method == Method::kl_dp_sup || method == Method::kl_dp_unsup; }

TransferHyperparams default_hyperparams(Method method) {
  TransferHyperparams hp;
  switch (method) {
    case Method::kl:
    case Method::kl_dp_sup:
    case Method::kl_dp_unsup: hp.lambda = 1.0; break;
    case Method::xe_kl: hp.lambda = 0.5; break;
    case Method::xe_kl_mcl:
      hp.lambda = 0.7;
      hp.lr = 0.01;
      break;
    case Method::cd: hp.lambda = 0.5; break;
  }
  return hp;
}

void validate(const TransferHyperparams& hp) {
  if (!(hp.temperature > 0.0)) throw ConfigError("transfer: temperature must be positive");
  if (!(hp.lambda >= 0.0 && hp.lambda <= 1.0)) throw ConfigError("transfer: lambda must lie in [0, 1]");
  if (!(hp.lr >= 0.0) || !(hp.weight_decay >= 0.0)) throw ConfigError("transfer: lr and weight_decay must be >= 0");
  if (!(hp.momentum >= 0.0 && hp.momentum < 1.0)) throw ConfigError("transfer: momentum must lie in [0, 1)");
  if (!(hp.tau >= 0.0 && hp.tau <= 1.0)) throw ConfigError("transfer: tau must lie in [0, 1]");
  if (hp.interp_every == 0) throw ConfigError("transfer: interp_every must be positive");
  if (hp.batch_size == 0) throw ConfigError("transfer: batch_size must be positive");
}

nlohmann::json to_json(const TransferHyperparams& hp) {
  return {{"lr", hp.lr},
          {"temperature", hp.temperature},
          {"lambda", hp.lambda},
          {"epochs", hp.epochs},
          {"batch_size", hp.batch_size},
          {"seed", hp.seed},
          {"momentum", hp.momentum},
          {"weight_decay", hp.weight_decay},
          {"tau", hp.tau},
          {"interp_every", hp.interp_every},
          {"topk", hp.topk}};
}

TransferHyperparams hyperparams_from_json(const nlohmann::json& j, Method method) {
  constexpr std::string_view ctx = "transfer hyperparams";
  reject_unknown_keys(j,
                      {"lr", "temperature", "lambda", "epochs", "batch_size", "seed", "momentum", "weight_decay",
                       "tau", "interp_every", "topk"},
                      ctx);
  auto hp = default_hyperparams(method);
  hp.lr = get_or(j, "lr", hp.lr, ctx);
  hp.temperature = get_or(j, "temperature", hp.temperature, ctx);
  hp.lambda = get_or(j, "lambda", hp.lambda, ctx);
  hp.epochs = get_or(j, "epochs", hp.epochs, ctx);
  hp.batch_size = get_or(j, "batch_size", hp.batch_size, ctx);
  hp.seed = get_or(j, "seed", hp.seed, ctx);
  hp.momentum = get_or(j, "momentum", hp.momentum, ctx);
  hp.weight_decay = get_or(j, "weight_decay", hp.weight_decay, ctx);
  hp.tau = get_or(j, "tau", hp.tau, ctx);
  hp.interp_every = get_or(j, "interp_every", hp.interp_every, ctx);
  hp.topk = get_or(j, "topk", hp.topk, ctx);
  validate(hp);
  return hp;
}

void mcl_interpolate(MclState& state, std::size_t iteration) {
  if (iteration == 0) throw ConfigError("mcl_interpolate: iterations count from 1");
  if (state.interp_every == 0) throw ConfigError("mcl_interpolate: interp_every must be positive");
  if (state.slow.size() != state.fast.size()) throw ShapeError("mcl_interpolate: parameter count mismatch");
  for (std::size_t i = 0; i < state.slow.size(); ++i) {
    if (state.slow[i].shape() != state.fast[i].shape()) {
      throw ShapeError("mcl_interpolate: slow " + to_string(state.slow[i].shape()) + " vs fast " +
                       to_string(state.fast[i].shape()));
    }
  }
  if (iteration % state.interp_every != 0) return;
  const double tau = state.tau;
  for (std::size_t i = 0; i < state.slow.size(); ++i) {
    auto slow = state.slow[i].data();
    const auto fast = state.fast[i].data();
    for (std::size_t j = 0; j < slow.size(); ++j) slow[j] = tau * slow[j] + (1.0 - tau) * fast[j];
  }
}

namespace {

struct Frozen {
  Tensor logits;
  Tensor features;
};

Frozen frozen_outputs(const Checkpoint& ck, const Tensor& inputs) {
  auto [logits, features] = predict_logits_and_features(ck, inputs);
  return {std::move(logits), std::move(features)};
}

Checkpoint with_params(const Checkpoint& base, const std::vector<Tensor>& params) {
  Checkpoint ck = base;
  for (std::size_t i = 0; i < params.size(); ++i) ck.params[i].value = params[i];
  return ck;
}

Flags eval_correct(const Checkpoint& ck, const Dataset& ds) {
  return correct_flags(predict_logits(ck, ds.inputs), ds.labels);
}

// Fills accuracy, gain and loss fields from aligned correctness flags.
void fill_report(PairReport& r, const Flags& before, const Flags& after, const FlipStats& flips,
                 std::span<const int> labels, std::size_t num_classes) {
  r.student_accuracy_before = mean(before);
  r.student_accuracy_after = mean(after);
  r.delta_acc = r.teacher_accuracy - r.student_accuracy_before;
  r.delta_transf = r.student_accuracy_after - r.student_accuracy_before;
  std::size_t flip_count = 0, gained = 0, before_count = 0, lost = 0;
  std::vector<std::size_t> class_flips(num_classes, 0), class_gained(num_classes, 0);
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (flips.per_sample[i]) {
      ++flip_count;
      ++class_flips[static_cast<std::size_t>(labels[i])];
      if (after[i]) {
        ++gained;
        ++class_gained[static_cast<std::size_t>(labels[i])];
      }
    }
    if (before[i]) {
      ++before_count;
      lost += after[i] ? 0 : 1;
    }
  }
  r.knowledge_gain = flip_count ? static_cast<double>(gained) / static_cast<double>(flip_count) : 0.0;
  r.knowledge_loss = before_count ? static_cast<double>(lost) / static_cast<double>(before_count) : 0.0;
  r.per_class_gain.assign(num_classes, std::nullopt);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (class_flips[k]) r.per_class_gain[k] = static_cast<double>(class_gained[k]) / static_cast<double>(class_flips[k]);
  }
}

void check_compatible(const Checkpoint& student, const Checkpoint& other, const char* role) {
  if (other.spec.num_classes != student.spec.num_classes) {
    throw ConfigError(fmt::format("transfer: {} has {} classes, student has {}", role, other.spec.num_classes,
                                  student.spec.num_classes));
  }
  if (other.spec.input_shape != student.spec.input_shape) {
    throw ConfigError(fmt::format("transfer: {} input {} differs from student input {}", role,
                                  to_string(other.spec.input_shape), to_string(student.spec.input_shape)));
  }
}

void check_dataset(const Checkpoint& student, const Dataset& ds, const char* role) {
  validate(ds);
  if (ds.num_classes != student.spec.num_classes || ds.sample_shape() != student.spec.input_shape) {
    throw ConfigError(fmt::format("transfer: {} set does not match the student ({} classes, input {})", role,
                                  student.spec.num_classes, to_string(student.spec.input_shape)));
  }
}

struct EngineConfig {
  const Checkpoint* student = nullptr;
  const Checkpoint* reference = nullptr;
  std::vector<const Checkpoint*> teachers;
  Method method = Method::kl;
  bool supervised = true;  // partitioned source selection
  TransferHyperparams hp;
  const Dataset* transfer = nullptr;
  const Dataset* val = nullptr;
  StepObserver observer;
};

TransferResult run_engine(const EngineConfig& cfg) {
  const auto& hp = cfg.hp;
  validate(hp);
  const Checkpoint& student = *cfg.student;
  const Dataset& train = *cfg.transfer;
  const Dataset& val = *cfg.val;
  if (cfg.teachers.empty()) throw ConfigError("transfer: at least one teacher is required");
  for (const auto* t : cfg.teachers) check_compatible(student, *t, "teacher");
  const Checkpoint& reference = cfg.reference ? *cfg.reference : student;
  if (!(reference.spec == student.spec)) throw ConfigError("transfer: reference model must share the student architecture");
  check_dataset(student, train, "transfer");
  check_dataset(student, val, "validation");
  if (hp.topk > student.spec.num_classes) {
    throw ConfigError(fmt::format("transfer: topk {} exceeds {} classes", hp.topk, student.spec.num_classes));
  }
  const bool partitioned = is_partitioned(cfg.method);
  const bool mcl = cfg.method == Method::xe_kl_mcl;
  const bool cd = cfg.method == Method::cd;

  // Frozen models never change, so their outputs on the transfer set are
  // computed once; inference is batch-invariant, so this equals per-batch
  // evaluation.
  std::vector<Frozen> teacher_out;
  for (const auto* t : cfg.teachers) teacher_out.push_back(frozen_outputs(*t, train.inputs));
  Tensor st_logits;
  if (partitioned) st_logits = predict_logits(reference, train.inputs);

  // Report teacher: highest validation accuracy, earliest on ties.
  Tensor best_val_logits;
  double best_acc = -1.0;
  for (std::size_t k = 0; k < cfg.teachers.size(); ++k) {
    Tensor logits = predict_logits(*cfg.teachers[k], val.inputs);
    const double acc = accuracy(logits, val.labels);
    if (acc > best_acc) {
      best_acc = acc;
      best_val_logits = std::move(logits);
    }
  }
  const Tensor student_val_logits = predict_logits(student, val.inputs);
  const Flags before = correct_flags(student_val_logits, val.labels);

  TransferResult result;
  result.method = cfg.method;
  result.hp = hp;
  result.flips = positive_flips(best_val_logits, student_val_logits, val.labels);
  result.report.teacher_accuracy = best_acc;

  auto params = parameter_values(student);
  const std::size_t model_params = params.size();
  std::vector<std::string> names;
  for (const auto& p : student.params) names.push_back(p.name);

  // Contrastive features meet in a space of the smaller width: a wider
  // student gets a trainable projection, a wider teacher a fixed one.
  Tensor teacher_projection;
  if (cd) {
    const std::size_t ws = feature_width(student.spec);
    const std::size_t wt = teacher_out[0].features.cols();
    Rng prng = Rng::derive(hp.seed, 0xcd);
    auto random_projection = [&](std::size_t in, std::size_t out) {
      Tensor p({in, out}, 0.0);
      const double bound = std::sqrt(3.0 / static_cast<double>(in));
      for (double& v : p.data()) v = prng.uniform(-bound, bound);
      return p;
    };
    if (ws > wt) {
      params.push_back(random_projection(ws, wt));
      names.emplace_back("cd.projection");
    } else if (wt > ws) {
      teacher_projection = random_projection(wt, ws);
    }
    if (train.size() < 2) throw ConfigError("transfer: cd needs at least 2 samples");
  }

  MclState mcl_state;
  if (mcl) mcl_state = {params, {}, hp.tau, hp.interp_every};

  SgdState opt{hp.lr, hp.momentum, hp.weight_decay, {}};
  const std::size_t n = train.size();
  const std::size_t sources = cfg.teachers.size() + 1;
  std::size_t step = 0;

  auto evaluate = [&](const std::vector<Tensor>& weights) {
    std::vector<Tensor> model(weights.begin(), weights.begin() + static_cast<std::ptrdiff_t>(model_params));
    return eval_correct(with_params(student, model), val);
  };

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    const auto order = epoch_order(n, hp.seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0, teacher_samples = 0;
    for (std::size_t start = 0; start < n; start += hp.batch_size, ++step) {
      std::size_t len = std::min(hp.batch_size, n - start);
      // A trailing singleton batch has no similarity structure to match.
      if (cd && len == 1) continue;
      const std::span<const std::size_t> idx(order.data() + start, len);
      std::vector<int> y;
      y.reserve(len);
      for (auto i : idx) y.push_back(train.labels[i]);
      std::vector<Tensor> t_logits;
      for (const auto& out : teacher_out) t_logits.push_back(gather_rows(out.logits, idx));

      ad::Tape tape;
      std::vector<ad::Var> vars;
      for (const auto& p : params) vars.push_back(tape.parameter(p));
      Rng drop = Rng::derive(hp.seed, 0xd1, step);
      const auto fwd = forward(student.spec, std::span<const ad::Var>(vars.data(), model_params),
                               tape.constant(train.batch(idx)), Mode::train, &drop);

      Tensor st_batch;
      PartitionMask mask;
      std::vector<std::size_t> selection;
      ad::Var loss;
      if (partitioned) {
        st_batch = gather_rows(st_logits, idx);
        std::vector<const Tensor*> srcs = {&st_batch};
        for (const auto& t : t_logits) srcs.push_back(&t);
        if (cfg.teachers.size() == 1) {
          mask = cfg.supervised ? dp_masks_supervised(t_logits[0], st_batch, y)
                                : dp_masks_unsupervised(t_logits[0], st_batch);
          if (!mask.is_partition()) {
            throw NumericError(fmt::format("transfer: mask is not a partition at epoch {} step {}", epoch, step));
          }
          selection.resize(len);
          for (std::size_t i = 0; i < len; ++i) selection[i] = mask.m_t[i] ? 1 : 0;
        } else {
          selection = cfg.supervised ? select_sources(srcs, std::span<const int>(y)) : select_sources(srcs, std::nullopt);
          std::vector<std::size_t> assigned(len, 0);
          for (std::size_t i = 0; i < len; ++i)
            if (selection[i] < sources) ++assigned[i];
          if (std::any_of(assigned.begin(), assigned.end(), [](std::size_t a) { return a != 1; })) {
            throw NumericError(fmt::format("transfer: selection is not a partition at epoch {} step {}", epoch, step));
          }
        }
        ++result.mask_checks;
        for (auto s : selection) teacher_samples += s != 0 ? 1 : 0;
        loss = selected_kl_loss(fwd.logits, mix_rows(srcs, selection), hp.temperature, hp.topk);
      } else if (cd) {
        ad::Var s_feats = fwd.features;
        if (params.size() > model_params) s_feats = ad::matmul(s_feats, vars.back());
        Tensor t_feats = gather_rows(teacher_out[0].features, idx);
        if (!teacher_projection.shape().empty()) {
          t_feats = ad::matmul(tape.constant(std::move(t_feats)), tape.constant(teacher_projection)).value();
        }
        const auto contrastive = cd_loss(s_feats, tape.constant(std::move(t_feats)));
        loss = ad::add(ad::scale(contrastive, hp.lambda), ad::scale(cross_entropy(fwd.logits, y), 1.0 - hp.lambda));
        teacher_samples += len;
      } else {
        const auto kl = selected_kl_loss(fwd.logits, t_logits[0], hp.temperature, hp.topk);
        if (cfg.method == Method::kl) {
          loss = kl;
        } else {
          loss = ad::add(ad::scale(kl, hp.lambda), ad::scale(cross_entropy(fwd.logits, y), 1.0 - hp.lambda));
        }
        teacher_samples += len;
      }

      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NumericError(fmt::format("transfer ({}): non-finite loss at epoch {} step {}", to_string(cfg.method),
                                       epoch, step));
      }
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(vars.size());
      for (const auto& v : vars) grads.push_back(tape.grad(v));
      sgd_step(params, grads, opt, names);
      if (mcl) {
        mcl_state.fast = params;
        mcl_interpolate(mcl_state, step + 1);
      }
      loss_sum += value;
      ++batches;

      if (cfg.observer) {
        StepInfo info;
        info.epoch = epoch;
        info.step = step;
        info.labels = y;
        if (partitioned) {
          info.st_logits = &st_batch;
          info.selection = selection;
          if (cfg.teachers.size() == 1) info.mask = &mask;
        }
        for (const auto& t : t_logits) info.teacher_logits.push_back(&t);
        if (mcl) info.mcl = &mcl_state;
        info.params = params;
        cfg.observer(info);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    rec.teacher_share = static_cast<double>(teacher_samples) / static_cast<double>(n);
    const Flags after = evaluate(mcl ? mcl_state.slow : params);
    PairReport snapshot;
    snapshot.teacher_accuracy = best_acc;
    fill_report(snapshot, before, after, result.flips, val.labels, val.num_classes);
    rec.val_accuracy = snapshot.student_accuracy_after;
    rec.gain = snapshot.knowledge_gain;
    rec.loss = snapshot.knowledge_loss;
    if (mcl) rec.fast_val_accuracy = mean(evaluate(params));
    result.per_epoch.push_back(rec);
  }

  std::vector<Tensor> final_params = mcl ? mcl_state.slow : params;
  final_params.resize(model_params);
  result.student = with_params(student, final_params);
  const Flags after = eval_correct(result.student, val);
  fill_report(result.report, before, after, result.flips, val.labels, val.num_classes);
  if (result.flips.total() > 0) result.transfer_rate = transfer_rate(result.flips, after, val.labels);
  result.student.meta["val_accuracy"] = result.report.student_accuracy_after;
  result.student.meta["transfer_method"] = to_string(cfg.method);
  return result;
}

}  // namespace

TransferResult run_transfer(const Checkpoint& student, const Checkpoint& teacher, Method method,
                            const TransferHyperparams& hp, const Dataset& transfer_set, const Dataset& val_set,
                            const TransferOptions& options) {
  EngineConfig cfg;
  cfg.student = &student;
  cfg.reference = options.reference;
  cfg.teachers = {&teacher};
  cfg.method = method;
  cfg.supervised = method != Method::kl_dp_unsup;
  cfg.hp = hp;
  cfg.transfer = &transfer_set;
  cfg.val = &val_set;
  cfg.observer = options.observer;
  return run_engine(cfg);
}

TransferResult run_partitioned_transfer(const Checkpoint& student, std::span<const Checkpoint* const> teachers,
                                        bool supervised, const TransferHyperparams& hp, const Dataset& transfer_set,
                                        const Dataset& val_set, const TransferOptions& options) {
  EngineConfig cfg;
  cfg.student = &student;
  cfg.reference = options.reference;
  cfg.teachers.assign(teachers.begin(), teachers.end());
  cfg.method = supervised ? Method::kl_dp_sup : Method::kl_dp_unsup;
  cfg.supervised = supervised;
  cfg.hp = hp;
  cfg.transfer = &transfer_set;
  cfg.val = &val_set;
  cfg.observer = options.observer;
  return run_engine(cfg);
}

TransferResult assess_transfer(const Checkpoint& before, const Checkpoint& after,
                               std::span<const Checkpoint* const> teachers, const Dataset& val_set) {
  if (teachers.empty()) throw ConfigError("assess_transfer: at least one teacher is required");
  check_dataset(before, val_set, "validation");
  if (!(before.spec == after.spec)) throw ConfigError("assess_transfer: before and after differ in architecture");
  Tensor best_logits;
  double best_acc = -1.0;
  for (const auto* t : teachers) {
    check_compatible(before, *t, "teacher");
    Tensor logits = predict_logits(*t, val_set.inputs);
    const double acc = accuracy(logits, val_set.labels);
    if (acc > best_acc) {
      best_acc = acc;
      best_logits = std::move(logits);
    }
  }
  const Tensor before_logits = predict_logits(before, val_set.inputs);
  const Flags before_correct = correct_flags(before_logits, val_set.labels);
  const Flags after_correct = eval_correct(after, val_set);
  TransferResult result;
  result.flips = positive_flips(best_logits, before_logits, val_set.labels);
  result.report.teacher_accuracy = best_acc;
  fill_report(result.report, before_correct, after_correct, result.flips, val_set.labels, val_set.num_classes);
  if (result.flips.total() > 0) result.transfer_rate = transfer_rate(result.flips, after_correct, val_set.labels);
  result.student = after;
  return result;
}

nlohmann::json to_json(const PairReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& g : r.per_class_gain) per_class.push_back(g ? nlohmann::json(*g) : nlohmann::json(nullptr));
  return {{"teacher_accuracy", r.teacher_accuracy},
          {"student_accuracy_before", r.student_accuracy_before},
          {"student_accuracy_after", r.student_accuracy_after},
          {"delta_acc", r.delta_acc},
          {"delta_transf", r.delta_transf},
          {"knowledge_gain", r.knowledge_gain},
          {"knowledge_loss", r.knowledge_loss},
          {"per_class_gain", std::move(per_class)}};
}

nlohmann::json to_json(const TransferResult& result) {
  nlohmann::json j = to_json(result.report);
  j["method"] = to_string(result.method);
  j["hyperparams"] = to_json(result.hp);
  j["rho_pos"] = result.flips.rho_pos;
  j["flip_count"] = result.flips.total();
  if (result.transfer_rate) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& [share, rate] : result.transfer_rate->curve) curve.push_back({{"top_percent", share}, {"rate", rate}});
    j["transfer_rate"] = {{"overall", result.transfer_rate->overall}, {"curve", std::move(curve)}};
  } else {
    j["transfer_rate"] = nullptr;
  }
  return j;
}

}  // namespace xfer
