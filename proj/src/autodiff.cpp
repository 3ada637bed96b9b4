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

#include "xfer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace xfer::ad {
namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + to_string(t.shape()));
  }
}

void require_same_tape(const char* op, Var a, Var b) {
  if (&a.tape() != &b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
}

// out[n, m] += a[n, k] * b[k, m]
void gemm_nn(const double* a, const double* b, double* out, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* out_row = out + i * m;
    const double* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a_row[p];
      if (av == 0.0) continue;
      const double* b_row = b + p * m;
      for (std::size_t j = 0; j < m; ++j) out_row[j] += av * b_row[j];
    }
  }
}

// out[n, k] += g[n, m] * b[k, m]^T
void gemm_nt(const double* g, const double* b, double* out, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* g_row = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b_row = b + p * m;
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += g_row[j] * b_row[j];
      out[i * k + p] += acc;
    }
  }
}

// out[k, m] += a[n, k]^T * g[n, m]
void gemm_tn(const double* a, const double* g, double* out, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* a_row = a + i * k;
    const double* g_row = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a_row[p];
      if (av == 0.0) continue;
      double* out_row = out + p * m;
      for (std::size_t j = 0; j < m; ++j) out_row[j] += av * g_row[j];
    }
  }
}

void log_softmax_rows(const Tensor& x, Tensor& out) {
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* in = x.ptr() + i * c;
    double* o = out.ptr() + i * c;
    const double peak = *std::max_element(in, in + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(in[j] - peak);
    const double log_total = std::log(total);
    for (std::size_t j = 0; j < c; ++j) o[j] = in[j] - peak - log_total;
  }
}

template <typename F>
Var elementwise_binary(const char* op, Var a, Var b, F forward, Tape::BackwardFn backward) {
  require_same_tape(op, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) shape_mismatch(op, av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(av[i], bv[i]);
  return a.tape().record(std::move(out), {a, b}, std::move(backward));
}

}  // namespace

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw Error("tape: operand recorded on a different tape");
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  if (!node.requires_grad) throw Error("tape: node does not require a gradient");
  if (node.grad.empty()) {
    // Unreached by the last backward sweep.
    const_cast<Node&>(node).grad = Tensor(node.value.shape(), 0.0);
  }
  return node.grad;
}

Tensor* Tape::grad_slot(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0);
  return &node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw Error("backward: loss belongs to a different tape");
  const Tensor& lv = nodes_[loss.id_].value;
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(lv.shape()));
  }
  for (Node& node : nodes_) node.grad = Tensor();
  if (!nodes_[loss.id_].requires_grad) return;
  nodes_[loss.id_].grad = Tensor(lv.shape(), 1.0);
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, id);
  }
}

Var affine(Var x, Var weight, Var bias) {
  require_same_tape("affine", x, weight);
  require_same_tape("affine", x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_rank("affine", xv, 2);
  require_rank("affine", wv, 2);
  if (xv.dim(1) != wv.dim(0)) shape_mismatch("affine", xv.shape(), wv.shape());
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) shape_mismatch("affine", wv.shape(), bv.shape());
  const std::size_t n = xv.dim(0), k = xv.dim(1), m = wv.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) std::copy(bv.ptr(), bv.ptr() + m, out.ptr() + i * m);
  gemm_nn(xv.ptr(), wv.ptr(), out.ptr(), n, k, m);
  return x.tape().record(std::move(out), {x, weight, bias}, [n, k, m](Tape& t, std::size_t id) {
    const Tensor& g = t.out_grad(id);
    const std::size_t xi = t.input(id, 0), wi = t.input(id, 1), bi = t.input(id, 2);
    if (Tensor* gx = t.grad_slot(xi)) gemm_nt(g.ptr(), t.value(wi).ptr(), gx->ptr(), n, k, m);
    if (Tensor* gw = t.grad_slot(wi)) gemm_tn(t.value(xi).ptr(), g.ptr(), gw->ptr(), n, k, m);
    if (Tensor* gb = t.grad_slot(bi)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*gb)[j] += g[i * m + j];
    }
  });
}

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("matmul", av, 2);
  require_rank("matmul", bv, 2);
  if (av.dim(1) != bv.dim(0)) shape_mismatch("matmul", av.shape(), bv.shape());
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor out({n, m});
  gemm_nn(av.ptr(), bv.ptr(), out.ptr(), n, k, m);
  return a.tape().record(std::move(out), {a, b}, [n, k, m](Tape& t, std::size_t id) {
    const Tensor& g = t.out_grad(id);
    const std::size_t ai = t.input(id, 0), bi = t.input(id, 1);
    if (Tensor* ga = t.grad_slot(ai)) gemm_nt(g.ptr(), t.value(bi).ptr(), ga->ptr(), n, k, m);
    if (Tensor* gb = t.grad_slot(bi)) gemm_tn(t.value(ai).ptr(), g.ptr(), gb->ptr(), n, k, m);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape("matmul_nt", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("matmul_nt", av, 2);
  require_rank("matmul_nt", bv, 2);
  if (av.dim(1) != bv.dim(1)) shape_mismatch("matmul_nt", av.shape(), bv.shape());
  const std::size_t n = av.dim(0), d = av.dim(1), m = bv.dim(0);
  Tensor out({n, m});
  gemm_nt(av.ptr(), bv.ptr(), out.ptr(), n, m, d);
  return a.tape().record(std::move(out), {a, b}, [n, d, m](Tape& t, std::size_t id) {
    const Tensor& g = t.out_grad(id);
    const std::size_t ai = t.input(id, 0), bi = t.input(id, 1);
    // out = a b^T: da = g b, db = g^T a.
    if (Tensor* ga = t.grad_slot(ai)) gemm_nn(g.ptr(), t.value(bi).ptr(), ga->ptr(), n, m, d);
    if (Tensor* gb = t.grad_slot(bi)) gemm_tn(g.ptr(), t.value(ai).ptr(), gb->ptr(), n, m, d);
  });
}

Var relu(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return x.tape().record(std::move(out), {x}, [](Tape& t, std::size_t id) {
    const std::size_t xi = t.input(id, 0);
    Tensor* gx = t.grad_slot(xi);
    const Tensor& g = t.out_grad(id);
    const Tensor& xv = t.value(xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) (*gx)[i] += g[i];
    }
  });
}

Var conv2d(Var x, Var weight, Var bias, std::size_t stride) {
  require_same_tape("conv2d", x, weight);
  require_same_tape("conv2d", x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (stride != 1 && stride != 2) {
    throw ShapeError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  }
  require_rank("conv2d", xv, 4);
  require_rank("conv2d", wv, 4);
  if (wv.dim(1) != xv.dim(1) || wv.dim(2) != 3 || wv.dim(3) != 3) {
    shape_mismatch("conv2d", xv.shape(), wv.shape());
  }
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(0)) shape_mismatch("conv2d", wv.shape(), bv.shape());

  const std::size_t n = xv.dim(0), channels = xv.dim(1), height = xv.dim(2), width = xv.dim(3);
  const std::size_t filters = wv.dim(0);
  const std::size_t out_h = (height - 1) / stride + 1;
  const std::size_t out_w = (width - 1) / stride + 1;

  struct Geometry {
    std::size_t n, channels, height, width, filters, out_h, out_w, stride;
  };
  const Geometry geo{n, channels, height, width, filters, out_h, out_w, stride};

  // Visits every (input, weight, output) triple touched by the convolution.
  auto for_each_tap = [geo](auto&& visit) {
    for (std::size_t s = 0; s < geo.n; ++s)
      for (std::size_t o = 0; o < geo.filters; ++o)
        for (std::size_t c = 0; c < geo.channels; ++c)
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::size_t w_idx = ((o * geo.channels + c) * 3 + ky) * 3 + kx;
              for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) - 1;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geo.height)) continue;
                const std::size_t x_row =
                    ((s * geo.channels + c) * geo.height + static_cast<std::size_t>(iy)) *
                    geo.width;
                const std::size_t o_row = ((s * geo.filters + o) * geo.out_h + oy) * geo.out_w;
                for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) - 1;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(geo.width)) continue;
                  visit(x_row + static_cast<std::size_t>(ix), w_idx, o_row + ox);
                }
              }
            }
  };

  Tensor out({n, filters, out_h, out_w});
  const std::size_t plane = out_h * out_w;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < filters; ++o)
      std::fill_n(out.ptr() + (s * filters + o) * plane, plane, bv[o]);
  {
    const double* xp = xv.ptr();
    const double* wp = wv.ptr();
    double* op = out.ptr();
    for_each_tap([&](std::size_t xi, std::size_t wi, std::size_t oi) { op[oi] += wp[wi] * xp[xi]; });
  }

  return x.tape().record(
      std::move(out), {x, weight, bias}, [geo, for_each_tap](Tape& t, std::size_t id) {
        const Tensor& g = t.out_grad(id);
        const std::size_t xid = t.input(id, 0), wid = t.input(id, 1), bid = t.input(id, 2);
        const double* gp = g.ptr();
        if (Tensor* gx = t.grad_slot(xid)) {
          const double* wp = t.value(wid).ptr();
          double* gxp = gx->ptr();
          for_each_tap(
              [&](std::size_t xi, std::size_t wi, std::size_t oi) { gxp[xi] += wp[wi] * gp[oi]; });
        }
        if (Tensor* gw = t.grad_slot(wid)) {
          const double* xp = t.value(xid).ptr();
          double* gwp = gw->ptr();
          for_each_tap(
              [&](std::size_t xi, std::size_t wi, std::size_t oi) { gwp[wi] += xp[xi] * gp[oi]; });
        }
        if (Tensor* gb = t.grad_slot(bid)) {
          const std::size_t plane = geo.out_h * geo.out_w;
          for (std::size_t s = 0; s < geo.n; ++s)
            for (std::size_t o = 0; o < geo.filters; ++o) {
              const double* row = gp + (s * geo.filters + o) * plane;
              double acc = 0.0;
              for (std::size_t p = 0; p < plane; ++p) acc += row[p];
              (*gb)[o] += acc;
            }
        }
      });
}

Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  require_rank("global_avg_pool", xv, 4);
  const std::size_t n = xv.dim(0), channels = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor out({n, channels});
  for (std::size_t i = 0; i < n * channels; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += xv[i * plane + p];
    out[i] = acc / static_cast<double>(plane);
  }
  return x.tape().record(std::move(out), {x}, [n, channels, plane](Tape& t, std::size_t id) {
    Tensor* gx = t.grad_slot(t.input(id, 0));
    const Tensor& g = t.out_grad(id);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t i = 0; i < n * channels; ++i) {
      const double share = g[i] * inv;
      for (std::size_t p = 0; p < plane; ++p) (*gx)[i * plane + p] += share;
    }
  });
}

Var flatten(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() == 2) return x;
  Tensor out = xv.reshaped({xv.rows(), xv.cols()});
  return x.tape().record(std::move(out), {x}, [](Tape& t, std::size_t id) {
    Tensor* gx = t.grad_slot(t.input(id, 0));
    const Tensor& g = t.out_grad(id);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  const Tensor& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  return x.tape().record(std::move(out), {x}, [mask = std::move(mask)](Tape& t, std::size_t id) {
    Tensor* gx = t.grad_slot(t.input(id, 0));
    const Tensor& g = t.out_grad(id);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
  });
}

Tensor log_softmax(const Tensor& x) {
  require_rank("log_softmax", x, 2);
  Tensor out(x.shape());
  log_softmax_rows(x, out);
  return out;
}

Tensor softmax(const Tensor& x) {
  Tensor out = log_softmax(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  return out;
}

Var log_softmax(Var x) {
  Tensor out = log_softmax(x.value());
  return x.tape().record(std::move(out), {x}, [](Tape& t, std::size_t id) {
    Tensor* gx = t.grad_slot(t.input(id, 0));
    const Tensor& g = t.out_grad(id);
    const Tensor& y = t.value(id);
    const std::size_t n = y.rows(), c = y.cols();
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        (*gx)[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * total;
      }
    }
  });
}

Var exp(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
  return x.tape().record(std::move(out), {x}, [](Tape& t, std::size_t id) {
    Tensor* gx = t.grad_slot(t.input(id, 0));
    const Tensor& g = t.out_grad(id);
    const Tensor& y = t.value(id);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i];
  });
}

Var scale(Var x, double factor) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return x.tape().record(std::move(out), {x}, [factor](Tape& t, std::size_t id) {
    Tensor* gx = t.grad_slot(t.input(id, 0));
    const Tensor& g = t.out_grad(id);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * factor;
  });
}

Var add(Var a, Var b) {
  return elementwise_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](Tape& t, std::size_t id) {
        const Tensor& g = t.out_grad(id);
        for (std::size_t k = 0; k < 2; ++k) {
          if (Tensor* gi = t.grad_slot(t.input(id, k))) {
            for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
          }
        }
      });
}

Var sub(Var a, Var b) {
  return elementwise_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](Tape& t, std::size_t id) {
        const Tensor& g = t.out_grad(id);
        if (Tensor* ga = t.grad_slot(t.input(id, 0))) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (Tensor* gb = t.grad_slot(t.input(id, 1))) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
        }
      });
}

Var mul(Var a, Var b) {
  return elementwise_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](Tape& t, std::size_t id) {
        const Tensor& g = t.out_grad(id);
        const std::size_t ai = t.input(id, 0), bi = t.input(id, 1);
        if (Tensor* ga = t.grad_slot(ai)) {
          const Tensor& bv = t.value(bi);
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
        }
        if (Tensor* gb = t.grad_slot(bi)) {
          const Tensor& av = t.value(ai);
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
        }
      });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (double v : xv.data()) acc += v;
  return x.tape().record(Tensor::scalar(acc), {x}, [](Tape& t, std::size_t id) {
    Tensor* gx = t.grad_slot(t.input(id, 0));
    const double g = t.out_grad(id)[0];
    for (double& v : gx->data()) v += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var gather_cols(Var x, std::vector<std::size_t> columns, std::size_t k) {
  const Tensor& xv = x.value();
  require_rank("gather_cols", xv, 2);
  const std::size_t n = xv.rows(), c = xv.cols();
  if (k == 0 || columns.size() != n * k) {
    throw ShapeError("gather_cols: expected " + std::to_string(n) + "x" + std::to_string(k) +
                     " column indices for input " + to_string(xv.shape()));
  }
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t col = columns[i * k + j];
      if (col >= c) throw ShapeError("gather_cols: column index out of range");
      out[i * k + j] = xv[i * c + col];
    }
  return x.tape().record(std::move(out), {x},
                         [columns = std::move(columns), n, c, k](Tape& t, std::size_t id) {
                           Tensor* gx = t.grad_slot(t.input(id, 0));
                           const Tensor& g = t.out_grad(id);
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < k; ++j)
                               (*gx)[i * c + columns[i * k + j]] += g[i * k + j];
                         });
}

Var pick(Var x, std::span<const int> labels) {
  const Tensor& xv = x.value();
  require_rank("pick", xv, 2);
  const std::size_t n = xv.rows(), c = xv.cols();
  if (labels.size() != n) {
    throw ShapeError("pick: " + std::to_string(labels.size()) + " labels for input " +
                     to_string(xv.shape()));
  }
  std::vector<std::size_t> index(n);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ShapeError("pick: label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(c) + " columns");
    }
    index[i] = i * c + static_cast<std::size_t>(labels[i]);
    out[i] = xv[index[i]];
  }
  return x.tape().record(std::move(out), {x}, [index = std::move(index)](Tape& t, std::size_t id) {
    Tensor* gx = t.grad_slot(t.input(id, 0));
    const Tensor& g = t.out_grad(id);
    for (std::size_t i = 0; i < index.size(); ++i) (*gx)[index[i]] += g[i];
  });
}

Var l2_normalize_rows(Var x) {
  const Tensor& xv = x.value();
  require_rank("l2_normalize_rows", xv, 2);
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor out(xv.shape());
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += xv[i * d + j] * xv[i * d + j];
    norms[i] = std::sqrt(sq);
    if (!(norms[i] > 0.0)) {
      throw NumericError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] / norms[i];
  }
  return x.tape().record(std::move(out), {x},
                         [norms = std::move(norms), n, d](Tape& t, std::size_t id) {
                           Tensor* gx = t.grad_slot(t.input(id, 0));
                           const Tensor& g = t.out_grad(id);
                           const Tensor& y = t.value(id);
                           for (std::size_t i = 0; i < n; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < d; ++j) dot += y[i * d + j] * g[i * d + j];
                             for (std::size_t j = 0; j < d; ++j) {
                               (*gx)[i * d + j] += (g[i * d + j] - y[i * d + j] * dot) / norms[i];
                             }
                           }
                         });
}

}  // namespace xfer::ad
