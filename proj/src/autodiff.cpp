// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include "csplade/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "csplade/kernels.hpp"

namespace csplade::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Variable: return "variable";
    case OpKind::Param: return "param";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddRow: return "add_row";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulNT: return "matmul_nt";
    case OpKind::Transpose: return "transpose";
    case OpKind::Relu: return "relu";
    case OpKind::ReparamRelu: return "reparam_relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Log1p: return "log1p";
    case OpKind::Exp: return "exp";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::MaxAxis: return "max_axis";
    case OpKind::MeanAxis: return "mean_axis";
    case OpKind::SumAxis: return "sum_axis";
    case OpKind::SumAll: return "sum_all";
    case OpKind::Embedding: return "embedding";
    case OpKind::MaskedFill: return "masked_fill";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::StackRows: return "stack_rows";
  }
  return "unknown";
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------
// Tensor / Var / Graph

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != ad::numel(shape)) {
    throw DimensionError("tensor: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape s) {
  const std::size_t n = ad::numel(s);
  return Tensor<T>(std::move(s), std::vector<T>(n, T(0)));
}

template <typename T>
const Shape& Var<T>::shape() const {
  return graph_->node(id_).shape;
}

template <typename T>
std::span<const T> Var<T>::value() const {
  const auto& n = graph_->node(id_);
  return {n.data(), n.size()};
}

template <typename T>
bool Var<T>::requires_grad() const {
  return graph_->node(id_).requires_grad;
}

template <typename T>
T Var<T>::item() const {
  const auto& n = graph_->node(id_);
  if (n.size() != 1) throw ContractError("item(): tensor of shape " + shape_str(n.shape) + " is not scalar");
  return n.data()[0];
}

template <typename T>
Var<T> Graph<T>::push(OpKind kind, Shape shape, std::vector<T> value, bool requires_grad,
                      std::function<void(Graph&, std::size_t)> backward) {
  Node n;
  n.kind = kind;
  n.shape = std::move(shape);
  n.own = std::move(value);
  n.requires_grad = record_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  return push(OpKind::Constant, std::move(value.shape), std::move(value.data), false, nullptr);
}

template <typename T>
Var<T> Graph<T>::variable(Tensor<T> value) {
  return push(OpKind::Variable, std::move(value.shape), std::move(value.data), true, nullptr);
}

template <typename T>
Var<T> Graph<T>::param(ParamId id, const Tensor<T>& value) {
  Node n;
  n.kind = OpKind::Param;
  n.shape = value.shape;
  n.ext = value.data.data();
  n.requires_grad = record_;
  n.param_id = id;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
std::vector<T>& Graph<T>::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.size(), T(0));
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss, Gradients<T>& grads) {
  if (loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
  if (consumed_) throw ContractError("backward: graph already consumed; build a new graph");
  const auto& ln = nodes_[loss.id()];
  if (ln.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(ln.shape));
  }
  consumed_ = true;
  if (!ln.requires_grad) return;
  grad_buffer(loss.id())[0] = T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.kind == OpKind::Param) {
      if (grads.size() <= n.param_id) grads.resize(n.param_id + 1);
      auto& g = grads[n.param_id];
      if (g.data.empty()) g = Tensor<T>::zeros(n.shape);
      for (std::size_t k = 0; k < n.grad.size(); ++k) g.data[k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

template <typename T>
Tensor<T> Graph<T>::grad(Var<T> v) const {
  const auto& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor<T>::zeros(n.shape);
  return Tensor<T>(n.shape, n.grad);
}

// ---------------------------------------------------------------------------
// Op helpers

namespace {

template <typename T>
const typename Graph<T>::Node& nd(Var<T> v) {
  return v.graph()->node(v.id());
}

template <typename T>
[[noreturn]] void shape_error(OpKind kind, std::initializer_list<Var<T>> ins) {
  std::string msg = std::string(op_name(kind)) + ": incompatible shapes";
  for (auto v : ins) msg += " " + shape_str(v.shape());
  throw DimensionError(msg);
}

template <typename T>
void same_graph(OpKind kind, Var<T> a, Var<T> b) {
  if (a.graph() != b.graph()) throw ContractError(std::string(op_name(kind)) + ": operands on different graphs");
}

template <typename T>
bool is_matrix(Var<T> v) {
  return v.shape().size() == 2;
}

// Adds `src` into the gradient buffer of `id` if that node wants gradients.
template <typename T>
void accum(Graph<T>& g, std::size_t id, const T* src) {
  if (!g.node(id).requires_grad) return;
  auto& buf = g.grad_buffer(id);
  for (std::size_t k = 0; k < buf.size(); ++k) buf[k] += src[k];
}

// Elementwise unary op; `df` maps (x, y) to dy/dx.
template <typename T, typename F, typename DF>
Var<T> unary(OpKind kind, Var<T> a, F f, DF df) {
  Graph<T>& g = *a.graph();
  const auto& an = nd(a);
  const std::size_t n = an.size();
  std::vector<T> out(n);
  const T* x = an.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i]);
  const std::size_t ai = a.id();
  return g.push(kind, an.shape, std::move(out), an.requires_grad, [ai, df](Graph<T>& gr, std::size_t self) {
    if (!gr.node(ai).requires_grad) return;
    const auto& sn = gr.node(self);
    const T* xv = gr.node(ai).data();
    const T* yv = sn.data();
    auto& ga = gr.grad_buffer(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += sn.grad[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise binary

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_graph(OpKind::Add, a, b);
  if (a.shape() != b.shape()) shape_error(OpKind::Add, {a, b});
  Graph<T>& g = *a.graph();
  std::vector<T> out(a.value().begin(), a.value().end());
  const T* bv = nd(b).data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.push(OpKind::Add, a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                [ai, bi](Graph<T>& gr, std::size_t self) {
                  const T* gs = gr.node(self).grad.data();
                  accum(gr, ai, gs);
                  accum(gr, bi, gs);
                });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_graph(OpKind::Sub, a, b);
  if (a.shape() != b.shape()) shape_error(OpKind::Sub, {a, b});
  Graph<T>& g = *a.graph();
  std::vector<T> out(a.value().begin(), a.value().end());
  const T* bv = nd(b).data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.push(OpKind::Sub, a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                [ai, bi](Graph<T>& gr, std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  accum(gr, ai, gs.data());
                  if (gr.node(bi).requires_grad) {
                    auto& gb = gr.grad_buffer(bi);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gs[i];
                  }
                });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_graph(OpKind::Mul, a, b);
  if (a.shape() != b.shape()) shape_error(OpKind::Mul, {a, b});
  Graph<T>& g = *a.graph();
  std::vector<T> out(a.value().begin(), a.value().end());
  const T* bv = nd(b).data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return g.push(OpKind::Mul, a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                [ai, bi](Graph<T>& gr, std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  const T* av = gr.node(ai).data();
                  const T* bv2 = gr.node(bi).data();
                  if (gr.node(ai).requires_grad) {
                    auto& ga = gr.grad_buffer(ai);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gs[i] * bv2[i];
                  }
                  if (gr.node(bi).requires_grad) {
                    auto& gb = gr.grad_buffer(bi);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gs[i] * av[i];
                  }
                });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return unary(OpKind::Scale, a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> bias) {
  same_graph(OpKind::AddRow, a, bias);
  if (!is_matrix(a) || bias.shape().size() != 1 || bias.shape()[0] != a.shape()[1]) {
    shape_error(OpKind::AddRow, {a, bias});
  }
  Graph<T>& g = *a.graph();
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(a.value().begin(), a.value().end());
  const T* bv = nd(bias).data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  const std::size_t ai = a.id(), bi = bias.id();
  return g.push(OpKind::AddRow, a.shape(), std::move(out), a.requires_grad() || bias.requires_grad(),
                [ai, bi, m, n](Graph<T>& gr, std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  accum(gr, ai, gs.data());
                  if (gr.node(bi).requires_grad) {
                    auto& gb = gr.grad_buffer(bi);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += gs[i * n + j];
                  }
                });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  same_graph(OpKind::MatMul, a, b);
  if (!is_matrix(a) || !is_matrix(b) || a.shape()[1] != b.shape()[0]) shape_error(OpKind::MatMul, {a, b});
  Graph<T>& g = *a.graph();
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(m * n, T(0));
  kernels::gemm_nn(nd(a).data(), nd(b).data(), out.data(), m, k, n);
  const std::size_t ai = a.id(), bi = b.id();
  return g.push(OpKind::MatMul, Shape{m, n}, std::move(out), a.requires_grad() || b.requires_grad(),
                [ai, bi, m, k, n](Graph<T>& gr, std::size_t self) {
                  const T* gs = gr.node(self).grad.data();
                  if (gr.node(ai).requires_grad) {
                    // dA = dC * B^T
                    kernels::gemm_nt(gs, gr.node(bi).data(), gr.grad_buffer(ai).data(), m, n, k);
                  }
                  if (gr.node(bi).requires_grad) {
                    // dB = A^T * dC
                    kernels::gemm_tn(gr.node(ai).data(), gs, gr.grad_buffer(bi).data(), k, m, n);
                  }
                });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  same_graph(OpKind::MatMulNT, a, b);
  if (!is_matrix(a) || !is_matrix(b) || a.shape()[1] != b.shape()[1]) shape_error(OpKind::MatMulNT, {a, b});
  Graph<T>& g = *a.graph();
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  std::vector<T> out(m * n, T(0));
  kernels::gemm_nt(nd(a).data(), nd(b).data(), out.data(), m, k, n);
  const std::size_t ai = a.id(), bi = b.id();
  return g.push(OpKind::MatMulNT, Shape{m, n}, std::move(out), a.requires_grad() || b.requires_grad(),
                [ai, bi, m, k, n](Graph<T>& gr, std::size_t self) {
                  const T* gs = gr.node(self).grad.data();
                  if (gr.node(ai).requires_grad) {
                    // dA[m,k] = dC[m,n] * B[n,k]
                    kernels::gemm_nn(gs, gr.node(bi).data(), gr.grad_buffer(ai).data(), m, n, k);
                  }
                  if (gr.node(bi).requires_grad) {
                    // dB[n,k] = dC^T[n,m] * A[m,k]
                    kernels::gemm_tn(gs, gr.node(ai).data(), gr.grad_buffer(bi).data(), n, m, k);
                  }
                });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  if (!is_matrix(a)) shape_error(OpKind::Transpose, {a});
  Graph<T>& g = *a.graph();
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(m * n);
  const T* av = nd(a).data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const std::size_t ai = a.id();
  return g.push(OpKind::Transpose, Shape{n, m}, std::move(out), a.requires_grad(),
                [ai, m, n](Graph<T>& gr, std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  auto& ga = gr.grad_buffer(ai);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += gs[j * m + i];
                });
}

// ---------------------------------------------------------------------------
// Elementwise unary

template <typename T>
Var<T> relu(Var<T> a) {
  return unary(OpKind::Relu, a, [](T x) { return x > T(0) ? x : T(0); },
               [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> reparam_relu(Var<T> a) {
  return unary(OpKind::ReparamRelu, a, [](T x) { return x > T(0) ? x : T(0); },
               [](T x, T) { return static_cast<T>(gelu_grad(static_cast<double>(x))); });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  return unary(OpKind::Gelu, a, [](T x) { return static_cast<T>(gelu_value(static_cast<double>(x))); },
               [](T x, T) { return static_cast<T>(gelu_grad(static_cast<double>(x))); });
}

template <typename T>
Var<T> log1p(Var<T> a) {
  return unary(OpKind::Log1p, a, [](T x) { return std::log1p(x); }, [](T x, T) { return T(1) / (T(1) + x); });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return unary(OpKind::Exp, a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

// ---------------------------------------------------------------------------
// Softmax family

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  if (!is_matrix(a)) shape_error(OpKind::SoftmaxRows, {a});
  Graph<T>& g = *a.graph();
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(m * n);
  const T* av = nd(a).data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = av + i * n;
    T* o = out.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  const std::size_t ai = a.id();
  return g.push(OpKind::SoftmaxRows, a.shape(), std::move(out), a.requires_grad(),
                [ai, m, n](Graph<T>& gr, std::size_t self) {
                  const auto& sn = gr.node(self);
                  auto& ga = gr.grad_buffer(ai);
                  for (std::size_t i = 0; i < m; ++i) {
                    const T* y = sn.data() + i * n;
                    const T* gy = sn.grad.data() + i * n;
                    T dotv = T(0);
                    for (std::size_t j = 0; j < n; ++j) dotv += gy[j] * y[j];
                    for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[j] * (gy[j] - dotv);
                  }
                });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> targets, Reduction reduction) {
  if (!is_matrix(logits) || logits.shape()[0] != targets.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  Graph<T>& g = *logits.graph();
  const std::size_t m = logits.shape()[0], n = logits.shape()[1];
  const T* lv = nd(logits).data();
  std::vector<T> probs(m * n, T(0));
  std::vector<int> tgt(targets.begin(), targets.end());
  T total = T(0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tgt[i] < 0) continue;
    if (static_cast<std::size_t>(tgt[i]) >= n) {
      throw DimensionError("softmax_cross_entropy: target " + std::to_string(tgt[i]) + " out of range " +
                           std::to_string(n));
    }
    const T* row = lv + i * n;
    T* p = probs.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) s += (p[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) p[j] /= s;
    total += (mx + std::log(s)) - row[tgt[i]];
    ++count;
  }
  const T norm = (reduction == Reduction::Mean && count > 0) ? T(1) / static_cast<T>(count) : T(1);
  const std::size_t li = logits.id();
  return g.push(OpKind::SoftmaxCrossEntropy, Shape{1}, std::vector<T>{total * norm}, logits.requires_grad(),
                [li, m, n, norm, tgt = std::move(tgt), probs = std::move(probs)](Graph<T>& gr, std::size_t self) {
                  const T gscale = gr.node(self).grad[0] * norm;
                  auto& gl = gr.grad_buffer(li);
                  for (std::size_t i = 0; i < m; ++i) {
                    if (tgt[i] < 0) continue;
                    for (std::size_t j = 0; j < n; ++j) gl[i * n + j] += gscale * probs[i * n + j];
                    gl[i * n + static_cast<std::size_t>(tgt[i])] -= gscale;
                  }
                });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  if (!is_matrix(x) || gamma.shape() != Shape{x.shape()[1]} || beta.shape() != gamma.shape()) {
    shape_error(OpKind::LayerNorm, {x, gamma, beta});
  }
  Graph<T>& g = *x.graph();
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const T* xv = nd(x).data();
  const T* gv = nd(gamma).data();
  const T* bv = nd(beta).data();
  std::vector<T> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv + i * n;
    T mean = T(0);
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(n);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mean) * inv_std[i];
      out[i * n + j] = gv[j] * xhat[i * n + j] + bv[j];
    }
  }
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return g.push(OpKind::LayerNorm, x.shape(), std::move(out), rg,
                [xi, gi, bi, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& gr,
                                                                                         std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  const T* gv2 = gr.node(gi).data();
                  if (gr.node(gi).requires_grad) {
                    auto& gg = gr.grad_buffer(gi);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gg[j] += gs[i * n + j] * xhat[i * n + j];
                  }
                  if (gr.node(bi).requires_grad) {
                    auto& gb = gr.grad_buffer(bi);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += gs[i * n + j];
                  }
                  if (gr.node(xi).requires_grad) {
                    auto& gx = gr.grad_buffer(xi);
                    const T inv_n = T(1) / static_cast<T>(n);
                    for (std::size_t i = 0; i < m; ++i) {
                      T mean_dy = T(0), mean_dy_xhat = T(0);
                      for (std::size_t j = 0; j < n; ++j) {
                        const T dy = gs[i * n + j] * gv2[j];
                        mean_dy += dy;
                        mean_dy_xhat += dy * xhat[i * n + j];
                      }
                      mean_dy *= inv_n;
                      mean_dy_xhat *= inv_n;
                      for (std::size_t j = 0; j < n; ++j) {
                        const T dy = gs[i * n + j] * gv2[j];
                        gx[i * n + j] += inv_std[i] * (dy - mean_dy - xhat[i * n + j] * mean_dy_xhat);
                      }
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

template <typename T>
void check_axis(OpKind kind, Var<T> a, int axis) {
  if (!is_matrix(a) || (axis != 0 && axis != 1)) {
    throw DimensionError(std::string(op_name(kind)) + ": axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(a.shape()));
  }
}

// Linear reductions share one implementation; `mean` scales by 1/extent.
template <typename T>
Var<T> linear_reduce(OpKind kind, Var<T> a, int axis, bool mean) {
  check_axis(kind, a, axis);
  Graph<T>& g = *a.graph();
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const std::size_t out_n = axis == 0 ? n : m;
  const T w = mean ? T(1) / static_cast<T>(axis == 0 ? m : n) : T(1);
  std::vector<T> out(out_n, T(0));
  const T* av = nd(a).data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += av[i * n + j];
  for (auto& v : out) v *= w;
  const std::size_t ai = a.id();
  return g.push(kind, Shape{out_n}, std::move(out), a.requires_grad(),
                [ai, m, n, axis, w](Graph<T>& gr, std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  auto& ga = gr.grad_buffer(ai);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += w * gs[axis == 0 ? j : i];
                });
}

}  // namespace

template <typename T>
Var<T> max_axis(Var<T> a, int axis) {
  check_axis(OpKind::MaxAxis, a, axis);
  Graph<T>& g = *a.graph();
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const std::size_t out_n = axis == 0 ? n : m;
  const T* av = nd(a).data();
  std::vector<T> out(out_n);
  std::vector<std::size_t> arg(out_n);
  if (axis == 0) {
    std::copy(av, av + n, out.begin());
    for (std::size_t j = 0; j < n; ++j) arg[j] = j;
    for (std::size_t i = 1; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (av[i * n + j] > out[j]) {
          out[j] = av[i * n + j];
          arg[j] = i * n + j;
        }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = av + i * n;
      const std::size_t k = static_cast<std::size_t>(std::max_element(row, row + n) - row);
      out[i] = row[k];
      arg[i] = i * n + k;
    }
  }
  const std::size_t ai = a.id();
  return g.push(OpKind::MaxAxis, Shape{out_n}, std::move(out), a.requires_grad(),
                [ai, arg = std::move(arg)](Graph<T>& gr, std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  auto& ga = gr.grad_buffer(ai);
                  for (std::size_t j = 0; j < arg.size(); ++j) ga[arg[j]] += gs[j];
                });
}

template <typename T>
Var<T> mean_axis(Var<T> a, int axis) {
  return linear_reduce(OpKind::MeanAxis, a, axis, true);
}

template <typename T>
Var<T> sum_axis(Var<T> a, int axis) {
  return linear_reduce(OpKind::SumAxis, a, axis, false);
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  Graph<T>& g = *a.graph();
  T s = T(0);
  for (T v : a.value()) s += v;
  const std::size_t ai = a.id();
  return g.push(OpKind::SumAll, Shape{1}, std::vector<T>{s}, a.requires_grad(),
                [ai](Graph<T>& gr, std::size_t self) {
                  const T gs = gr.node(self).grad[0];
                  for (auto& v : gr.grad_buffer(ai)) v += gs;
                });
}

// ---------------------------------------------------------------------------
// Indexing

template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
  if (!is_matrix(table)) shape_error(OpKind::Embedding, {table});
  Graph<T>& g = *table.graph();
  const std::size_t rows = table.shape()[0], d = table.shape()[1];
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<T> out(idv.size() * d);
  const T* tv = nd(table).data();
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= rows) {
      throw DimensionError("embedding: id " + std::to_string(idv[i]) + " outside table of " + std::to_string(rows) +
                           " rows");
    }
    std::copy_n(tv + static_cast<std::size_t>(idv[i]) * d, d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const std::size_t ti = table.id();
  const std::size_t n = idv.size();
  return g.push(OpKind::Embedding, Shape{n, d}, std::move(out), table.requires_grad(),
                [ti, d, idv = std::move(idv)](Graph<T>& gr, std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  auto& gt = gr.grad_buffer(ti);
                  for (std::size_t i = 0; i < idv.size(); ++i) {
                    T* dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
                    for (std::size_t j = 0; j < d; ++j) dst[j] += gs[i * d + j];
                  }
                });
}

template <typename T>
Var<T> masked_fill(Var<T> a, std::span<const std::uint8_t> mask, T value) {
  if (mask.size() != nd(a).size()) {
    throw DimensionError("masked_fill: mask of " + std::to_string(mask.size()) + " for shape " +
                         shape_str(a.shape()));
  }
  Graph<T>& g = *a.graph();
  std::vector<T> out(a.value().begin(), a.value().end());
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mk[i]) out[i] = value;
  const std::size_t ai = a.id();
  return g.push(OpKind::MaskedFill, a.shape(), std::move(out), a.requires_grad(),
                [ai, mk = std::move(mk)](Graph<T>& gr, std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  auto& ga = gr.grad_buffer(ai);
                  for (std::size_t i = 0; i < ga.size(); ++i)
                    if (!mk[i]) ga[i] += gs[i];
                });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t count) {
  if (!is_matrix(a) || start + count > a.shape()[0] || count == 0) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + "," + std::to_string(start + count) +
                         ") of shape " + shape_str(a.shape()));
  }
  Graph<T>& g = *a.graph();
  const std::size_t n = a.shape()[1];
  const T* av = nd(a).data() + start * n;
  std::vector<T> out(av, av + count * n);
  const std::size_t ai = a.id();
  return g.push(OpKind::SliceRows, Shape{count, n}, std::move(out), a.requires_grad(),
                [ai, start, n](Graph<T>& gr, std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  auto& ga = gr.grad_buffer(ai);
                  for (std::size_t k = 0; k < gs.size(); ++k) ga[start * n + k] += gs[k];
                });
}

template <typename T>
Var<T> stack_rows(std::span<const Var<T>> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  Graph<T>& g = *rows[0].graph();
  const Shape s0 = rows[0].shape();
  if (s0.size() != 1) shape_error(OpKind::StackRows, {rows[0]});
  const std::size_t n = s0[0];
  std::vector<T> out;
  out.reserve(rows.size() * n);
  std::vector<std::size_t> ids;
  bool rg = false;
  for (auto r : rows) {
    if (r.graph() != &g) throw ContractError("stack_rows: operands on different graphs");
    if (r.shape() != s0) shape_error(OpKind::StackRows, {rows[0], r});
    auto v = r.value();
    out.insert(out.end(), v.begin(), v.end());
    ids.push_back(r.id());
    rg = rg || r.requires_grad();
  }
  return g.push(OpKind::StackRows, Shape{rows.size(), n}, std::move(out), rg,
                [n, ids = std::move(ids)](Graph<T>& gr, std::size_t self) {
                  const auto& gs = gr.node(self).grad;
                  for (std::size_t i = 0; i < ids.size(); ++i) accum(gr, ids[i], gs.data() + i * n);
                });
}

// ---------------------------------------------------------------------------
// Gradient checking

double grad_check(const std::function<Var<double>(Graph<double>&, Var<double>)>& f, const Tensor<double>& x,
                  double h) {
  Graph<double> g;
  Var<double> xv = g.variable(x);
  Var<double> y = f(g, xv);
  if (!std::isfinite(y.item())) throw NumericError("grad_check: f(x) is not finite");
  Gradients<double> unused;
  g.backward(y, unused);
  const Tensor<double> analytic = g.grad(xv);

  double worst = 0.0;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + h;
    Graph<double> gp(false);
    const double fp = f(gp, gp.constant(probe)).item();
    probe.data[i] = orig - h;
    Graph<double> gm(false);
    const double fm = f(gm, gm.constant(probe)).item();
    probe.data[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic.data[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

double grad_check_params(const std::function<Var<double>(Graph<double>&)>& loss,
                         std::span<Tensor<double>* const> params, double h, std::size_t max_coords) {
  Gradients<double> grads(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) grads[p] = Tensor<double>::zeros(params[p]->shape);
  {
    Graph<double> g;
    Var<double> y = loss(g);
    if (!std::isfinite(y.item())) throw NumericError("grad_check_params: loss is not finite");
    g.backward(y, grads);
  }
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& t = *params[p];
    const std::size_t n = t.numel();
    const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_coords));
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = t.data[i];
      t.data[i] = orig + h;
      Graph<double> gp(false);
      const double fp = loss(gp).item();
      t.data[i] = orig - h;
      Graph<double> gm(false);
      const double fm = loss(gm).item();
      t.data[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("grad_check_params: non-finite loss");
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, std::abs(grads[p].data[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Instantiations

#define CSPLADE_AD_INSTANTIATE(T)                                                                 \
  template struct Tensor<T>;                                                                      \
  template class Var<T>;                                                                          \
  template class Graph<T>;                                                                        \
  template Var<T> add<T>(Var<T>, Var<T>);                                                         \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                         \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                         \
  template Var<T> scale<T>(Var<T>, T);                                                            \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                                     \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                      \
  template Var<T> matmul_nt<T>(Var<T>, Var<T>);                                                   \
  template Var<T> transpose<T>(Var<T>);                                                           \
  template Var<T> relu<T>(Var<T>);                                                                \
  template Var<T> reparam_relu<T>(Var<T>);                                                        \
  template Var<T> gelu<T>(Var<T>);                                                                \
  template Var<T> log1p<T>(Var<T>);                                                               \
  template Var<T> exp<T>(Var<T>);                                                                 \
  template Var<T> softmax_rows<T>(Var<T>);                                                        \
  template Var<T> softmax_cross_entropy<T>(Var<T>, std::span<const int>, Reduction);              \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                       \
  template Var<T> max_axis<T>(Var<T>, int);                                                       \
  template Var<T> mean_axis<T>(Var<T>, int);                                                      \
  template Var<T> sum_axis<T>(Var<T>, int);                                                       \
  template Var<T> sum_all<T>(Var<T>);                                                             \
  template Var<T> embedding<T>(Var<T>, std::span<const int>);                                     \
  template Var<T> masked_fill<T>(Var<T>, std::span<const std::uint8_t>, T);                       \
  template Var<T> slice_rows<T>(Var<T>, std::size_t, std::size_t);                                \
  template Var<T> stack_rows<T>(std::span<const Var<T>>);

CSPLADE_AD_INSTANTIATE(float)
CSPLADE_AD_INSTANTIATE(double)

#undef CSPLADE_AD_INSTANTIATE

}  // namespace csplade::ad
