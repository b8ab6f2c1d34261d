// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Minimal tape-based reverse-mode autodiff over dense row-major tensors of rank
// 1 or 2. Instantiated for float (training) and double (gradient checking).
namespace csplade::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<T> d);
  static Tensor zeros(Shape s);

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
};

using ParamId = std::size_t;

// Gradient map indexed by ParamId. Callers zero it before each backward; the
// tape accumulates into it.
template <typename T>
using Gradients = std::vector<Tensor<T>>;

enum class OpKind {
  Constant,
  Variable,
  Param,
  Add,
  Sub,
  Mul,
  Scale,
  AddRow,
  MatMul,
  MatMulNT,
  Transpose,
  Relu,
  ReparamRelu,
  Gelu,
  Log1p,
  Exp,
  SoftmaxRows,
  SoftmaxCrossEntropy,
  LayerNorm,
  MaxAxis,
  MeanAxis,
  SumAxis,
  SumAll,
  Embedding,
  MaskedFill,
  SliceRows,
  StackRows,
};

const char* op_name(OpKind kind);

template <typename T>
class Graph;

// Lightweight handle to a node on a Graph. Valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* g, std::size_t id) : graph_(g), id_(id) {}

  Graph<T>* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  const Shape& shape() const;
  std::span<const T> value() const;
  bool requires_grad() const;
  T item() const;

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Graph {
 public:
  // record=false builds values only; nothing is kept for backward.
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);
  // The tensor is referenced, not copied; it must outlive the graph.
  Var<T> param(ParamId id, const Tensor<T>& value);

  // Single-use: a second call throws ContractError.
  void backward(Var<T> loss, Gradients<T>& grads);
  // Gradient of the last backward w.r.t. a node (zeros if it had none).
  Tensor<T> grad(Var<T> v) const;

  std::size_t size() const { return nodes_.size(); }

  struct Node {
    OpKind kind = OpKind::Constant;
    Shape shape;
    std::vector<T> own;
    const T* ext = nullptr;
    std::vector<T> grad;
    bool requires_grad = false;
    ParamId param_id = 0;
    std::function<void(Graph&, std::size_t)> backward;

    const T* data() const { return ext != nullptr ? ext : own.data(); }
    std::size_t size() const { return numel(shape); }
  };

  const Node& node(std::size_t i) const { return nodes_[i]; }
  Node& node(std::size_t i) { return nodes_[i]; }

  // Used by op implementations.
  Var<T> push(OpKind kind, Shape shape, std::vector<T> value, bool requires_grad,
              std::function<void(Graph&, std::size_t)> backward);
  std::vector<T>& grad_buffer(std::size_t id);

 private:
  bool record_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

enum class Reduction { Mean, Sum };

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
// a[m,n] + bias[n] broadcast over rows.
template <typename T> Var<T> add_row(Var<T> a, Var<T> bias);
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// a[m,k] * b[n,k]^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
// Forward is exactly relu; backward uses the derivative of exact (erf) GeLU.
template <typename T> Var<T> reparam_relu(Var<T> a);
template <typename T> Var<T> gelu(Var<T> a);
template <typename T> Var<T> log1p(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> softmax_rows(Var<T> a);
// Rows of `logits` scored against class ids; negative targets are skipped.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> targets,
                             Reduction reduction = Reduction::Mean);
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
// Reduce a 2-D tensor along axis 0 (result has `cols` entries) or axis 1.
template <typename T> Var<T> max_axis(Var<T> a, int axis);
template <typename T> Var<T> mean_axis(Var<T> a, int axis);
template <typename T> Var<T> sum_axis(Var<T> a, int axis);
template <typename T> Var<T> sum_all(Var<T> a);
template <typename T> Var<T> embedding(Var<T> table, std::span<const int> ids);
// Positions where mask != 0 are replaced by `value`; they receive no gradient.
template <typename T>
Var<T> masked_fill(Var<T> a, std::span<const std::uint8_t> mask, T value);
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t count);
// Stacks equally sized 1-D tensors into a 2-D tensor.
template <typename T> Var<T> stack_rows(std::span<const Var<T>> rows);

// Exact GeLU and its derivative.
double gelu_value(double x);
double gelu_grad(double x);

// Max over coordinates of |analytic - central| / max(1, |central|) for a
// scalar function of one tensor input.
double grad_check(const std::function<Var<double>(Graph<double>&, Var<double>)>& f,
                  const Tensor<double>& x, double h = 1e-4);

// Same measure for parameters referenced through Graph::param. `params[i]` is
// the tensor bound to ParamId i; the loss builder must bind them that way.
// Up to `max_coords` coordinates per tensor are checked (evenly strided).
double grad_check_params(const std::function<Var<double>(Graph<double>&)>& loss,
                         std::span<Tensor<double>* const> params, double h = 1e-4,
                         std::size_t max_coords = 64);

}  // namespace csplade::ad
