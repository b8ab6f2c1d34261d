// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

// Op table shared by the unit gradient checks and the acceptance run.

#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "csplade/autodiff.hpp"
#include "helpers.hpp"

namespace csplade::testing {

using namespace csplade::ad;

using Fn = std::function<Var<double>(Graph<double>&, Var<double>)>;

// Reduces an arbitrary-shaped output to a scalar with fixed random weights so
// every output coordinate gets a distinct upstream gradient.
inline Var<double> weighted_sum(Graph<double>& g, Var<double> y, const Tensor<double>& w) {
  return sum_all(mul(y, g.constant(w)));
}

struct OpCase {
  std::string name;
  Shape in_shape;
  Shape out_shape;
  // Builds op(x) given the fixed operand tensors drawn for this seed.
  std::function<Var<double>(Graph<double>&, Var<double>, const std::vector<Tensor<double>>&)> op;
  std::vector<Shape> operand_shapes;
  double lo = -1.0, hi = 1.0;
  bool off_zero = false;
};

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  c.push_back({"add", {3, 4}, {3, 4}, [](auto& g, auto x, auto& o) { return add(x, g.constant(o[0])); }, {{3, 4}}});
  c.push_back({"sub", {3, 4}, {3, 4}, [](auto& g, auto x, auto& o) { return sub(g.constant(o[0]), x); }, {{3, 4}}});
  c.push_back({"mul", {3, 4}, {3, 4}, [](auto& g, auto x, auto& o) { return mul(x, g.constant(o[0])); }, {{3, 4}}});
  c.push_back({"mul_self", {3, 4}, {3, 4}, [](auto&, auto x, auto&) { return mul(x, x); }, {}});
  c.push_back({"scale", {5}, {5}, [](auto&, auto x, auto&) { return scale(x, -2.5); }, {}});
  c.push_back({"add_row.matrix", {3, 4}, {3, 4}, [](auto& g, auto x, auto& o) { return add_row(x, g.constant(o[0])); },
               {{4}}});
  c.push_back({"add_row.bias", {4}, {3, 4}, [](auto& g, auto x, auto& o) { return add_row(g.constant(o[0]), x); },
               {{3, 4}}});
  c.push_back({"matmul.lhs", {3, 5}, {3, 2}, [](auto& g, auto x, auto& o) { return matmul(x, g.constant(o[0])); },
               {{5, 2}}});
  c.push_back({"matmul.rhs", {5, 2}, {3, 2}, [](auto& g, auto x, auto& o) { return matmul(g.constant(o[0]), x); },
               {{3, 5}}});
  c.push_back({"matmul_nt.lhs", {3, 5}, {3, 4},
               [](auto& g, auto x, auto& o) { return matmul_nt(x, g.constant(o[0])); }, {{4, 5}}});
  c.push_back({"matmul_nt.rhs", {4, 5}, {3, 4},
               [](auto& g, auto x, auto& o) { return matmul_nt(g.constant(o[0]), x); }, {{3, 5}}});
  c.push_back({"matmul_nt.self", {3, 5}, {3, 3}, [](auto&, auto x, auto&) { return matmul_nt(x, x); }, {}});
  c.push_back({"transpose", {3, 5}, {5, 3}, [](auto&, auto x, auto&) { return transpose(x); }, {}});
  {
    OpCase r{"relu", {4, 6}, {4, 6}, [](auto&, auto x, auto&) { return relu(x); }, {}};
    r.off_zero = true;
    c.push_back(r);
  }
  c.push_back({"gelu", {4, 6}, {4, 6}, [](auto&, auto x, auto&) { return gelu(x); }, {}, -3.0, 3.0});
  c.push_back({"log1p", {4, 6}, {4, 6}, [](auto&, auto x, auto&) { return log1p(x); }, {}, 0.0, 3.0});
  c.push_back({"exp", {4, 6}, {4, 6}, [](auto&, auto x, auto&) { return exp(x); }, {}, -2.0, 2.0});
  c.push_back({"softmax_rows", {3, 5}, {3, 5}, [](auto&, auto x, auto&) { return softmax_rows(x); }, {}, -3.0, 3.0});
  c.push_back({"layer_norm.x", {3, 6}, {3, 6},
               [](auto& g, auto x, auto& o) { return layer_norm(x, g.constant(o[0]), g.constant(o[1])); },
               {{6}, {6}}});
  c.push_back({"layer_norm.gamma", {6}, {3, 6},
               [](auto& g, auto x, auto& o) { return layer_norm(g.constant(o[0]), x, g.constant(o[1])); },
               {{3, 6}, {6}}});
  c.push_back({"layer_norm.beta", {6}, {3, 6},
               [](auto& g, auto x, auto& o) { return layer_norm(g.constant(o[0]), g.constant(o[1]), x); },
               {{3, 6}, {6}}});
  c.push_back({"max_axis0", {4, 5}, {5}, [](auto&, auto x, auto&) { return max_axis(x, 0); }, {}});
  c.push_back({"max_axis1", {4, 5}, {4}, [](auto&, auto x, auto&) { return max_axis(x, 1); }, {}});
  c.push_back({"mean_axis0", {4, 5}, {5}, [](auto&, auto x, auto&) { return mean_axis(x, 0); }, {}});
  c.push_back({"mean_axis1", {4, 5}, {4}, [](auto&, auto x, auto&) { return mean_axis(x, 1); }, {}});
  c.push_back({"sum_axis0", {4, 5}, {5}, [](auto&, auto x, auto&) { return sum_axis(x, 0); }, {}});
  c.push_back({"sum_axis1", {4, 5}, {4}, [](auto&, auto x, auto&) { return sum_axis(x, 1); }, {}});
  c.push_back({"embedding", {6, 3}, {5, 3},
               [](auto&, auto x, auto&) {
                 static const std::vector<int> ids{4, 0, 4, 2, 5};
                 return embedding(x, std::span<const int>(ids));
               },
               {}});
  c.push_back({"masked_fill", {2, 4}, {2, 4},
               [](auto&, auto x, auto&) {
                 static const std::vector<std::uint8_t> m{0, 1, 0, 0, 1, 1, 0, 0};
                 return masked_fill(x, std::span<const std::uint8_t>(m), -7.0);
               },
               {}});
  c.push_back({"slice_rows", {5, 3}, {2, 3}, [](auto&, auto x, auto&) { return slice_rows(x, 2, 2); }, {}});
  c.push_back({"stack_rows", {4, 3}, {3, 3},
               [](auto&, auto x, auto&) {
                 std::vector<Var<double>> rows{max_axis(x, 0), sum_axis(x, 0), mean_axis(x, 0)};
                 return stack_rows(std::span<const Var<double>>(rows));
               },
               {}});
  return c;
}

// Entries of a [R, C] matrix whose row maximum is not unique within `gap`.
inline bool max_is_ambiguous(const Tensor<double>& t, int axis, double gap) {
  const std::size_t r = t.rows(), cols = t.cols();
  const std::size_t outer = axis == 0 ? cols : r, inner = axis == 0 ? r : cols;
  for (std::size_t o = 0; o < outer; ++o) {
    double best = -1e300, second = -1e300;
    for (std::size_t i = 0; i < inner; ++i) {
      const double v = axis == 0 ? t.at(i, o) : t.at(o, i);
      if (v > best) {
        second = best;
        best = v;
      } else if (v > second) {
        second = v;
      }
    }
    if (best - second < gap) return true;
  }
  return false;
}

// Draws the input for one (op, seed) pair, avoiding kinks by `gap`.
inline Tensor<double> draw_input(const OpCase& oc, std::mt19937_64& rng, double gap = 1e-3) {
  for (int tries = 0; tries < 100; ++tries) {
    Tensor<double> x = random_tensor<double>(oc.in_shape, rng, oc.lo, oc.hi);
    if (oc.off_zero) push_off_zero(x);
    if ((oc.name == "max_axis0" || oc.name == "stack_rows") && max_is_ambiguous(x, 0, gap)) continue;
    if (oc.name == "max_axis1" && max_is_ambiguous(x, 1, gap)) continue;
    return x;
  }
  throw std::runtime_error("draw_input: no kink-free draw for " + oc.name);
}

// Relative error of one op at one seed.
inline double op_grad_error(const OpCase& oc, std::uint64_t seed, double h = 1e-4) {
  std::mt19937_64 rng(seed * 7919 + 13);
  std::vector<Tensor<double>> operands;
  for (const auto& s : oc.operand_shapes) operands.push_back(random_tensor<double>(s, rng));
  const Tensor<double> w = random_tensor<double>(oc.out_shape, rng);
  const Tensor<double> x = draw_input(oc, rng);
  const Fn f = [&](Graph<double>& g, Var<double> v) { return weighted_sum(g, oc.op(g, v, operands), w); };
  return grad_check(f, x, h);
}

}  // namespace csplade::testing
