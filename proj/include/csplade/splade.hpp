// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csplade/autodiff.hpp"

// Vocabulary-space representations: max-pool over the content span, then
// log(1 + relu(.)). Plus the contrastive, sparsity and adaptation losses.
namespace csplade::splade {

// Pooled weights at or below this are treated as zero.
inline constexpr float kDropThreshold = 1e-6f;

inline constexpr double kDefaultLambdaQ = 0.003;
inline constexpr double kDefaultLambdaD = 0.003;
inline constexpr double kDefaultLambdaRelu = 1.0;

struct SparseEntry {
  std::uint32_t term;
  float weight;
  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

struct SparseRep {
  std::vector<SparseEntry> entries;  // term ids strictly increasing, weights > 0
  std::uint32_t vocab_size = 0;

  std::size_t nnz() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  void validate() const;
  std::vector<float> to_dense() const;
  static SparseRep from_dense(std::span<const float> weights);

  friend bool operator==(const SparseRep&, const SparseRep&) = default;
};

enum class ActivationMode { PlainReLU, ReparamReLU };

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct LossBreakdown {
  double rank_loss = 0.0;
  double flops_q = 0.0;
  double flops_d = 0.0;
  double total = 0.0;
  double lambda_q = 0.0;
  double lambda_d = 0.0;
};

// Inference path over a [L, V] logits tensor.
SparseRep splade_pool(const ad::Tensor<float>& logits, Span span, ActivationMode mode = ActivationMode::PlainReLU);

// Differentiable path; returns a [V] vector.
template <typename T>
ad::Var<T> pool(ad::Var<T> logits, Span span, ActivationMode mode = ActivationMode::PlainReLU);

float dot_score(const SparseRep& q, const SparseRep& d);

// InfoNCE with the positive against every negative score.
double rank_loss_from_scores(double positive, std::span<const double> negatives);
double rank_loss(const SparseRep& q, const SparseRep& pos, std::span<const SparseRep> negs);

// sum_j (mean_i w_ij)^2
double flops_reg(std::span<const SparseRep> batch);
// reps: [N, V]
template <typename T>
ad::Var<T> flops_reg(ad::Var<T> reps);

template <typename T>
struct AdaptationTerms {
  ad::Var<T> total;
  ad::Var<T> clm;
  ad::Var<T> relu_clm;
};

// Next-token cross-entropy on raw logits and on log(1+relu(logits)); rows at
// or past `valid_len - 1` and PAD targets are ignored. Reduction::Sum lets a
// caller normalise over a whole batch.
template <typename T>
AdaptationTerms<T> adaptation_loss(ad::Var<T> logits, std::span<const int> ids, std::size_t valid_len,
                                   T lambda_relu, ad::Reduction reduction = ad::Reduction::Mean);

struct AdaptationValue {
  double total = 0.0;
  double clm = 0.0;
  double relu_clm = 0.0;
};
AdaptationValue adaptation_loss(const ad::Tensor<float>& logits, std::span<const int> ids, double lambda_relu);

// Number of target tokens adaptation_loss averages over.
std::size_t adaptation_targets(std::span<const int> ids, std::size_t valid_len);

// `docid<TAB>term:weight ...`, six decimal places.
void write_rep_line(std::ostream& os, const std::string& id, const SparseRep& rep);
std::vector<std::pair<std::string, SparseRep>> read_reps(std::istream& is, std::uint32_t vocab_size);
void write_reps(const std::string& path, std::span<const std::pair<std::string, SparseRep>> reps);
std::vector<std::pair<std::string, SparseRep>> read_reps(const std::string& path, std::uint32_t vocab_size);

}  // namespace csplade::splade
