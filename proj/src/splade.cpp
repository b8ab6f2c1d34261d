// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include "csplade/splade.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "csplade/kernels.hpp"

namespace csplade::splade {

void SparseRep::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!(e.weight > 0.0f) || !std::isfinite(e.weight)) {
      throw ad::ContractError("sparse rep: non-positive weight at term " + std::to_string(e.term));
    }
    if (e.term >= vocab_size) throw ad::ContractError("sparse rep: term " + std::to_string(e.term) + " >= vocab");
    if (i > 0 && entries[i - 1].term >= e.term) throw ad::ContractError("sparse rep: terms not strictly increasing");
  }
}

std::vector<float> SparseRep::to_dense() const {
  std::vector<float> out(vocab_size, 0.0f);
  for (const auto& e : entries) out[e.term] = e.weight;
  return out;
}

SparseRep SparseRep::from_dense(std::span<const float> weights) {
  SparseRep r;
  r.vocab_size = static_cast<std::uint32_t>(weights.size());
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (weights[j] > kDropThreshold) r.entries.push_back({static_cast<std::uint32_t>(j), weights[j]});
  }
  return r;
}

SparseRep splade_pool(const ad::Tensor<float>& logits, Span span, ActivationMode) {
  if (logits.shape.size() != 2) throw ad::DimensionError("splade_pool: logits must be [L, V]");
  const std::size_t len = logits.shape[0], vocab = logits.shape[1];
  if (span.begin >= span.end || span.end > len) {
    throw ad::ContractError("splade_pool: empty or out-of-range span [" + std::to_string(span.begin) + "," +
                            std::to_string(span.end) + ") for " + std::to_string(len) + " positions");
  }
  // Both activation modes share the forward pass.
  std::vector<float> pooled(logits.data.begin() + static_cast<std::ptrdiff_t>(span.begin * vocab),
                            logits.data.begin() + static_cast<std::ptrdiff_t>((span.begin + 1) * vocab));
  const auto& k = kernels::active();
  for (std::size_t i = span.begin + 1; i < span.end; ++i) {
    k.max_inplace_f32(pooled.data(), logits.data.data() + i * vocab, vocab);
  }
  for (auto& v : pooled) v = v > 0.0f ? std::log1p(v) : 0.0f;
  return SparseRep::from_dense(pooled);
}

template <typename T>
ad::Var<T> pool(ad::Var<T> logits, Span span, ActivationMode mode) {
  if (span.begin >= span.end) throw ad::ContractError("pool: empty span");
  ad::Var<T> window = ad::slice_rows(logits, span.begin, span.end - span.begin);
  ad::Var<T> pooled = ad::max_axis(window, 0);
  ad::Var<T> act = mode == ActivationMode::ReparamReLU ? ad::reparam_relu(pooled) : ad::relu(pooled);
  return ad::log1p(act);
}

float dot_score(const SparseRep& q, const SparseRep& d) {
  if (q.vocab_size != d.vocab_size) {
    throw ad::ContractError("dot_score: vocab mismatch " + std::to_string(q.vocab_size) + " vs " +
                            std::to_string(d.vocab_size));
  }
  float s = 0.0f;
  std::size_t i = 0, j = 0;
  while (i < q.entries.size() && j < d.entries.size()) {
    const auto ti = q.entries[i].term, tj = d.entries[j].term;
    if (ti == tj) {
      s += q.entries[i].weight * d.entries[j].weight;
      ++i;
      ++j;
    } else if (ti < tj) {
      ++i;
    } else {
      ++j;
    }
  }
  return s;
}

double rank_loss_from_scores(double positive, std::span<const double> negatives) {
  if (negatives.empty()) throw ad::ContractError("rank_loss: no negatives");
  double mx = positive;
  for (double s : negatives) mx = std::max(mx, s);
  double denom = std::exp(positive - mx);
  for (double s : negatives) denom += std::exp(s - mx);
  return -(positive - mx - std::log(denom));
}

double rank_loss(const SparseRep& q, const SparseRep& pos, std::span<const SparseRep> negs) {
  if (negs.empty()) throw ad::ContractError("rank_loss: no negatives");
  std::vector<double> neg_scores;
  neg_scores.reserve(negs.size());
  for (const auto& n : negs) neg_scores.push_back(dot_score(q, n));
  return rank_loss_from_scores(dot_score(q, pos), neg_scores);
}

double flops_reg(std::span<const SparseRep> batch) {
  if (batch.empty()) throw ad::ContractError("flops_reg: empty batch");
  std::vector<double> mean(batch[0].vocab_size, 0.0);
  for (const auto& r : batch) {
    if (r.vocab_size != mean.size()) throw ad::ContractError("flops_reg: vocab mismatch within batch");
    for (const auto& e : r.entries) mean[e.term] += e.weight;
  }
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (double m : mean) total += (m * inv_n) * (m * inv_n);
  return total;
}

template <typename T>
ad::Var<T> flops_reg(ad::Var<T> reps) {
  ad::Var<T> mean = ad::mean_axis(reps, 0);
  return ad::sum_all(ad::mul(mean, mean));
}

namespace {

std::vector<int> shifted_targets(std::span<const int> ids, std::size_t valid_len) {
  const std::size_t len = ids.size();
  const std::size_t valid = valid_len == 0 ? len : std::min(valid_len, len);
  std::vector<int> targets(len - 1, -1);
  for (std::size_t i = 0; i + 1 < valid; ++i) {
    const int t = ids[i + 1];
    targets[i] = t == 0 ? -1 : t;
  }
  return targets;
}

}  // namespace

std::size_t adaptation_targets(std::span<const int> ids, std::size_t valid_len) {
  if (ids.size() < 2) return 0;
  auto t = shifted_targets(ids, valid_len);
  return static_cast<std::size_t>(std::count_if(t.begin(), t.end(), [](int v) { return v >= 0; }));
}

template <typename T>
AdaptationTerms<T> adaptation_loss(ad::Var<T> logits, std::span<const int> ids, std::size_t valid_len,
                                   T lambda_relu, ad::Reduction reduction) {
  const std::size_t len = ids.size();
  if (len < 2) throw ad::ContractError("adaptation_loss: need at least 2 positions, got " + std::to_string(len));
  if (logits.shape().size() != 2 || logits.shape()[0] != len) {
    throw ad::DimensionError("adaptation_loss: logits " + ad::shape_str(logits.shape()) + " vs " +
                             std::to_string(len) + " ids");
  }
  const std::vector<int> targets = shifted_targets(ids, valid_len);
  ad::Var<T> shifted = ad::slice_rows(logits, 0, len - 1);
  AdaptationTerms<T> out;
  out.clm = ad::softmax_cross_entropy(shifted, std::span<const int>(targets), reduction);
  out.relu_clm = ad::softmax_cross_entropy(ad::log1p(ad::relu(shifted)), std::span<const int>(targets), reduction);
  out.total = ad::add(out.clm, ad::scale(out.relu_clm, lambda_relu));
  return out;
}

AdaptationValue adaptation_loss(const ad::Tensor<float>& logits, std::span<const int> ids, double lambda_relu) {
  ad::Graph<double> g(false);
  ad::Tensor<double> l(logits.shape, std::vector<double>(logits.data.begin(), logits.data.end()));
  auto terms = adaptation_loss<double>(g.constant(std::move(l)), ids, 0, lambda_relu);
  return {terms.total.item(), terms.clm.item(), terms.relu_clm.item()};
}

// ---------------------------------------------------------------------------
// Text format

void write_rep_line(std::ostream& os, const std::string& id, const SparseRep& rep) {
  os << id << '\t';
  char buf[48];
  for (std::size_t i = 0; i < rep.entries.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%" PRIu32 ":%.6f", i ? " " : "", rep.entries[i].term,
                  static_cast<double>(rep.entries[i].weight));
    os << buf;
  }
  os << '\n';
}

std::vector<std::pair<std::string, SparseRep>> read_reps(std::istream& is, std::uint32_t vocab_size) {
  std::vector<std::pair<std::string, SparseRep>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw std::runtime_error("reps line " + std::to_string(lineno) + ": expected 'id<TAB>entries'");
    }
    SparseRep rep;
    rep.vocab_size = vocab_size;
    std::istringstream ss(line.substr(tab + 1));
    std::string tok;
    while (ss >> tok) {
      const auto colon = tok.find(':');
      try {
        if (colon == std::string::npos) throw std::invalid_argument(tok);
        const unsigned long term = std::stoul(tok.substr(0, colon));
        const float w = std::stof(tok.substr(colon + 1));
        rep.entries.push_back({static_cast<std::uint32_t>(term), w});
      } catch (const std::exception&) {
        throw std::runtime_error("reps line " + std::to_string(lineno) + ": bad entry '" + tok + "'");
      }
    }
    try {
      rep.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error("reps line " + std::to_string(lineno) + ": " + e.what());
    }
    out.emplace_back(line.substr(0, tab), std::move(rep));
  }
  return out;
}

void write_reps(const std::string& path, std::span<const std::pair<std::string, SparseRep>> reps) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& [id, rep] : reps) write_rep_line(os, id, rep);
}

std::vector<std::pair<std::string, SparseRep>> read_reps(const std::string& path, std::uint32_t vocab_size) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_reps(is, vocab_size);
}

template ad::Var<float> pool<float>(ad::Var<float>, Span, ActivationMode);
template ad::Var<double> pool<double>(ad::Var<double>, Span, ActivationMode);
template ad::Var<float> flops_reg<float>(ad::Var<float>);
template ad::Var<double> flops_reg<double>(ad::Var<double>);
template AdaptationTerms<float> adaptation_loss<float>(ad::Var<float>, std::span<const int>, std::size_t, float,
                                                       ad::Reduction);
template AdaptationTerms<double> adaptation_loss<double>(ad::Var<double>, std::span<const int>, std::size_t, double,
                                                         ad::Reduction);

}  // namespace csplade::splade
