// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "csplade/autodiff.hpp"

namespace csplade::encoder {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kSep = kBos;
inline constexpr std::size_t kNumReserved = 4;

enum class MaskMode { Causal, Bidirectional };

class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncoderConfig {
  std::size_t vocab_size = 256;
  std::size_t d_model = 32;
  std::size_t n_layers = 1;
  std::size_t n_heads = 2;
  std::size_t d_ff = 128;
  std::size_t max_seq_len = 64;
  MaskMode mask_mode = MaskMode::Causal;
  bool echo_mode = false;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
  std::map<std::string, std::string> to_kv() const;
  static EncoderConfig from_kv(const std::map<std::string, std::string>& kv);
};

bool operator==(const EncoderConfig& a, const EncoderConfig& b);

std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& s);

// Token ids plus the pooling window. Positions >= valid_len are padding.
struct TokenSequence {
  std::vector<int> ids;
  std::size_t valid_len = 0;
  std::size_t span_begin = 0;  // inclusive
  std::size_t span_end = 0;    // exclusive

  std::size_t size() const { return ids.size(); }
  std::size_t span_size() const { return span_end - span_begin; }
  void validate(std::size_t vocab_size) const;
};

// [BOS, x.., SEP, x.., EOS]; pooling span covers the second copy only. The
// content is every non-special id inside the input's span.
TokenSequence echo_expand(const TokenSequence& seq, std::size_t max_seq_len);

// Longest content that still fits echo_expand for this sequence budget.
constexpr std::size_t max_echo_content(std::size_t max_seq_len) {
  return max_seq_len < 3 ? 0 : (max_seq_len - 3) / 2;
}

// What the model actually sees: echo_expand when the config asks for echo
// mode, the sequence unchanged otherwise.
TokenSequence prepare_input(const TokenSequence& seq, const EncoderConfig& cfg);

// Token budget (markers included) to pass to a tokenizer so prepare_input
// cannot overflow max_seq_len.
std::size_t input_budget(const EncoderConfig& cfg);

// Named parameter slots in declared (checkpoint) order.
struct ParamSpec {
  std::string name;
  ad::Shape shape;
};
std::vector<ParamSpec> param_layout(const EncoderConfig& cfg);

// Parameter ids for one transformer block.
struct LayerIds {
  ad::ParamId ln1_g, ln1_b;
  std::vector<ad::ParamId> wq, wk, wv, wo;  // per head
  ad::ParamId bo;
  ad::ParamId ln2_g, ln2_b, w1, b1, w2, b2;
};

struct ParamIds {
  ad::ParamId tok_emb, pos_emb;
  std::vector<LayerIds> layers;
  ad::ParamId lnf_g, lnf_b, lm_bias;
  std::size_t count = 0;
};
ParamIds param_ids(const EncoderConfig& cfg);

// Decoder-only transformer with absolute positions and an LM head tied to the
// token embedding. The head carries its own per-vocabulary bias.
template <typename T>
struct EncoderWeights {
  EncoderConfig config;
  std::vector<ad::Tensor<T>> params;

  const ad::Tensor<T>& operator[](ad::ParamId id) const { return params[id]; }
  ad::Tensor<T>& operator[](ad::ParamId id) { return params[id]; }
};

using EncoderModel = EncoderWeights<float>;

EncoderModel init_model(const EncoderConfig& cfg);

// Subtracts `offset` from every LM-head bias, pushing all logits negative.
void apply_negative_bias(EncoderModel& model, float offset);

template <typename To, typename From>
EncoderWeights<To> cast_weights(const EncoderWeights<From>& m) {
  EncoderWeights<To> out;
  out.config = m.config;
  out.params.reserve(m.params.size());
  for (const auto& t : m.params) {
    out.params.emplace_back(t.shape, std::vector<To>(t.data.begin(), t.data.end()));
  }
  return out;
}

template <typename T>
struct BoundParams {
  const EncoderWeights<T>* weights = nullptr;
  ParamIds ids;
  std::vector<ad::Var<T>> vars;
  const ad::Var<T>& operator[](ad::ParamId id) const { return vars[id]; }
};

template <typename T>
BoundParams<T> bind(ad::Graph<T>& g, const EncoderWeights<T>& w);

// Logits with one row per position: shape [L, vocab_size].
template <typename T>
ad::Var<T> forward_logits(const BoundParams<T>& p, const TokenSequence& seq);

// Convenience inference path without gradient recording.
ad::Tensor<float> forward_logits(const EncoderModel& model, const TokenSequence& seq);

bool all_finite(const EncoderModel& model);

// Checkpoint: "CSPL1\n", key=value lines, blank line, then little-endian f32
// parameter blocks in param_layout order.
void save_checkpoint(const std::string& path, const EncoderModel& model,
                     const std::map<std::string, std::string>& metadata = {});
struct Checkpoint {
  EncoderModel model;
  std::map<std::string, std::string> metadata;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace csplade::encoder
