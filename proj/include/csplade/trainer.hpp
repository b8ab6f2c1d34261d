// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "csplade/corpus.hpp"
#include "csplade/encoder.hpp"
#include "csplade/splade.hpp"

namespace csplade::train {

using encoder::EncoderModel;
using encoder::TokenSequence;
using splade::SparseRep;

// Receives warnings (all-dead batches and the like). Default prints to stderr.
using Logger = std::function<void(const std::string&)>;
void stderr_logger(const std::string& msg);

struct AdaptConfig {
  std::size_t steps = 500;
  std::size_t batch_size = 16;
  std::size_t seq_len = 128;
  float lr = 5e-3f;
  std::size_t warmup_steps = 25;
  double lambda_relu = splade::kDefaultLambdaRelu;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ContrastiveConfig {
  std::size_t epochs = 1;
  std::size_t global_batch_size = 8;
  std::size_t hard_negatives_per_positive = 3;
  float lr = 3e-3f;
  double warmup_fraction = 0.1;
  double lambda_q = splade::kDefaultLambdaQ;
  double lambda_d = splade::kDefaultLambdaD;
  encoder::MaskMode mask_mode = encoder::MaskMode::Causal;
  bool echo_mode = false;
  std::uint64_t seed = 0;
  splade::ActivationMode activation = splade::ActivationMode::PlainReLU;
  std::size_t max_steps = 0;  // 0: no cap beyond epochs

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  double rank_loss = 0.0;
  double flops_q = 0.0;
  double flops_d = 0.0;
  double clm = 0.0;
  double relu_clm = 0.0;
  double total = 0.0;
  double dead_frac = 0.0;
  double avg_nnz_q = 0.0;
  double avg_nnz_d = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;  // not written to CSV so reports stay reproducible
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::vector<std::string> warnings;

  std::size_t size() const { return steps.size(); }
};

void write_report_csv(const std::string& path, const TrainReport& report);

// Linear warmup from 0, then cosine decay reaching 0 on the last step.
double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak);

// Fraction of the first `sample_size` reps (all when 0) that are empty.
double dead_dim_fraction(const std::vector<SparseRep>& reps, std::size_t sample_size = 0);

class AdamW {
 public:
  AdamW(const EncoderModel& model, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f,
        float weight_decay = 0.01f);
  // Decay applies to 2-D weights only.
  void step(EncoderModel& model, const ad::Gradients<float>& grads, float lr);
  std::size_t t() const { return t_; }

 private:
  float beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

ad::Gradients<float> zero_grads(const EncoderModel& model);

// Full-precision inference path used everywhere outside training.
SparseRep encode(const EncoderModel& model, const TokenSequence& seq,
                 splade::ActivationMode mode = splade::ActivationMode::PlainReLU);
TokenSequence tokenize_for(const EncoderModel& model, const std::string& text, const corpus::Vocabulary& vocab);
std::vector<std::pair<std::string, SparseRep>> encode_collection(const EncoderModel& model,
                                                                 const corpus::TextCollection& texts,
                                                                 const corpus::Vocabulary& vocab);

// Adaptation always runs with a causal mask and no echo; the model's own
// attention settings are restored afterwards.
TrainReport run_adaptation(EncoderModel& model, const std::vector<TokenSequence>& texts, const AdaptConfig& cfg,
                           const Logger& log = stderr_logger);

struct TrainExample {
  TokenSequence query;
  std::vector<TokenSequence> positives;
  std::vector<TokenSequence> hard_negatives;  // pool; each step samples from it
};

// Tokenizes with the model's input budget. Pools shorter than `hard_negs`
// are topped up with seeded random corpus documents.
std::vector<TrainExample> build_train_set(const corpus::Queries& queries, const corpus::Corpus& corpus,
                                          const std::vector<corpus::Triple>& triples,
                                          const corpus::Vocabulary& vocab, const EncoderModel& model,
                                          std::size_t hard_negs, std::uint64_t seed);

std::size_t contrastive_steps(std::size_t n_examples, const ContrastiveConfig& cfg);

// Sets the model's mask and echo settings from `cfg` before training.
TrainReport run_contrastive(EncoderModel& model, const std::vector<TrainExample>& train_set,
                            const ContrastiveConfig& cfg, const Logger& log = stderr_logger);

// One contrastive step's loss graph, exposed for the stall and gradient tests.
// Docs are laid out [pos_0, negs_0..., pos_1, negs_1...]; every query sees all
// of them, so each faces H + (B-1)(1+H) negatives.
template <typename T>
struct BatchGraph {
  ad::Var<T> total;
  ad::Var<T> rank;
  ad::Var<T> flops_q;
  ad::Var<T> flops_d;
  ad::Var<T> q_reps;  // [B, V]
  ad::Var<T> d_reps;  // [B(1+H), V]
};

template <typename T>
BatchGraph<T> contrastive_graph(const encoder::BoundParams<T>& p, const std::vector<TokenSequence>& queries,
                                const std::vector<std::vector<TokenSequence>>& docs_per_query, double lambda_q,
                                double lambda_d, splade::ActivationMode mode);

}  // namespace csplade::train
