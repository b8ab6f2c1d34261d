// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include "csplade/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace csplade::train {

void stderr_logger(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

void AdaptConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("adapt: batch_size must be >= 1");
  if (seq_len < 3) throw std::invalid_argument("adapt: seq_len must be >= 3");
  if (steps > 0 && warmup_steps >= steps) throw std::invalid_argument("adapt: warmup_steps must be < steps");
  if (!(lambda_relu >= 0.0)) throw std::invalid_argument("adapt: lambda_relu must be >= 0");
  if (!(lr >= 0.0f)) throw std::invalid_argument("adapt: lr must be >= 0");
}

void ContrastiveConfig::validate() const {
  if (global_batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(lambda_q >= 0.0) || !(lambda_d >= 0.0)) throw std::invalid_argument("train: lambdas must be >= 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
    throw std::invalid_argument("train: warmup_fraction must be in [0, 1)");
  if (!(lr >= 0.0f)) throw std::invalid_argument("train: lr must be >= 0");
}

void write_report_csv(const std::string& path, const TrainReport& report) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "step,rank_loss,flops_q,flops_d,clm,relu_clm,total,dead_frac,avg_nnz_q,avg_nnz_d,lr\n";
  char buf[320];
  for (const auto& s : report.steps) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.6f,%.4f,%.4f,%.9g\n", s.step, s.rank_loss,
                  s.flops_q, s.flops_d, s.clm, s.relu_clm, s.total, s.dead_frac, s.avg_nnz_q, s.avg_nnz_d, s.lr);
    os << buf;
  }
}

double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak) {
  if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps == 0 || total_steps - 1 <= warmup_steps) return peak;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - 1 - warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

double dead_dim_fraction(const std::vector<SparseRep>& reps, std::size_t sample_size) {
  if (reps.empty()) throw std::invalid_argument("dead_dim_fraction: empty batch");
  const std::size_t n = sample_size == 0 ? reps.size() : std::min(sample_size, reps.size());
  std::size_t dead = 0;
  for (std::size_t i = 0; i < n; ++i) dead += reps[i].empty();
  return static_cast<double>(dead) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Optimizer

AdamW::AdamW(const EncoderModel& model, float beta1, float beta2, float eps, float weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
  for (const auto& p : model.params) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void AdamW::step(EncoderModel& model, const ad::Gradients<float>& grads, float lr) {
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    auto& p = model.params[i].data;
    const auto& g = grads[i].data;
    auto& m = m_[i];
    auto& v = v_[i];
    const bool decay = model.params[i].shape.size() == 2 && wd_ != 0.0f;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * g[j] * g[j];
      const float upd = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      if (decay) p[j] -= lr * wd_ * p[j];
      p[j] -= lr * upd;
    }
  }
}

ad::Gradients<float> zero_grads(const EncoderModel& model) {
  ad::Gradients<float> g;
  g.reserve(model.params.size());
  for (const auto& p : model.params) g.push_back(ad::Tensor<float>::zeros(p.shape));
  return g;
}

// ---------------------------------------------------------------------------
// Encoding

SparseRep encode(const EncoderModel& model, const TokenSequence& seq, splade::ActivationMode mode) {
  const auto in = encoder::prepare_input(seq, model.config);
  return splade::splade_pool(encoder::forward_logits(model, in), {in.span_begin, in.span_end}, mode);
}

TokenSequence tokenize_for(const EncoderModel& model, const std::string& text, const corpus::Vocabulary& vocab) {
  return corpus::tokenize(text, vocab, encoder::input_budget(model.config));
}

std::vector<std::pair<std::string, SparseRep>> encode_collection(const EncoderModel& model,
                                                                 const corpus::TextCollection& texts,
                                                                 const corpus::Vocabulary& vocab) {
  std::vector<std::pair<std::string, SparseRep>> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i)
    out.emplace_back(texts.id(i), encode(model, tokenize_for(model, texts.text(i), vocab)));
  return out;
}

namespace {

std::vector<SparseRep> rows_to_reps(const ad::Var<float>& reps) {
  const std::size_t rows = reps.shape()[0], vocab = reps.shape()[1];
  std::vector<SparseRep> out;
  for (std::size_t r = 0; r < rows; ++r) out.push_back(SparseRep::from_dense(reps.value().subspan(r * vocab, vocab)));
  return out;
}

double avg_nnz(const std::vector<SparseRep>& reps) {
  if (reps.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& r : reps) n += r.nnz();
  return static_cast<double>(n) / static_cast<double>(reps.size());
}

void check_finite(std::size_t step, const StepRecord& r) {
  if (std::isfinite(r.total)) return;
  std::ostringstream ss;
  ss << "non-finite loss at step " << step << ": rank_loss=" << r.rank_loss << " flops_q=" << r.flops_q
     << " flops_d=" << r.flops_d << " clm=" << r.clm << " relu_clm=" << r.relu_clm << " total=" << r.total;
  throw ad::NumericError(ss.str());
}

// Deterministic epoch-shuffled stream of indices in [0, n).
class Sampler {
 public:
  Sampler(std::size_t n, std::mt19937_64& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), 0);
    reshuffle();
  }
  // Next batch; the final batch of an epoch may be short.
  std::vector<std::size_t> next(std::size_t batch) {
    if (pos_ == order_.size()) reshuffle();
    const std::size_t end = std::min(pos_ + batch, order_.size());
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return out;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::vector<std::size_t> order_;
  std::mt19937_64& rng_;
  std::size_t pos_ = 0;
};

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

}  // namespace

// ---------------------------------------------------------------------------
// Adaptation

TrainReport run_adaptation(EncoderModel& model, const std::vector<TokenSequence>& texts, const AdaptConfig& cfg,
                           const Logger& log) {
  cfg.validate();
  if (texts.empty()) throw std::invalid_argument("run_adaptation: corpus is empty");
  TrainReport report;
  if (cfg.steps == 0) return report;

  const auto saved_mask = model.config.mask_mode;
  const bool saved_echo = model.config.echo_mode;
  model.config.mask_mode = encoder::MaskMode::Causal;
  model.config.echo_mode = false;

  const std::size_t max_len = std::min(cfg.seq_len, model.config.max_seq_len);
  std::vector<TokenSequence> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) {
    TokenSequence s = t;
    if (s.ids.size() > max_len) {
      // Keep the leading tokens and close with EOS.
      s.ids.resize(max_len);
      s.ids.back() = encoder::kEos;
      s.valid_len = std::min(s.valid_len, max_len);
      s.span_end = std::min(s.span_end, max_len);
    }
    seqs.push_back(std::move(s));
  }

  std::mt19937_64 rng(cfg.seed);
  Sampler sampler(seqs.size(), rng);
  AdamW opt(model);
  const float lambda = static_cast<float>(cfg.lambda_relu);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto t0 = Clock::now();
    auto batch = sampler.next(cfg.batch_size);
    if (batch.size() < cfg.batch_size) {
      auto more = sampler.next(cfg.batch_size - batch.size());
      batch.insert(batch.end(), more.begin(), more.end());
    }

    ad::Graph<float> g;
    const auto p = encoder::bind(g, model);
    std::size_t n_targets = 0;
    ad::Var<float> clm_sum, relu_sum;
    std::vector<SparseRep> reps;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& s = seqs[batch[b]];
      ad::Var<float> logits = encoder::forward_logits(p, s);
      auto terms = splade::adaptation_loss<float>(logits, s.ids, s.valid_len, lambda, ad::Reduction::Sum);
      n_targets += splade::adaptation_targets(s.ids, s.valid_len);
      clm_sum = b == 0 ? terms.clm : ad::add(clm_sum, terms.clm);
      relu_sum = b == 0 ? terms.relu_clm : ad::add(relu_sum, terms.relu_clm);
      const std::size_t vocab = model.config.vocab_size;
      ad::Tensor<float> lt({s.size(), vocab}, std::vector<float>(logits.value().begin(), logits.value().end()));
      reps.push_back(splade::splade_pool(lt, {s.span_begin, s.span_end}));
    }
    if (n_targets == 0) throw std::invalid_argument("run_adaptation: batch has no next-token targets");
    const float inv = 1.0f / static_cast<float>(n_targets);
    ad::Var<float> clm = ad::scale(clm_sum, inv);
    ad::Var<float> relu_clm = ad::scale(relu_sum, inv);
    ad::Var<float> total = ad::add(clm, ad::scale(relu_clm, lambda));

    StepRecord rec;
    rec.step = step;
    rec.clm = clm.item();
    rec.relu_clm = relu_clm.item();
    rec.total = total.item();
    rec.dead_frac = dead_dim_fraction(reps);
    rec.avg_nnz_d = avg_nnz(reps);
    rec.lr = lr_at(step, cfg.steps, cfg.warmup_steps, cfg.lr);
    check_finite(step, rec);

    auto grads = zero_grads(model);
    g.backward(total, grads);
    opt.step(model, grads, static_cast<float>(rec.lr));
    rec.wall_ms = ms_since(t0);
    report.steps.push_back(rec);
  }
  if (!encoder::all_finite(model)) log("adaptation produced non-finite weights");
  model.config.mask_mode = saved_mask;
  model.config.echo_mode = saved_echo;
  return report;
}

// ---------------------------------------------------------------------------
// Contrastive

std::vector<TrainExample> build_train_set(const corpus::Queries& queries, const corpus::Corpus& corpus,
                                          const std::vector<corpus::Triple>& triples,
                                          const corpus::Vocabulary& vocab, const EncoderModel& model,
                                          std::size_t hard_negs, std::uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("build_train_set: corpus is empty");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  std::vector<TrainExample> out;
  out.reserve(triples.size());
  for (const auto& t : triples) {
    if (t.positive_ids.empty()) throw std::invalid_argument("train set: query '" + t.query_id + "' has no positive");
    TrainExample ex;
    ex.query = tokenize_for(model, queries.text_of(t.query_id), vocab);
    std::set<std::string> used(t.positive_ids.begin(), t.positive_ids.end());
    for (const auto& id : t.positive_ids) ex.positives.push_back(tokenize_for(model, corpus.text_of(id), vocab));
    for (const auto& id : t.negative_ids) {
      if (used.count(id)) continue;
      used.insert(id);
      ex.hard_negatives.push_back(tokenize_for(model, corpus.text_of(id), vocab));
    }
    // Top up short pools; give up after a bounded number of collisions.
    for (std::size_t tries = 0; ex.hard_negatives.size() < hard_negs && tries < 64 * (hard_negs + 1); ++tries) {
      const std::size_t d = pick(rng);
      if (!used.insert(corpus.id(d)).second) continue;
      ex.hard_negatives.push_back(tokenize_for(model, corpus.text(d), vocab));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::size_t contrastive_steps(std::size_t n_examples, const ContrastiveConfig& cfg) {
  const std::size_t per_epoch = (n_examples + cfg.global_batch_size - 1) / cfg.global_batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  return cfg.max_steps > 0 ? std::min(total, cfg.max_steps) : total;
}

template <typename T>
BatchGraph<T> contrastive_graph(const encoder::BoundParams<T>& p, const std::vector<TokenSequence>& queries,
                                const std::vector<std::vector<TokenSequence>>& docs_per_query, double lambda_q,
                                double lambda_d, splade::ActivationMode mode) {
  if (queries.empty() || queries.size() != docs_per_query.size())
    throw std::invalid_argument("contrastive_graph: need one doc group per query");
  const std::size_t group = docs_per_query[0].size();
  if (group == 0) throw std::invalid_argument("contrastive_graph: every query needs a positive");
  for (const auto& d : docs_per_query)
    if (d.size() != group) throw std::invalid_argument("contrastive_graph: doc groups must be equally sized");

  const auto& cfg = p.weights->config;
  auto rep_of = [&](const TokenSequence& s) {
    const auto in = encoder::prepare_input(s, cfg);
    return splade::pool<T>(encoder::forward_logits(p, in), {in.span_begin, in.span_end}, mode);
  };
  std::vector<ad::Var<T>> qv, dv;
  for (const auto& q : queries) qv.push_back(rep_of(q));
  for (const auto& group_docs : docs_per_query)
    for (const auto& d : group_docs) dv.push_back(rep_of(d));

  BatchGraph<T> out;
  out.q_reps = ad::stack_rows<T>(qv);
  out.d_reps = ad::stack_rows<T>(dv);
  ad::Var<T> scores = ad::matmul_nt(out.q_reps, out.d_reps);
  std::vector<int> targets(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) targets[i] = static_cast<int>(i * group);
  out.rank = ad::softmax_cross_entropy<T>(scores, targets, ad::Reduction::Mean);
  out.flops_q = splade::flops_reg<T>(out.q_reps);
  out.flops_d = splade::flops_reg<T>(out.d_reps);
  out.total = ad::add(out.rank, ad::add(ad::scale(out.flops_q, static_cast<T>(lambda_q)),
                                        ad::scale(out.flops_d, static_cast<T>(lambda_d))));
  return out;
}

template BatchGraph<float> contrastive_graph<float>(const encoder::BoundParams<float>&,
                                                    const std::vector<TokenSequence>&,
                                                    const std::vector<std::vector<TokenSequence>>&, double, double,
                                                    splade::ActivationMode);
template BatchGraph<double> contrastive_graph<double>(const encoder::BoundParams<double>&,
                                                      const std::vector<TokenSequence>&,
                                                      const std::vector<std::vector<TokenSequence>>&, double, double,
                                                      splade::ActivationMode);

TrainReport run_contrastive(EncoderModel& model, const std::vector<TrainExample>& train_set,
                            const ContrastiveConfig& cfg, const Logger& log) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("run_contrastive: empty training set");
  const std::size_t H = cfg.hard_negatives_per_positive;
  for (const auto& ex : train_set) {
    if (ex.positives.empty()) throw std::invalid_argument("run_contrastive: example without a positive");
    if (ex.hard_negatives.size() < H) {
      throw std::invalid_argument("run_contrastive: hard-negative pool of " + std::to_string(ex.hard_negatives.size()) +
                                  " is smaller than " + std::to_string(H));
    }
  }
  model.config.mask_mode = cfg.mask_mode;
  model.config.echo_mode = cfg.echo_mode;

  TrainReport report;
  const std::size_t total_steps = contrastive_steps(train_set.size(), cfg);
  const auto warmup = static_cast<std::size_t>(cfg.warmup_fraction * static_cast<double>(total_steps));
  std::mt19937_64 rng(cfg.seed);
  Sampler sampler(train_set.size(), rng);
  AdamW opt(model);

  for (std::size_t step = 0; step < total_steps; ++step) {
    const auto t0 = Clock::now();
    const auto batch = sampler.next(cfg.global_batch_size);
    std::vector<TokenSequence> queries;
    std::vector<std::vector<TokenSequence>> docs;
    for (auto i : batch) {
      const auto& ex = train_set[i];
      queries.push_back(ex.query);
      std::vector<TokenSequence> group;
      group.push_back(ex.positives[std::uniform_int_distribution<std::size_t>(0, ex.positives.size() - 1)(rng)]);
      std::vector<std::size_t> pool(ex.hard_negatives.size());
      std::iota(pool.begin(), pool.end(), 0);
      for (std::size_t h = 0; h < H; ++h) {
        std::uniform_int_distribution<std::size_t> pick(h, pool.size() - 1);
        std::swap(pool[h], pool[pick(rng)]);
        group.push_back(ex.hard_negatives[pool[h]]);
      }
      docs.push_back(std::move(group));
    }

    ad::Graph<float> g;
    const auto p = encoder::bind(g, model);
    auto bg = contrastive_graph<float>(p, queries, docs, cfg.lambda_q, cfg.lambda_d, cfg.activation);

    StepRecord rec;
    rec.step = step;
    rec.rank_loss = bg.rank.item();
    rec.flops_q = bg.flops_q.item();
    rec.flops_d = bg.flops_d.item();
    rec.total = bg.total.item();
    const auto q_reps = rows_to_reps(bg.q_reps);
    const auto d_reps = rows_to_reps(bg.d_reps);
    std::vector<SparseRep> all = q_reps;
    all.insert(all.end(), d_reps.begin(), d_reps.end());
    rec.dead_frac = dead_dim_fraction(all);
    rec.avg_nnz_q = avg_nnz(q_reps);
    rec.avg_nnz_d = avg_nnz(d_reps);
    rec.lr = lr_at(step, total_steps, warmup, cfg.lr);
    check_finite(step, rec);
    if (rec.dead_frac == 1.0) {
      std::string msg = "step " + std::to_string(step) + ": every query and document rep is empty (dead_dim_fraction=1)";
      report.warnings.push_back(msg);
      log(msg);
    }

    auto grads = zero_grads(model);
    g.backward(bg.total, grads);
    opt.step(model, grads, static_cast<float>(rec.lr));
    rec.wall_ms = ms_since(t0);
    report.steps.push_back(rec);
  }
  return report;
}

}  // namespace csplade::train
