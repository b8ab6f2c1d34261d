// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

// Pipeline driver: synth, adapt, train, encode, index, search, bm25, eval, bench.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "csplade/corpus.hpp"
#include "csplade/evalkit.hpp"
#include "csplade/index.hpp"
#include "csplade/kernels.hpp"
#include "csplade/quant.hpp"
#include "csplade/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace csplade;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kVocabKey = "vocab.tokens";

std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CSPLADE_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return n;
}

void apply_variant(encoder::EncoderConfig& c, const std::string& variant) {
  if (variant == "causal") {
    c.mask_mode = encoder::MaskMode::Causal;
    c.echo_mode = false;
  } else if (variant == "echo") {
    c.mask_mode = encoder::MaskMode::Causal;
    c.echo_mode = true;
  } else if (variant == "bi") {
    c.mask_mode = encoder::MaskMode::Bidirectional;
    c.echo_mode = false;
  } else {
    throw std::invalid_argument("unknown variant '" + variant + "'");
  }
}

std::string variant_of(const encoder::EncoderConfig& c) {
  if (c.mask_mode == encoder::MaskMode::Bidirectional) return "bi";
  return c.echo_mode ? "echo" : "causal";
}

struct LoadedModel {
  encoder::EncoderModel model;
  corpus::Vocabulary vocab;
  std::map<std::string, std::string> metadata;
};

LoadedModel load_model(const std::string& path) {
  auto ck = encoder::load_checkpoint(path);
  auto it = ck.metadata.find(kVocabKey);
  if (it == ck.metadata.end()) throw std::runtime_error("checkpoint " + path + " has no vocabulary");
  std::vector<std::string> tokens;
  std::istringstream ss(it->second);
  for (std::string t; ss >> t;) tokens.push_back(t);
  return {std::move(ck.model), corpus::Vocabulary(tokens), std::move(ck.metadata)};
}

void save_model(const std::string& path, const encoder::EncoderModel& m, const corpus::Vocabulary& vocab,
                std::map<std::string, std::string> metadata) {
  std::string joined;
  for (const auto& t : vocab.tokens()) {
    if (!joined.empty()) joined += ' ';
    joined += t;
  }
  metadata[kVocabKey] = joined;
  encoder::save_checkpoint(path, m, metadata);
}

// Encodes in contiguous chunks, one per worker; output order is input order.
std::vector<std::pair<std::string, splade::SparseRep>> encode_parallel(const encoder::EncoderModel& m,
                                                                      const corpus::TextCollection& texts,
                                                                      const corpus::Vocabulary& vocab) {
  std::vector<std::pair<std::string, splade::SparseRep>> out(texts.size());
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(1, texts.size()));
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      out[i] = {texts.id(i), train::encode(m, train::tokenize_for(m, texts.text(i), vocab))};
  };
  if (workers == 1) {
    work(0, texts.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (texts.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(texts.size(), lo + chunk);
    if (lo < hi) pool.emplace_back(work, lo, hi);
  }
  for (auto& t : pool) t.join();
  return out;
}

void ensure_parent(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Every option of the subcommand with its resolved value (defaults included).
json resolved_config(const CLI::App* sub) {
  json cfg = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name.empty()) continue;
    if (opt->get_expected_min() == 0) {
      cfg[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      cfg[name] = opt->as<std::string>();
    } else {
      cfg[name] = opt->get_default_str();
    }
  }
  return cfg;
}

void write_manifest(const std::string& path, const CLI::App* sub, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json j;
  j["subcommand"] = sub->get_name();
  j["config"] = resolved_config(sub);
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["seed"] = j["config"].contains("seed") ? j["config"]["seed"] : json(nullptr);
  j["version"] = kVersion;
  ensure_parent(path);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
}

std::string manifest_for(const std::string& out) { return out + ".manifest.json"; }

std::vector<std::pair<std::string, std::size_t>> parse_metrics(const std::string& spec) {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::stringstream ss(spec);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto at = item.find('@');
    if (at == std::string::npos) throw std::invalid_argument("metric '" + item + "' must look like name@k");
    out.emplace_back(item.substr(0, at), static_cast<std::size_t>(std::stoul(item.substr(at + 1))));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"csplade: sparse retrieval with decoder encoders"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", kVersion);

  // synth
  corpus::SynthSpec synth;
  std::string synth_out;
  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic vocabulary-mismatch dataset");
  s_synth->add_option("--seed", synth.seed);
  s_synth->add_option("--docs", synth.n_docs);
  s_synth->add_option("--queries", synth.n_queries);
  s_synth->add_option("--train-queries", synth.n_train_queries);
  s_synth->add_option("--base-vocab", synth.base_vocab_size);
  s_synth->add_option("--synonyms", synth.synonym_pairs);
  s_synth->add_option("--hard-negs", synth.hard_negatives);
  s_synth->add_option("--phrase-rate", synth.phrase_rate);
  s_synth->add_option("--out", synth_out)->required();

  // adapt
  std::string a_corpus, a_model, a_out, a_report;
  encoder::EncoderConfig a_cfg;
  a_cfg.d_model = 64;
  a_cfg.d_ff = 256;
  a_cfg.max_seq_len = 40;
  std::size_t a_vocab_max = 4096;
  float a_neg_bias = 0.0f;
  train::AdaptConfig adapt;
  adapt.steps = 200;
  auto* s_adapt = app.add_subcommand("adapt", "Adaptation phase on unlabeled text");
  s_adapt->add_option("--corpus", a_corpus)->required();
  s_adapt->add_option("--model", a_model, "start from this checkpoint instead of a fresh model");
  s_adapt->add_option("--out", a_out)->required();
  s_adapt->add_option("--report", a_report);
  s_adapt->add_option("--seed", adapt.seed);
  s_adapt->add_option("--steps", adapt.steps);
  s_adapt->add_option("--lr", adapt.lr);
  s_adapt->add_option("--batch", adapt.batch_size);
  s_adapt->add_option("--warmup", adapt.warmup_steps);
  s_adapt->add_option("--lambda-relu", adapt.lambda_relu);
  s_adapt->add_option("--d-model", a_cfg.d_model);
  s_adapt->add_option("--layers", a_cfg.n_layers);
  s_adapt->add_option("--heads", a_cfg.n_heads);
  s_adapt->add_option("--d-ff", a_cfg.d_ff);
  s_adapt->add_option("--max-len", a_cfg.max_seq_len);
  s_adapt->add_option("--vocab-max", a_vocab_max);
  s_adapt->add_option("--neg-bias", a_neg_bias);

  // train
  std::string t_model, t_corpus, t_queries, t_triples, t_out, t_report, t_variant = "bi";
  train::ContrastiveConfig tc;
  tc.epochs = 60;
  tc.global_batch_size = 8;
  auto* s_train = app.add_subcommand("train", "Contrastive training on triples");
  s_train->add_option("--model", t_model)->required();
  s_train->add_option("--corpus", t_corpus)->required();
  s_train->add_option("--queries", t_queries)->required();
  s_train->add_option("--triples", t_triples)->required();
  s_train->add_option("--out", t_out)->required();
  s_train->add_option("--report", t_report);
  s_train->add_option("--variant", t_variant)->check(CLI::IsMember({"causal", "echo", "bi"}));
  s_train->add_option("--seed", tc.seed);
  s_train->add_option("--epochs", tc.epochs);
  s_train->add_option("--steps", tc.max_steps, "cap on optimizer steps (0: epochs only)");
  s_train->add_option("--lr", tc.lr);
  s_train->add_option("--batch", tc.global_batch_size);
  s_train->add_option("--hard-negs", tc.hard_negatives_per_positive);
  s_train->add_option("--lambda-q", tc.lambda_q);
  s_train->add_option("--lambda-d", tc.lambda_d);

  // encode
  std::string e_model, e_input, e_out, e_variant;
  auto* s_encode = app.add_subcommand("encode", "Write sparse reps for a TSV collection");
  s_encode->add_option("--model", e_model)->required();
  s_encode->add_option("--input", e_input)->required();
  s_encode->add_option("--out", e_out)->required();
  s_encode->add_option("--variant", e_variant, "defaults to the checkpoint's variant")
      ->check(CLI::IsMember({"causal", "echo", "bi"}));

  // index
  std::string i_input, i_model, i_out;
  int i_bits = 8;
  auto* s_index = app.add_subcommand("index", "Build an inverted index from reps");
  s_index->add_option("--input", i_input)->required();
  s_index->add_option("--model", i_model, "checkpoint whose vocabulary the reps use")->required();
  s_index->add_option("--bits", i_bits)->check(CLI::IsMember({0, 8, 16}));
  s_index->add_option("--out", i_out)->required();

  // search
  std::string q_index, q_model, q_queries, q_out, q_variant;
  std::size_t q_k = 10;
  auto* s_search = app.add_subcommand("search", "Encode queries and search an index");
  s_search->add_option("--index", q_index)->required();
  s_search->add_option("--model", q_model)->required();
  s_search->add_option("--queries", q_queries)->required();
  s_search->add_option("--k", q_k)->check(CLI::PositiveNumber);
  s_search->add_option("--out", q_out)->required();
  s_search->add_option("--variant", q_variant)->check(CLI::IsMember({"causal", "echo", "bi"}));

  // bm25
  std::string b_corpus, b_queries, b_out;
  std::size_t b_k = 10;
  double b_k1 = eval::kBm25K1, b_b = eval::kBm25B;
  auto* s_bm25 = app.add_subcommand("bm25", "Lexical baseline run");
  s_bm25->add_option("--corpus", b_corpus)->required();
  s_bm25->add_option("--queries", b_queries)->required();
  s_bm25->add_option("--k", b_k)->check(CLI::PositiveNumber);
  s_bm25->add_option("--k1", b_k1);
  s_bm25->add_option("--b", b_b);
  s_bm25->add_option("--out", b_out)->required();

  // eval
  std::string v_run, v_qrels, v_out, v_metrics = "mrr@10,recall@100,ndcg@10";
  auto* s_eval = app.add_subcommand("eval", "Score a TREC run against qrels");
  s_eval->add_option("--run", v_run)->required();
  s_eval->add_option("--qrels", v_qrels)->required();
  s_eval->add_option("--metrics", v_metrics);
  s_eval->add_option("--out", v_out)->required();

  // bench
  std::string n_model, n_queries, n_out;
  quant::BenchConfig bench;
  std::size_t n_group = 32;
  auto* s_bench = app.add_subcommand("bench", "Query-encoding latency for fp32, int8 and int4");
  s_bench->add_option("--model", n_model)->required();
  s_bench->add_option("--queries", n_queries)->required();
  s_bench->add_option("--warmup", bench.warmup_iters);
  s_bench->add_option("--iters", bench.measure_iters);
  s_bench->add_option("--group", n_group);
  s_bench->add_option("--out", n_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    if (sub == s_synth) {
      const auto d = corpus::synth_generate(synth);
      fs::create_directories(synth_out);
      const fs::path dir(synth_out);
      const std::vector<std::string> outs{(dir / "corpus.tsv").string(), (dir / "queries.tsv").string(),
                                          (dir / "qrels.txt").string(), (dir / "triples.jsonl").string()};
      corpus::write_tsv(outs[0], d.corpus);
      corpus::write_tsv(outs[1], d.queries);
      trec::write_qrels(outs[2], d.qrels);
      corpus::write_triples(outs[3], d.triples);
      write_manifest((dir / "manifest.json").string(), sub, {}, outs);
      std::printf("synth: %zu docs, %zu queries, %zu triples -> %s\n", d.corpus.size(), d.queries.size(),
                  d.triples.size(), synth_out.c_str());
    } else if (sub == s_adapt) {
      const auto docs = corpus::load_corpus(a_corpus);
      LoadedModel lm;
      if (!a_model.empty()) {
        lm = load_model(a_model);
      } else {
        lm.vocab = corpus::build_vocab(docs.texts(), a_vocab_max);
        a_cfg.vocab_size = lm.vocab.size();
        a_cfg.seed = adapt.seed;
        lm.model = encoder::init_model(a_cfg);
        if (a_neg_bias != 0.0f) encoder::apply_negative_bias(lm.model, a_neg_bias);
      }
      std::vector<encoder::TokenSequence> seqs;
      for (const auto& t : docs.texts()) seqs.push_back(train::tokenize_for(lm.model, t, lm.vocab));
      const auto rep = train::run_adaptation(lm.model, seqs, adapt);
      ensure_parent(a_out);
      save_model(a_out, lm.model, lm.vocab, {{"stage", "adapt"}});
      if (!a_report.empty()) train::write_report_csv(a_report, rep);
      write_manifest(manifest_for(a_out), sub, {a_corpus}, {a_out});
      if (!rep.steps.empty())
        std::printf("adapt: %zu steps, clm %.4f, dead_frac %.3f\n", rep.size(), rep.steps.back().clm,
                    rep.steps.back().dead_frac);
    } else if (sub == s_train) {
      auto lm = load_model(t_model);
      apply_variant(lm.model.config, t_variant);
      tc.mask_mode = lm.model.config.mask_mode;
      tc.echo_mode = lm.model.config.echo_mode;
      const auto docs = corpus::load_corpus(t_corpus);
      const auto queries = corpus::load_queries(t_queries);
      const auto triples = corpus::load_triples(t_triples);
      const auto ts = train::build_train_set(queries, docs, triples, lm.vocab, lm.model, tc.hard_negatives_per_positive,
                                             tc.seed);
      const auto rep = train::run_contrastive(lm.model, ts, tc);
      ensure_parent(t_out);
      save_model(t_out, lm.model, lm.vocab, {{"stage", "train"}});
      if (!t_report.empty()) train::write_report_csv(t_report, rep);
      write_manifest(manifest_for(t_out), sub, {t_model, t_corpus, t_queries, t_triples}, {t_out});
      std::printf("train: %zu steps (%s), final rank loss %.4f\n", rep.size(), t_variant.c_str(),
                  rep.steps.empty() ? 0.0 : rep.steps.back().rank_loss);
    } else if (sub == s_encode) {
      auto lm = load_model(e_model);
      if (!e_variant.empty()) apply_variant(lm.model.config, e_variant);
      const auto texts = corpus::load_tsv(e_input);
      const auto reps = encode_parallel(lm.model, texts, lm.vocab);
      ensure_parent(e_out);
      splade::write_reps(e_out, reps);
      write_manifest(manifest_for(e_out), sub, {e_model, e_input}, {e_out});
      std::printf("encode: %zu reps (%s)\n", reps.size(), variant_of(lm.model.config).c_str());
    } else if (sub == s_index) {
      const auto lm = load_model(i_model);
      const auto reps = splade::read_reps(i_input, static_cast<std::uint32_t>(lm.model.config.vocab_size));
      const auto idx = index::build_index(reps, static_cast<std::uint32_t>(lm.model.config.vocab_size),
                                          static_cast<std::uint8_t>(i_bits));
      ensure_parent(i_out);
      index::serialize(idx, i_out);
      write_manifest(manifest_for(i_out), sub, {i_input, i_model}, {i_out});
      std::printf("index: %u docs, %zu lists, %llu bytes\n", idx.doc_count(), idx.postings().size(),
                  static_cast<unsigned long long>(index::index_size_bytes(idx)));
    } else if (sub == s_search) {
      auto lm = load_model(q_model);
      if (!q_variant.empty()) apply_variant(lm.model.config, q_variant);
      const auto idx = index::deserialize(q_index);
      if (idx.vocab_size() != lm.model.config.vocab_size)
        throw std::runtime_error("index vocabulary does not match the model");
      const auto queries = corpus::load_queries(q_queries);
      const auto reps = encode_parallel(lm.model, queries, lm.vocab);
      trec::Run run;
      for (const auto& [qid, rep] : reps) run[qid] = index::to_run(qid, index::search(idx, rep, q_k)).at(qid);
      ensure_parent(q_out);
      trec::write_run(q_out, run, "csplade");
      write_manifest(manifest_for(q_out), sub, {q_index, q_model, q_queries}, {q_out});
      std::printf("search: %zu queries, k=%zu\n", queries.size(), q_k);
    } else if (sub == s_bm25) {
      const auto docs = corpus::load_corpus(b_corpus);
      const auto queries = corpus::load_queries(b_queries);
      const auto stats = eval::build_stats(docs);
      trec::Run run;
      for (std::size_t i = 0; i < queries.size(); ++i)
        run[queries.id(i)] = eval::bm25_search(docs, queries.text(i), stats, b_k, b_k1, b_b).hits;
      ensure_parent(b_out);
      trec::write_run(b_out, run, "bm25");
      write_manifest(manifest_for(b_out), sub, {b_corpus, b_queries}, {b_out});
      std::printf("bm25: %zu queries, k=%zu\n", queries.size(), b_k);
    } else if (sub == s_eval) {
      const auto run = trec::load_run(v_run);
      const auto qrels = trec::load_qrels(v_qrels);
      const auto ms = eval::evaluate(run, qrels, parse_metrics(v_metrics));
      ensure_parent(v_out);
      eval::write_metrics_csv(v_out, ms);
      write_manifest(manifest_for(v_out), sub, {v_run, v_qrels}, {v_out});
      for (const auto& m : ms) std::printf("%s\t%.4f\n", m.name.c_str(), m.result.mean);
    } else if (sub == s_bench) {
      const auto lm = load_model(n_model);
      const auto queries = corpus::load_queries(n_queries);
      std::vector<encoder::TokenSequence> seqs;
      for (const auto& t : queries.texts()) seqs.push_back(train::tokenize_for(lm.model, t, lm.vocab));
      std::vector<quant::LatencyReport> rows;
      rows.push_back(quant::bench_encode(lm.model, seqs, bench));
      rows.push_back(quant::bench_encode(quant::quantize_weights(lm.model, quant::QuantConfig::int8_per_channel()), seqs, bench));
      rows.push_back(quant::bench_encode(quant::quantize_weights(lm.model, quant::QuantConfig::int4_group(n_group)), seqs, bench));
      ensure_parent(n_out);
      quant::write_latency_csv(n_out, rows);
      write_manifest(manifest_for(n_out), sub, {n_model, n_queries}, {n_out});
      std::printf("%-22s %10s %10s %10s %12s\n", "config", "qps", "p50_ms", "p95_ms", "mem_bytes");
      for (const auto& r : rows)
        std::printf("%-22s %10.1f %10.3f %10.3f %12zu\n", r.config.c_str(), r.qps, r.p50_ms, r.p95_ms, r.mem_bytes);
      std::printf("kernels: %s\n", std::string(kernels::isa_name(kernels::active().isa)).c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s: %s\n", sub->get_name().c_str(), e.what());
    return 1;
  }
  return 0;
}
