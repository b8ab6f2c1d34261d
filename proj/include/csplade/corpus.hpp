// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "csplade/encoder.hpp"
#include "csplade/trec.hpp"

namespace csplade::corpus {

using encoder::TokenSequence;
using trec::ParseError;

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Lowercased whitespace tokens.
std::vector<std::string> split_tokens(std::string_view text);

class Vocabulary {
 public:
  // Only the four reserved tokens.
  Vocabulary();
  // Tokens are added in the given order after the reserved ids.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return id_to_token_.size(); }
  // UNK for unknown tokens.
  int id(std::string_view token) const;
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;
  // Non-reserved tokens in id order.
  std::vector<std::string> tokens() const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Frequency-ranked (ties by token text), truncated to `max_size` ids in total.
Vocabulary build_vocab(const std::vector<std::string>& texts, std::size_t max_size);

// [BOS] + ids + [EOS], truncated to max_len keeping both markers. The pooling
// span excludes BOS and includes the content and EOS.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len);
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

// Id -> text with insertion order preserved; used for corpora and queries.
class TextCollection {
 public:
  void add(const std::string& id, const std::string& text);
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::string& text(std::size_t i) const { return texts_[i]; }
  std::optional<std::size_t> find(const std::string& id) const;
  const std::string& text_of(const std::string& id) const;
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::string>& texts() const { return texts_; }

  friend bool operator==(const TextCollection& a, const TextCollection& b) {
    return a.ids_ == b.ids_ && a.texts_ == b.texts_;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<std::string> texts_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Corpus = TextCollection;
using Queries = TextCollection;

struct Triple {
  std::string query_id;
  std::vector<std::string> positive_ids;
  std::vector<std::string> negative_ids;
  friend bool operator==(const Triple&, const Triple&) = default;
};

// `id<TAB>text`
TextCollection load_tsv(const std::string& path);
inline Corpus load_corpus(const std::string& path) { return load_tsv(path); }
inline Queries load_queries(const std::string& path) { return load_tsv(path); }
void write_tsv(const std::string& path, const TextCollection& c);

trec::Qrels load_qrels(const std::string& path);

// JSON lines: {"query_id":..., "positive_ids":[...], "negative_ids":[...]}
std::vector<Triple> load_triples(const std::string& path);
void write_triples(const std::string& path, const std::vector<Triple>& triples);

// Synthetic vocabulary-mismatch collection. Every concept has two surface
// forms; queries use the first, their positive documents only the second.
struct SynthSpec {
  std::size_t n_docs = 1000;
  std::size_t n_queries = 100;        // judged queries (qrels)
  std::size_t n_train_queries = 0;  // extra training-only queries (not judged)
  std::size_t base_vocab_size = 260;  // distinct surface words
  std::size_t synonym_pairs = 100;
  std::size_t doc_len_min = 8;
  std::size_t doc_len_max = 14;
  std::size_t query_concepts = 3;
  std::size_t hard_negatives = 3;
  // Adds one shared filler word to each query and its positive document.
  bool query_filler = false;
  // Chance that a concept in a background document is written as both of its
  // forms side by side. Background text is the only place the pairing shows.
  double phrase_rate = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthData {
  Corpus corpus;
  Queries queries;
  trec::Qrels qrels;
  std::vector<Triple> triples;
};

SynthData synth_generate(const SynthSpec& spec);

// Surface forms used by synth_generate for concept `c`.
std::string query_form(std::size_t concept_id);
std::string doc_form(std::size_t concept_id);

}  // namespace csplade::corpus
