// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "csplade/corpus.hpp"
#include "csplade/trec.hpp"

namespace csplade::eval {

inline constexpr double kBm25K1 = 0.9;
inline constexpr double kBm25B = 0.4;

class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CollectionStats {
  std::size_t doc_count = 0;
  double avg_doc_len = 0.0;
  std::unordered_map<std::string, std::size_t> df;
  std::vector<std::size_t> doc_len;

  std::size_t df_of(const std::string& term) const;
  double idf(const std::string& term) const;
};

// Tokens are lowercased whitespace splits (corpus::split_tokens).
CollectionStats build_stats(const std::vector<std::vector<std::string>>& docs);
CollectionStats build_stats(const corpus::Corpus& corpus);

double bm25_score(const std::vector<std::string>& query, const std::vector<std::string>& doc,
                  const CollectionStats& stats, double k1 = kBm25K1, double b = kBm25B);

struct SearchResult {
  std::vector<trec::ScoredDoc> hits;
};

// Exhaustive scoring; ties broken by ascending doc id. Only docs that share a
// term with the query are returned.
SearchResult bm25_search(const corpus::Corpus& corpus, const std::string& query, const CollectionStats& stats,
                         std::size_t k, double k1 = kBm25K1, double b = kBm25B);

struct MetricResult {
  std::map<std::string, double> per_query;  // judged queries only
  double mean = 0.0;
};

// Queries whose qrels hold no relevant doc (grade > 0) are excluded. Judged
// queries missing from the run score 0.
MetricResult mrr_at_k(const trec::Run& run, const trec::Qrels& qrels, std::size_t k);
MetricResult recall_at_k(const trec::Run& run, const trec::Qrels& qrels, std::size_t k);
MetricResult ndcg_at_k(const trec::Run& run, const trec::Qrels& qrels, std::size_t k);

struct NamedMetric {
  std::string name;  // e.g. "mrr@10"
  MetricResult result;
};

std::vector<NamedMetric> evaluate(const trec::Run& run, const trec::Qrels& qrels,
                                  const std::vector<std::pair<std::string, std::size_t>>& metrics);

// `qid,metric,value` rows, then one `all,<metric>,<mean>` row per metric.
void write_metrics_csv(const std::string& path, const std::vector<NamedMetric>& metrics);

}  // namespace csplade::eval
