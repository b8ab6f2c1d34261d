// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include "csplade/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_set>

namespace csplade::eval {

std::size_t CollectionStats::df_of(const std::string& term) const {
  auto it = df.find(term);
  return it == df.end() ? 0 : it->second;
}

double CollectionStats::idf(const std::string& term) const {
  const double n = static_cast<double>(doc_count);
  const double d = static_cast<double>(df_of(term));
  return std::max(0.0, std::log(1.0 + (n - d + 0.5) / (d + 0.5)));
}

CollectionStats build_stats(const std::vector<std::vector<std::string>>& docs) {
  CollectionStats s;
  s.doc_count = docs.size();
  std::size_t total = 0;
  for (const auto& d : docs) {
    s.doc_len.push_back(d.size());
    total += d.size();
    std::unordered_set<std::string> uniq(d.begin(), d.end());
    for (const auto& t : uniq) ++s.df[t];
  }
  s.avg_doc_len = docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs.size());
  return s;
}

CollectionStats build_stats(const corpus::Corpus& corpus) {
  std::vector<std::vector<std::string>> docs;
  docs.reserve(corpus.size());
  for (const auto& t : corpus.texts()) docs.push_back(corpus::split_tokens(t));
  return build_stats(docs);
}

double bm25_score(const std::vector<std::string>& query, const std::vector<std::string>& doc,
                  const CollectionStats& stats, double k1, double b) {
  if (query.empty() || doc.empty()) return 0.0;
  std::unordered_map<std::string, std::size_t> tf;
  for (const auto& t : doc) ++tf[t];
  const double avgdl = stats.avg_doc_len > 0.0 ? stats.avg_doc_len : 1.0;
  const double norm = k1 * (1.0 - b + b * static_cast<double>(doc.size()) / avgdl);
  double score = 0.0;
  for (const auto& t : query) {
    auto it = tf.find(t);
    if (it == tf.end()) continue;
    const double f = static_cast<double>(it->second);
    score += stats.idf(t) * f * (k1 + 1.0) / (f + norm);
  }
  return score;
}

SearchResult bm25_search(const corpus::Corpus& corpus, const std::string& query, const CollectionStats& stats,
                         std::size_t k, double k1, double b) {
  SearchResult res;
  const auto q = corpus::split_tokens(query);
  if (q.empty() || k == 0) return res;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const double s = bm25_score(q, corpus::split_tokens(corpus.text(i)), stats, k1, b);
    if (s > 0.0) res.hits.push_back({corpus.id(i), static_cast<float>(s)});
  }
  // Sort on the float that is reported so ties are consistent with the run file.
  std::sort(res.hits.begin(), res.hits.end(), [](const trec::ScoredDoc& a, const trec::ScoredDoc& b) {
    return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
  });
  if (res.hits.size() > k) res.hits.resize(k);
  return res;
}

namespace {

const std::vector<trec::ScoredDoc>* ranked_for(const trec::Run& run, const std::string& qid) {
  auto it = run.find(qid);
  if (it == run.end()) return nullptr;
  std::unordered_set<std::string> seen;
  for (const auto& d : it->second)
    if (!seen.insert(d.doc_id).second)
      throw ContractError("duplicate docid '" + d.doc_id + "' in run for query '" + qid + "'");
  return &it->second;
}

bool has_relevant(const std::map<std::string, int>& judged) {
  return std::any_of(judged.begin(), judged.end(), [](const auto& kv) { return kv.second > 0; });
}

int grade(const std::map<std::string, int>& judged, const std::string& docid) {
  auto it = judged.find(docid);
  return it == judged.end() ? 0 : it->second;
}

template <typename F>
MetricResult per_query(const trec::Run& run, const trec::Qrels& qrels, std::size_t k, F&& f) {
  if (k == 0) throw ContractError("metric cutoff k must be >= 1");
  // Duplicates are a contract error even for queries that are not judged.
  for (const auto& [qid, docs] : run) ranked_for(run, qid);
  MetricResult r;
  double sum = 0.0;
  for (const auto& [qid, judged] : qrels) {
    if (!has_relevant(judged)) continue;
    const auto* ranked = ranked_for(run, qid);
    static const std::vector<trec::ScoredDoc> kEmpty;
    const auto& docs = ranked ? *ranked : kEmpty;
    const std::size_t n = std::min(k, docs.size());
    const double v = f(docs, n, judged);
    r.per_query[qid] = v;
    sum += v;
  }
  r.mean = r.per_query.empty() ? 0.0 : sum / static_cast<double>(r.per_query.size());
  return r;
}

}  // namespace

MetricResult mrr_at_k(const trec::Run& run, const trec::Qrels& qrels, std::size_t k) {
  return per_query(run, qrels, k, [](const auto& docs, std::size_t n, const auto& judged) {
    for (std::size_t i = 0; i < n; ++i)
      if (grade(judged, docs[i].doc_id) > 0) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
  });
}

MetricResult recall_at_k(const trec::Run& run, const trec::Qrels& qrels, std::size_t k) {
  return per_query(run, qrels, k, [](const auto& docs, std::size_t n, const auto& judged) {
    std::size_t rel = 0, hit = 0;
    for (const auto& [d, g] : judged) rel += g > 0;
    for (std::size_t i = 0; i < n; ++i) hit += grade(judged, docs[i].doc_id) > 0;
    return static_cast<double>(hit) / static_cast<double>(rel);
  });
}

MetricResult ndcg_at_k(const trec::Run& run, const trec::Qrels& qrels, std::size_t k) {
  return per_query(run, qrels, k, [k](const auto& docs, std::size_t n, const auto& judged) {
    auto gain = [](int g) { return std::exp2(static_cast<double>(g)) - 1.0; };
    double dcg = 0.0;
    for (std::size_t i = 0; i < n; ++i) dcg += gain(grade(judged, docs[i].doc_id)) / std::log2(static_cast<double>(i) + 2.0);
    std::vector<int> ideal;
    for (const auto& [d, g] : judged)
      if (g > 0) ideal.push_back(g);
    std::sort(ideal.rbegin(), ideal.rend());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) idcg += gain(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
    return dcg / idcg;
  });
}

std::vector<NamedMetric> evaluate(const trec::Run& run, const trec::Qrels& qrels,
                                  const std::vector<std::pair<std::string, std::size_t>>& metrics) {
  std::vector<NamedMetric> out;
  for (const auto& [name, k] : metrics) {
    NamedMetric m{name + "@" + std::to_string(k), {}};
    if (name == "mrr") {
      m.result = mrr_at_k(run, qrels, k);
    } else if (name == "recall") {
      m.result = recall_at_k(run, qrels, k);
    } else if (name == "ndcg") {
      m.result = ndcg_at_k(run, qrels, k);
    } else {
      throw ContractError("unknown metric '" + name + "'");
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<NamedMetric>& metrics) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  char buf[64];
  os << "qid,metric,value\n";
  for (const auto& m : metrics) {
    for (const auto& [qid, v] : m.result.per_query) {
      std::snprintf(buf, sizeof buf, "%.6f", v);
      os << qid << ',' << m.name << ',' << buf << '\n';
    }
  }
  for (const auto& m : metrics) {
    std::snprintf(buf, sizeof buf, "%.6f", m.result.mean);
    os << "all," << m.name << ',' << buf << '\n';
  }
}

}  // namespace csplade::eval
