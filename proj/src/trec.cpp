// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include "csplade/trec.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace csplade::trec {

Qrels load_qrels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open qrels " + path);
  Qrels q;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, iter, docid, extra;
    long rel = 0;
    if (!(ss >> qid >> iter >> docid >> rel) || (ss >> extra)) {
      throw ParseError("qrels: expected 'qid 0 docid rel'", lineno);
    }
    if (rel < 0) throw ParseError("qrels: negative relevance", lineno);
    q[qid][docid] = static_cast<int>(rel);
  }
  return q;
}

void write_qrels(const std::string& path, const Qrels& qrels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& [qid, docs] : qrels)
    for (const auto& [docid, rel] : docs) os << qid << " 0 " << docid << ' ' << rel << '\n';
}

Run load_run(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open run " + path);
  Run run;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, q0, docid, tag;
    long rank = 0;
    float score = 0.0f;
    if (!(ss >> qid >> q0 >> docid >> rank >> score >> tag)) {
      throw ParseError("run: expected 'qid Q0 docid rank score tag'", lineno);
    }
    run[qid].push_back({docid, score});
  }
  return run;
}

void write_run(const std::string& path, const Run& run, const std::string& tag) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  char buf[32];
  for (const auto& [qid, docs] : run) {
    for (std::size_t r = 0; r < docs.size(); ++r) {
      std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(docs[r].score));
      os << qid << " Q0 " << docs[r].doc_id << ' ' << (r + 1) << ' ' << buf << ' ' << tag << '\n';
    }
  }
}

}  // namespace csplade::trec
