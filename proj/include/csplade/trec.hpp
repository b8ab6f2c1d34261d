// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

// TREC-style judgment and run containers shared by loaders, search and eval.
namespace csplade::trec {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// qid -> docid -> grade
using Qrels = std::map<std::string, std::map<std::string, int>>;

struct ScoredDoc {
  std::string doc_id;
  float score = 0.0f;
};

// qid -> ranked list (best first)
using Run = std::map<std::string, std::vector<ScoredDoc>>;

// `qid 0 docid rel`
Qrels load_qrels(const std::string& path);
void write_qrels(const std::string& path, const Qrels& qrels);

// `qid Q0 docid rank score tag`
Run load_run(const std::string& path);
void write_run(const std::string& path, const Run& run, const std::string& tag);

}  // namespace csplade::trec
