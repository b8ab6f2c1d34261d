// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include "csplade/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"

namespace csplade::corpus {

namespace {

const char* const kReserved[encoder::kNumReserved] = {"[pad]", "[bos]", "[eos]", "[unk]"};

}  // namespace

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  for (const char* r : kReserved) {
    token_to_id_.emplace(r, static_cast<int>(id_to_token_.size()));
    id_to_token_.emplace_back(r);
  }
  for (const auto& t : tokens) {
    if (t.empty() || token_to_id_.count(t)) throw SpecError("vocabulary: empty or duplicate token '" + t + "'");
    token_to_id_.emplace(t, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(t);
  }
}

int Vocabulary::id(std::string_view token) const { return find(token).value_or(encoder::kUnk); }

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(int id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }

std::vector<std::string> Vocabulary::tokens() const {
  return {id_to_token_.begin() + static_cast<std::ptrdiff_t>(encoder::kNumReserved), id_to_token_.end()};
}

Vocabulary build_vocab(const std::vector<std::string>& texts, std::size_t max_size) {
  std::map<std::string, std::size_t> freq;
  for (const auto& t : texts)
    for (auto& tok : split_tokens(t)) ++freq[tok];
  for (const char* r : kReserved) freq.erase(r);
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t room = max_size > encoder::kNumReserved ? max_size - encoder::kNumReserved : 0;
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < ranked.size() && i < room; ++i) kept.push_back(ranked[i].first);
  return Vocabulary(kept);
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw encoder::LengthError("tokenize: max_len must leave room for BOS and EOS");
  TokenSequence seq;
  seq.ids.push_back(encoder::kBos);
  for (const auto& tok : split_tokens(text)) {
    if (seq.ids.size() + 1 >= max_len) break;
    seq.ids.push_back(vocab.id(tok));
  }
  seq.ids.push_back(encoder::kEos);
  seq.valid_len = seq.ids.size();
  seq.span_begin = 1;
  seq.span_end = seq.ids.size();
  return seq;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == encoder::kPad || id == encoder::kBos || id == encoder::kEos) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Collections and files

void TextCollection::add(const std::string& id, const std::string& text) {
  if (!index_.emplace(id, ids_.size()).second) throw SpecError("duplicate id '" + id + "'");
  ids_.push_back(id);
  texts_.push_back(text);
}

std::optional<std::size_t> TextCollection::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& TextCollection::text_of(const std::string& id) const {
  auto i = find(id);
  if (!i) throw SpecError("unknown id '" + id + "'");
  return texts_[*i];
}

TextCollection load_tsv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  TextCollection c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw ParseError(path + ": expected 'id<TAB>text'", lineno);
    const std::string id = line.substr(0, tab);
    if (c.find(id)) throw ParseError(path + ": duplicate id '" + id + "'", lineno);
    c.add(id, line.substr(tab + 1));
  }
  return c;
}

void write_tsv(const std::string& path, const TextCollection& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (std::size_t i = 0; i < c.size(); ++i) os << c.id(i) << '\t' << c.text(i) << '\n';
}

trec::Qrels load_qrels(const std::string& path) { return trec::load_qrels(path); }

std::vector<Triple> load_triples(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<Triple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    Triple t;
    try {
      const auto j = nlohmann::json::parse(line);
      t.query_id = j.at("query_id").get<std::string>();
      t.positive_ids = j.at("positive_ids").get<std::vector<std::string>>();
      if (j.contains("negative_ids")) t.negative_ids = j.at("negative_ids").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what(), lineno);
    }
    if (t.positive_ids.empty()) throw ParseError(path + ": triple has no positive_ids", lineno);
    out.push_back(std::move(t));
  }
  return out;
}

void write_triples(const std::string& path, const std::vector<Triple>& triples) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& t : triples) {
    nlohmann::ordered_json j;
    j["query_id"] = t.query_id;
    j["positive_ids"] = t.positive_ids;
    j["negative_ids"] = t.negative_ids;
    os << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

std::string fmt_id(const char* prefix, std::size_t i, int width) {
  std::string digits = std::to_string(i);
  if (digits.size() < static_cast<std::size_t>(width)) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

std::string filler(std::size_t i) { return fmt_id("f", i, 3); }

std::string join(const std::vector<std::string>& toks) {
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

int digits(std::size_t n) {
  int d = 1;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return std::max(d, 3);
}

}  // namespace

std::string query_form(std::size_t concept_id) { return fmt_id("w", concept_id, 3) + "a"; }
std::string doc_form(std::size_t concept_id) { return fmt_id("w", concept_id, 3) + "b"; }

void SynthSpec::validate() const {
  if (n_queries == 0) throw SpecError("synth: need at least one judged query");
  if (synonym_pairs < query_concepts || query_concepts == 0) {
    throw SpecError("synth: synonym_pairs must be >= query_concepts >= 1");
  }
  if (base_vocab_size < 2 * synonym_pairs + 1) {
    throw SpecError("synth: base_vocab_size " + std::to_string(base_vocab_size) + " cannot hold " +
                    std::to_string(synonym_pairs) + " disjoint synonym pairs plus filler words");
  }
  if (n_docs < n_queries + n_train_queries) {
    throw SpecError("synth: n_docs must cover one positive per query (" +
                    std::to_string(n_queries + n_train_queries) + ")");
  }
  if (doc_len_min < query_concepts + (query_filler ? 1 : 0) || doc_len_max < doc_len_min) {
    throw SpecError("synth: document length range must fit the query concepts");
  }
  if (!(phrase_rate >= 0.0 && phrase_rate <= 1.0)) throw SpecError("synth: phrase_rate must be in [0, 1]");
}

SynthData synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t n_fillers = spec.base_vocab_size - 2 * spec.synonym_pairs;
  const std::size_t n_total_q = spec.n_queries + spec.n_train_queries;
  auto uniform = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto coin = [&]() { return std::uniform_int_distribution<int>(0, 1)(rng) == 1; };

  struct QuerySpec {
    std::vector<std::size_t> concepts;
    std::size_t filler_word;
  };
  std::vector<QuerySpec> qspecs(n_total_q);
  std::vector<std::vector<std::string>> docs;
  docs.reserve(spec.n_docs);

  // Positive documents first (doc index == query index), then background.
  for (std::size_t q = 0; q < n_total_q; ++q) {
    auto& qs = qspecs[q];
    std::set<std::size_t> chosen;
    while (chosen.size() < spec.query_concepts) chosen.insert(uniform(spec.synonym_pairs));
    qs.concepts.assign(chosen.begin(), chosen.end());
    std::shuffle(qs.concepts.begin(), qs.concepts.end(), rng);
    qs.filler_word = uniform(n_fillers);

    const std::size_t len = spec.doc_len_min + uniform(spec.doc_len_max - spec.doc_len_min + 1);
    std::vector<std::string> toks;
    for (auto c : qs.concepts) toks.push_back(doc_form(c));
    if (spec.query_filler) toks.push_back(filler(qs.filler_word));
    while (toks.size() < len) {
      if (coin()) {
        const std::size_t c = uniform(spec.synonym_pairs);
        const bool in_query = chosen.count(c) > 0;
        toks.push_back(in_query || coin() ? doc_form(c) : query_form(c));
      } else {
        toks.push_back(filler(uniform(n_fillers)));
      }
    }
    std::shuffle(toks.begin(), toks.end(), rng);
    docs.push_back(std::move(toks));
  }
  std::bernoulli_distribution phrase(spec.phrase_rate);
  while (docs.size() < spec.n_docs) {
    const std::size_t len = spec.doc_len_min + uniform(spec.doc_len_max - spec.doc_len_min + 1);
    std::vector<std::string> toks;
    while (toks.size() < len) {
      if (coin()) {
        const std::size_t c = uniform(spec.synonym_pairs);
        const bool doc_first = coin();
        toks.push_back(doc_first ? doc_form(c) : query_form(c));
        if (phrase(rng)) toks.push_back(doc_first ? query_form(c) : doc_form(c));
      } else {
        toks.push_back(filler(uniform(n_fillers)));
      }
    }
    docs.push_back(std::move(toks));
  }

  // Shuffle collection order; doc ids follow the shuffled position.
  std::vector<std::size_t> order(spec.n_docs);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> position(spec.n_docs);
  for (std::size_t p = 0; p < order.size(); ++p) position[order[p]] = p;
  const int dw = digits(spec.n_docs);
  auto doc_id = [&](std::size_t gen_index) { return fmt_id("d", position[gen_index], dw); };

  SynthData out;
  for (std::size_t p = 0; p < order.size(); ++p) out.corpus.add(fmt_id("d", p, dw), join(docs[order[p]]));

  // surface token -> generated doc indices containing it
  std::map<std::string, std::vector<std::size_t>> postings;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    std::set<std::string> uniq(docs[d].begin(), docs[d].end());
    for (const auto& t : uniq) postings[t].push_back(d);
  }

  const int qw = digits(n_total_q);
  for (std::size_t q = 0; q < n_total_q; ++q) {
    const auto& qs = qspecs[q];
    const bool judged = q < spec.n_queries;
    const std::string qid = judged ? fmt_id("q", q, qw) : fmt_id("t", q - spec.n_queries, qw);
    std::vector<std::string> qtoks;
    for (auto c : qs.concepts) qtoks.push_back(query_form(c));
    if (spec.query_filler) qtoks.push_back(filler(qs.filler_word));
    std::shuffle(qtoks.begin(), qtoks.end(), rng);
    out.queries.add(qid, join(qtoks));
    if (judged) out.qrels[qid][doc_id(q)] = 1;

    // Hard negatives: documents sharing the most query surface forms.
    std::map<std::size_t, std::size_t> overlap;
    for (auto c : qs.concepts) {
      auto it = postings.find(query_form(c));
      if (it == postings.end()) continue;
      for (auto d : it->second)
        if (d != q) ++overlap[d];
    }
    std::vector<std::pair<std::size_t, std::uint64_t>> cands;  // (doc, tiebreak)
    for (const auto& [d, n] : overlap) cands.emplace_back(d, rng());
    std::sort(cands.begin(), cands.end(), [&](const auto& a, const auto& b) {
      const auto oa = overlap[a.first], ob = overlap[b.first];
      return oa != ob ? oa > ob : a.second < b.second;
    });
    Triple t;
    t.query_id = qid;
    t.positive_ids = {doc_id(q)};
    std::set<std::size_t> used;
    for (std::size_t i = 0; i < cands.size() && t.negative_ids.size() < spec.hard_negatives; ++i) {
      used.insert(cands[i].first);
      t.negative_ids.push_back(doc_id(cands[i].first));
    }
    while (t.negative_ids.size() < spec.hard_negatives && used.size() + 1 < spec.n_docs) {
      const std::size_t d = uniform(spec.n_docs);
      if (d == q || !used.insert(d).second) continue;
      t.negative_ids.push_back(doc_id(d));
    }
    out.triples.push_back(std::move(t));
  }
  return out;
}

}  // namespace csplade::corpus
