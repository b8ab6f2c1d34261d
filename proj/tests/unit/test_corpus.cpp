// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <set>
#include <string>

#include "csplade/corpus.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace csplade;
using namespace csplade::corpus;

namespace {

void write_file(const std::filesystem::path& p, const std::string& body) {
  std::ofstream os(p, std::ios::binary);
  os << body;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec s;
  s.n_docs = 200;
  s.n_queries = 20;
  s.n_train_queries = 30;
  s.base_vocab_size = 80;
  s.synonym_pairs = 30;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("build_vocab: frequency order after the reserved ids") {
    const auto v = build_vocab({"a b", "a"}, 6);
    CHECK(v.size() == 6);
    CHECK(v.id("a") == 4);
    CHECK(v.id("b") == 5);
    CHECK(v.token(4) == "a");
    CHECK(build_vocab({}, 100).size() == 4);
    const auto small = build_vocab({"a a b c"}, 5);
    CHECK(small.id("a") == 4);
    CHECK(small.id("b") == encoder::kUnk);
    CHECK(small.id("never") == encoder::kUnk);
  }

  TEST_CASE("build_vocab breaks frequency ties by token text") {
    const auto v = build_vocab({"zeta alpha mid", "mid"}, 10);
    CHECK(v.tokens() == std::vector<std::string>{"mid", "alpha", "zeta"});
  }

  TEST_CASE("tokenize examples") {
    const auto v = build_vocab({"a b"}, 10);
    const auto s = tokenize("a b", v, 16);
    CHECK(s.ids == std::vector<int>{encoder::kBos, v.id("a"), v.id("b"), encoder::kEos});
    CHECK(s.span_begin == 1);
    CHECK(s.span_end == 4);

    const auto e = tokenize("", v, 16);
    CHECK(e.ids == std::vector<int>{encoder::kBos, encoder::kEos});
    CHECK(e.span_begin == 1);
    CHECK(e.span_end == 2);

    const auto t = tokenize("a b a b a b a b a b", v, 6);
    CHECK(t.ids.size() == 6);
    CHECK(t.ids.back() == encoder::kEos);
    CHECK(t.ids.front() == encoder::kBos);

    CHECK(tokenize("A  B\tA", v, 16).ids == tokenize("a b a", v, 16).ids);
  }

  TEST_CASE("detokenize inverts tokenize on in-vocabulary text") {
    const std::string text = "the quick brown fox jumps over the lazy dog";
    const auto v = build_vocab({text}, 100);
    const auto s = tokenize(text, v, 64);
    CHECK(detokenize(s.ids, v) == text);
    CHECK(tokenize(detokenize(s.ids, v), v, 64).ids == s.ids);
  }

  TEST_CASE("loaders: hand examples") {
    const auto dir = csplade::testing::scratch_dir("corpus_load");
    write_file(dir / "c.tsv", "d1\thello world\n");
    const auto c = load_corpus((dir / "c.tsv").string());
    REQUIRE(c.size() == 1);
    CHECK(c.id(0) == "d1");
    CHECK(c.text(0) == "hello world");

    write_file(dir / "q.txt", "q1 0 d1 1\n");
    const auto qr = load_qrels((dir / "q.txt").string());
    CHECK(qr.at("q1").at("d1") == 1);
  }

  TEST_CASE("loaders: malformed lines report the line number") {
    const auto dir = csplade::testing::scratch_dir("corpus_bad");
    write_file(dir / "c.tsv", "d1\tok\nno tab here\n");
    try {
      load_corpus((dir / "c.tsv").string());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    write_file(dir / "t.jsonl",
               "{\"query_id\":\"q1\",\"positive_ids\":[\"d1\"],\"negative_ids\":[]}\n"
               "{\"query_id\":\"q2\",\"positive_ids\":[],\"negative_ids\":[\"d1\"]}\n");
    try {
      load_triples((dir / "t.jsonl").string());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    write_file(dir / "q.txt", "q1 0 d1 1\nq1 0 d2\n");
    CHECK_THROWS_AS(load_qrels((dir / "q.txt").string()), ParseError);
    write_file(dir / "j.jsonl", "{not json\n");
    CHECK_THROWS_AS(load_triples((dir / "j.jsonl").string()), ParseError);
  }

  TEST_CASE("files round trip") {
    const auto dir = csplade::testing::scratch_dir("corpus_roundtrip");
    const auto d = synth_generate(small_spec(3));
    write_tsv((dir / "c.tsv").string(), d.corpus);
    write_tsv((dir / "q.tsv").string(), d.queries);
    trec::write_qrels((dir / "qrels.txt").string(), d.qrels);
    write_triples((dir / "t.jsonl").string(), d.triples);
    CHECK(load_corpus((dir / "c.tsv").string()) == d.corpus);
    CHECK(load_queries((dir / "q.tsv").string()) == d.queries);
    CHECK(load_qrels((dir / "qrels.txt").string()) == d.qrels);
    CHECK(load_triples((dir / "t.jsonl").string()) == d.triples);
  }

  TEST_CASE("synth: deterministic per seed") {
    const auto dir = csplade::testing::scratch_dir("corpus_synth_det");
    for (int run = 0; run < 2; ++run) {
      const auto d = synth_generate(small_spec(5));
      write_tsv((dir / ("c" + std::to_string(run))).string(), d.corpus);
      write_triples((dir / ("t" + std::to_string(run))).string(), d.triples);
    }
    CHECK(slurp(dir / "c0") == slurp(dir / "c1"));
    CHECK(slurp(dir / "t0") == slurp(dir / "t1"));
    CHECK(!(synth_generate(small_spec(5)).corpus == synth_generate(small_spec(6)).corpus));
  }

  TEST_CASE("synth: positives never share a synonym surface form with their query") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto spec = small_spec(seed);
      spec.query_filler = seed % 2 == 1;
      const auto d = synth_generate(spec);
      for (const auto& t : d.triples) {
        const auto q = split_tokens(d.queries.text_of(t.query_id));
        for (const auto& pid : t.positive_ids) {
          const auto doc = split_tokens(d.corpus.text_of(pid));
          const std::set<std::string> dset(doc.begin(), doc.end());
          for (const auto& w : q) {
            if (w[0] != 'w') continue;  // filler words may overlap
            CHECK(dset.count(w) == 0);
            // ...but the other form of the same concept is present.
            std::string other = w;
            other.back() = other.back() == 'a' ? 'b' : 'a';
            CHECK(dset.count(other) == 1);
          }
        }
      }
    }
  }

  TEST_CASE("synth: qrels are consistent with the triples") {
    const auto d = synth_generate(SynthSpec{});
    CHECK(d.corpus.size() == 1000);
    CHECK(d.qrels.size() >= 100);
    for (const auto& [qid, docs] : d.qrels) {
      for (const auto& [did, rel] : docs) {
        if (rel <= 0) continue;
        bool found = false;
        for (const auto& t : d.triples)
          if (t.query_id == qid)
            for (const auto& p : t.positive_ids) found = found || p == did;
        CHECK(found);
      }
    }
    for (const auto& t : d.triples) {
      CHECK(!t.positive_ids.empty());
      CHECK(t.negative_ids.size() == SynthSpec{}.hard_negatives);
      for (const auto& n : t.negative_ids) CHECK(d.corpus.find(n).has_value());
    }
  }

  TEST_CASE("synth: infeasible specs are rejected") {
    SynthSpec s;
    s.base_vocab_size = 150;
    s.synonym_pairs = 100;
    CHECK_THROWS_AS(s.validate(), SpecError);
    s = SynthSpec{};
    s.n_docs = 50;
    CHECK_THROWS_AS(synth_generate(s), SpecError);
    s = SynthSpec{};
    s.phrase_rate = 1.5;
    CHECK_THROWS_AS(s.validate(), SpecError);
  }

  TEST_CASE("synth: phrases pair both forms in background text only") {
    auto spec = small_spec(9);
    spec.phrase_rate = 1.0;
    const auto d = synth_generate(spec);
    std::set<std::string> positives;
    for (const auto& t : d.triples) positives.insert(t.positive_ids.begin(), t.positive_ids.end());
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < d.corpus.size(); ++i) {
      if (positives.count(d.corpus.id(i))) continue;
      const auto toks = split_tokens(d.corpus.text(i));
      for (std::size_t j = 0; j + 1 < toks.size(); ++j)
        if (toks[j][0] == 'w' && toks[j + 1][0] == 'w' && toks[j].substr(0, 4) == toks[j + 1].substr(0, 4)) ++pairs;
    }
    CHECK(pairs > 0);
  }
}
