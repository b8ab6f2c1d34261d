// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "csplade/index.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace csplade;
using namespace csplade::index;

namespace {

using Reps = std::vector<std::pair<std::string, SparseRep>>;

SparseRep rep(std::uint32_t vocab, std::vector<splade::SparseEntry> e) {
  SparseRep r;
  r.vocab_size = vocab;
  r.entries = std::move(e);
  return r;
}

SparseRep random_rep(std::uint32_t vocab, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(density);
  std::uniform_real_distribution<float> w(0.01f, 3.0f);
  SparseRep r;
  r.vocab_size = vocab;
  for (std::uint32_t t = 0; t < vocab; ++t)
    if (keep(rng)) r.entries.push_back({t, w(rng)});
  return r;
}

Reps random_reps(std::size_t n, std::uint32_t vocab, std::mt19937_64& rng) {
  Reps out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back("doc" + std::to_string(i), random_rep(vocab, 0.05, rng));
  return out;
}

// Brute-force top-k over dense dot products in float, same accumulation order
// as term-at-a-time scoring (ascending term id).
std::vector<std::pair<std::uint32_t, float>> oracle_topk(const std::vector<SparseRep>& docs, const SparseRep& q,
                                                         std::size_t k) {
  std::vector<std::pair<std::uint32_t, float>> scored;
  for (std::uint32_t d = 0; d < docs.size(); ++d) {
    const auto dd = docs[d].to_dense();
    float s = 0.0f;
    for (const auto& e : q.entries) s += e.weight * dd[e.term];
    if (s > 0.0f) scored.emplace_back(d, s);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

}  // namespace

TEST_SUITE("index") {
  TEST_CASE("varint delta codec round trips") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<std::uint32_t> v;
      std::uint32_t cur = 0;
      const std::size_t n = rng() % 50;
      std::uniform_int_distribution<std::uint32_t> gap(1, trial % 3 == 0 ? 1u << 24 : 300);
      for (std::size_t i = 0; i < n; ++i) {
        cur = i == 0 ? gap(rng) - 1 : cur + gap(rng);
        v.push_back(cur);
      }
      std::vector<std::uint8_t> bytes;
      encode_deltas(v, bytes);
      std::size_t used = 0;
      CHECK(decode_deltas(bytes, v.size(), &used) == v);
      CHECK(used == bytes.size());
    }
    const std::vector<std::uint32_t> edge{0, 127, 128, 16383, 16384, 0xFFFFFFFFu};
    std::vector<std::uint8_t> bytes;
    encode_deltas(edge, bytes);
    CHECK(decode_deltas(bytes, edge.size()) == edge);
    CHECK(varint_size(127) == 1);
    CHECK(varint_size(128) == 2);
    CHECK(varint_size(0xFFFFFFFFu) == 5);
    const std::vector<std::uint32_t> unsorted{3, 3};
    CHECK_THROWS(encode_deltas(unsorted, bytes));
    const std::vector<std::uint8_t> cut{0x80};
    CHECK_THROWS_AS(decode_deltas(cut, 1), FormatError);
  }

  TEST_CASE("build: hand examples") {
    const Reps none;
    const auto empty = build_index(none, 10);
    CHECK(empty.doc_count() == 0);
    CHECK(empty.postings().empty());

    const Reps one{{"d", rep(10, {{7, 2.0f}})}};
    const auto idx = build_index(one, 10, 8);
    REQUIRE(idx.postings().size() == 1);
    CHECK(idx.postings()[0].term == 7);
    CHECK(idx.postings()[0].impacts8 == std::vector<std::uint8_t>{255});
    CHECK(idx.scale() == 2.0f);

    std::mt19937_64 rng(2);
    const auto reps = random_reps(30, 50, rng);
    const auto raw = build_index(reps, 50, 0);
    const auto back = dequantized_docs(raw);
    for (std::size_t i = 0; i < reps.size(); ++i) CHECK(back[i] == reps[i].second);
  }

  TEST_CASE("build: duplicate ids and bad widths are rejected") {
    const Reps dup{{"d", rep(10, {{1, 1.0f}})}, {"d", rep(10, {{2, 1.0f}})}};
    CHECK_THROWS_AS(build_index(dup, 10), BuildError);
    const Reps ok{{"d", rep(10, {{1, 1.0f}})}};
    CHECK_THROWS_AS(build_index(ok, 10, 4), BuildError);
    CHECK_THROWS_AS(build_index(ok, 11), BuildError);
  }

  TEST_CASE("quantization is monotone with a floor of one") {
    std::mt19937_64 rng(3);
    const auto reps = random_reps(40, 60, rng);
    for (std::uint8_t bits : {8, 16}) {
      const auto idx = build_index(reps, 60, bits);
      std::uint32_t prev = 0;
      for (float w = 0.0001f; w <= idx.scale(); w *= 1.01f) {
        const auto q = idx.quantize(w);
        CHECK(q >= prev);
        CHECK(q >= 1);
        prev = q;
      }
      CHECK(idx.quantize(idx.scale()) == (1u << bits) - 1);
      CHECK(idx.quantize(0.5f) == idx.quantize(0.5f));
    }
  }

  TEST_CASE("search: hand-built reps") {
    const Reps reps{{"a", rep(5, {{0, 1.0f}, {1, 2.0f}})}, {"b", rep(5, {{1, 1.0f}, {2, 4.0f}})}, {"c", rep(5, {{3, 1.0f}})}};
    const auto idx = build_index(reps, 5, 0);
    const auto q = rep(5, {{1, 1.0f}, {2, 0.5f}});
    // a: 2, b: 1 + 2 = 3, c: 0
    const auto hits = search(idx, q, 10);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].doc_id == "b");
    CHECK(hits[0].score == 3.0f);
    CHECK(hits[1].doc_id == "a");
    CHECK(hits[1].score == 2.0f);
    CHECK(search(idx, rep(5, {{4, 1.0f}}), 10).empty());
    CHECK(search(idx, rep(5, {}), 10).empty());
    CHECK(search(idx, q, 1).size() == 1);
  }

  TEST_CASE("search: ties go to the lower ordinal") {
    const Reps reps{{"z", rep(3, {{0, 1.0f}})}, {"y", rep(3, {{0, 1.0f}})}, {"x", rep(3, {{0, 1.0f}})}};
    const auto hits = search(build_index(reps, 3, 0), rep(3, {{0, 1.0f}}), 2);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].doc_id == "z");
    CHECK(hits[1].doc_id == "y");
  }

  TEST_CASE("search matches the brute-force oracle") {
    std::mt19937_64 rng(4);
    for (std::uint8_t bits : {0, 8, 16}) {
      const auto reps = random_reps(500, 200, rng);
      const auto idx = build_index(reps, 200, bits);
      const auto docs = dequantized_docs(idx);
      for (int qi = 0; qi < 30; ++qi) {
        const auto q = random_rep(200, 0.05, rng);
        const auto hits = search(idx, q, 50);
        const auto want = oracle_topk(docs, q, 50);
        REQUIRE(hits.size() == want.size());
        for (std::size_t i = 0; i < hits.size(); ++i) {
          CHECK(hits[i].ordinal == want[i].first);
          CHECK(std::fabs(hits[i].score - want[i].second) <= 1e-5f * std::max(1.0f, want[i].second));
          CHECK(hits[i].score >= 0.0f);
        }
      }
    }
  }

  TEST_CASE("serialization round trip is exact") {
    const auto dir = csplade::testing::scratch_dir("index_rt");
    std::mt19937_64 rng(5);
    const auto reps = random_reps(200, 100, rng);
    for (std::uint8_t bits : {0, 8, 16}) {
      const auto idx = build_index(reps, 100, bits);
      const std::string path = (dir / ("i" + std::to_string(bits))).string();
      serialize(idx, path);
      CHECK(std::filesystem::file_size(path) == index_size_bytes(idx));
      const auto back = deserialize(path);
      CHECK(serialize_bytes(back) == serialize_bytes(idx));
      for (int qi = 0; qi < 10; ++qi) {
        const auto q = random_rep(100, 0.1, rng);
        const auto a = search(idx, q, 20), b = search(back, q, 20);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
          CHECK(a[i].doc_id == b[i].doc_id);
          CHECK(a[i].score == b[i].score);
        }
      }
    }
    CHECK(serialize_bytes(build_index(reps, 100)) == serialize_bytes(build_index(reps, 100)));
  }

  TEST_CASE("empty index file is the bare header") {
    const auto dir = csplade::testing::scratch_dir("index_empty");
    const Reps none;
    const auto idx = build_index(none, 10);
    CHECK(index_size_bytes(idx) == kMagicSize + kHeaderSize);
    const std::string path = (dir / "e").string();
    serialize(idx, path);
    CHECK(std::filesystem::file_size(path) == kMagicSize + kHeaderSize);
    const auto back = deserialize(path);
    CHECK(back.doc_count() == 0);
    CHECK(back.postings().empty());
    CHECK(back.vocab_size() == 10);
  }

  TEST_CASE("corrupt files are format errors with offsets") {
    std::mt19937_64 rng(6);
    const auto reps = random_reps(20, 30, rng);
    const auto bytes = serialize_bytes(build_index(reps, 30));
    auto bad = bytes;
    bad[0] ^= 0xFF;
    CHECK_THROWS_AS(deserialize_bytes(bad), FormatError);
    for (std::size_t cut : {3ul, kMagicSize + 5, kMagicSize + kHeaderSize + 2, bytes.size() - 1}) {
      const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
      try {
        deserialize_bytes(part);
        FAIL("expected FormatError for cut at " << cut);
      } catch (const FormatError& e) {
        CHECK(e.offset() <= cut);
        CHECK(std::string(e.what()).find("at byte") != std::string::npos);
      }
    }
  }

  TEST_CASE("8-bit index is smaller than the raw one") {
    std::mt19937_64 rng(7);
    const auto reps = random_reps(300, 100, rng);
    CHECK(index_size_bytes(build_index(reps, 100, 8)) < index_size_bytes(build_index(reps, 100, 0)));
  }

  TEST_CASE("run export") {
    const std::vector<SearchHit> hits{{"d2", 1, 3.5f}, {"d1", 0, 1.0f}};
    const auto run = to_run("q", hits);
    REQUIRE(run.at("q").size() == 2);
    CHECK(run.at("q")[0].doc_id == "d2");
  }
}
