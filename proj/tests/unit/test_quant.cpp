// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "csplade/quant.hpp"
#include "csplade/trainer.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace csplade;
using namespace csplade::quant;

namespace {

encoder::EncoderConfig small_config(std::size_t layers = 1) {
  encoder::EncoderConfig c;
  c.vocab_size = 64;
  c.d_model = 32;
  c.n_layers = layers;
  c.n_heads = 2;
  c.d_ff = 64;
  c.max_seq_len = 32;
  c.mask_mode = encoder::MaskMode::Bidirectional;
  c.seed = 5;
  return c;
}

std::vector<encoder::TokenSequence> random_queries(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(4, static_cast<int>(vocab) - 1);
  std::vector<encoder::TokenSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    encoder::TokenSequence s;
    s.ids.push_back(encoder::kBos);
    for (std::size_t j = 0; j < 3 + rng() % 6; ++j) s.ids.push_back(tok(rng));
    s.ids.push_back(encoder::kEos);
    s.valid_len = s.ids.size();
    s.span_begin = 1;
    s.span_end = s.ids.size();
    out.push_back(s);
  }
  return out;
}

std::vector<std::uint32_t> top_terms(const splade::SparseRep& r, std::size_t k) {
  auto e = r.entries;
  std::sort(e.begin(), e.end(), [](const auto& a, const auto& b) {
    return a.weight != b.weight ? a.weight > b.weight : a.term < b.term;
  });
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < std::min(k, e.size()); ++i) out.push_back(e[i].term);
  return out;
}

}  // namespace

TEST_SUITE("quant") {
  TEST_CASE("rounding error is at most half a step") {
    std::mt19937_64 rng(1);
    for (auto cfg : {QuantConfig::int8_per_channel(), QuantConfig::int4_group(16), QuantConfig{8, Granularity::PerTensor}}) {
      const auto w = csplade::testing::random_tensor<float>({8, 32}, rng, -2.0f, 2.0f);
      const auto qt = quantize_tensor(w, cfg);
      const auto back = dequantize_tensor(qt);
      for (std::size_t i = 0; i < w.numel(); ++i) {
        const float s = qt.scales[i / qt.group];
        CHECK(std::fabs(back.data[i] - w.data[i]) <= s * 0.5f * (1.0f + 1e-5f) + 1e-7f);
      }
    }
  }

  TEST_CASE("representable weights survive exactly") {
    ad::Tensor<float> w({2, 4}, {-127, 0, 5, 127, 2, -4, 6, 127});
    const auto qt = quantize_tensor(w, QuantConfig::int8_per_channel());
    CHECK(qt.scales[0] == 1.0f);
    CHECK(dequantize_tensor(qt).data == w.data);
  }

  TEST_CASE("an all-zero group gets scale 1 and decodes to zeros") {
    auto w = ad::Tensor<float>::zeros({2, 4});
    w.at(1, 2) = 3.0f;
    const auto qt = quantize_tensor(w, QuantConfig::int8_per_channel());
    CHECK(qt.scales[0] == 1.0f);
    const auto back = dequantize_tensor(qt);
    for (std::size_t j = 0; j < 4; ++j) CHECK(back.at(0, j) == 0.0f);
    CHECK(back.at(1, 2) == 3.0f);
  }

  TEST_CASE("int4 packing round trips the signed nibble") {
    ad::Tensor<float> w({1, 16}, {-7, -6, -5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5, 6, 7, 7});
    const auto qt = quantize_tensor(w, QuantConfig::int4_group(16));
    CHECK(qt.data.size() == 8);
    CHECK(dequantize_tensor(qt).data == w.data);
  }

  TEST_CASE("int4 error is no smaller than int8 error") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      const auto w = csplade::testing::random_tensor<float>({16, 32}, rng, -1.0f, 1.0f);
      auto err = [&](const QuantConfig& c) {
        const auto b = dequantize_tensor(quantize_tensor(w, c));
        double e = 0;
        for (std::size_t i = 0; i < w.numel(); ++i) e += std::pow(b.data[i] - w.data[i], 2);
        return e;
      };
      CHECK(err(QuantConfig::int4_group(32)) >= err(QuantConfig::int8_per_channel()));
    }
  }

  TEST_CASE("bad configs") {
    CHECK_THROWS(QuantConfig{3}.validate());
    CHECK_THROWS(QuantConfig{8, Granularity::Group, 0}.validate());
    CHECK_THROWS(quantize_tensor(ad::Tensor<float>::zeros({3, 5}), QuantConfig::int4_group(4)));
    CHECK(parse_granularity(to_string(Granularity::Group)) == Granularity::Group);
    CHECK(QuantConfig::int8_per_channel().name() == "int8-per-channel");
  }

  TEST_CASE("quantized model: shapes, size, and retrieval agreement") {
    auto m = encoder::init_model(small_config());
    std::mt19937_64 rng(3);
    for (auto& t : m.params)
      if (t.shape.size() == 2)
        for (auto& v : t.data) v = std::normal_distribution<float>(0.0f, 0.3f)(rng);
    const auto qm8 = quantize_weights(m, QuantConfig::int8_per_channel());
    const auto qm4 = quantize_weights(m, QuantConfig::int4_group());
    CHECK(qm8.weight_bytes() < weight_bytes(m));
    CHECK(qm4.weight_bytes() < qm8.weight_bytes());

    const auto qs = random_queries(40, 64, 4);
    std::size_t overlap = 0, total = 0;
    for (const auto& q : qs) {
      const auto l = forward_quantized(qm8, q);
      CHECK(l.shape == ad::Shape{q.size(), 64});
      const auto a = top_terms(train::encode(m, q), 10);
      const auto b = top_terms(train::encode(dequantize(qm8), q), 10);
      const std::set<std::uint32_t> sa(a.begin(), a.end());
      for (auto t : b) overlap += sa.count(t);
      total += a.size();
    }
    REQUIRE(total > 0);
    CHECK(static_cast<double>(overlap) / static_cast<double>(total) >= 0.9);
  }

  TEST_CASE("bench: sane numbers, deeper is slower, too few iterations rejected") {
    const auto qs = random_queries(8, 64, 5);
    BenchConfig cfg;
    cfg.warmup_iters = 2;
    cfg.measure_iters = 30;
    const auto shallow = bench_encode(encoder::init_model(small_config(1)), qs, cfg);
    const auto deep = bench_encode(encoder::init_model(small_config(4)), qs, cfg);
    CHECK(std::isfinite(shallow.qps));
    CHECK(shallow.qps > 0.0);
    CHECK(shallow.p50_ms <= shallow.p95_ms);
    CHECK(deep.p50_ms > shallow.p50_ms);
    CHECK(shallow.measure_iters == 30);
    cfg.measure_iters = 29;
    CHECK_THROWS(bench_encode(encoder::init_model(small_config(1)), qs, cfg));

    const auto dir = csplade::testing::scratch_dir("quant_csv");
    const std::string path = (dir / "lat.csv").string();
    write_latency_csv(path, {shallow, deep});
    std::ifstream is(path);
    std::string header;
    std::getline(is, header);
    CHECK(header == "config,bits,granularity,qps,p50_ms,p95_ms,mem_bytes");
    std::size_t rows = 0;
    for (std::string line; std::getline(is, line);) ++rows;
    CHECK(rows == 2);
  }
}
