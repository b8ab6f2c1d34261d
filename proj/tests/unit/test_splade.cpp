// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "csplade/splade.hpp"
#include "csplade/trainer.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace csplade;
using namespace csplade::splade;

namespace {

ad::Tensor<float> logits_of(std::size_t len, std::size_t vocab, std::vector<float> data) {
  return ad::Tensor<float>({len, vocab}, std::move(data));
}

SparseRep rep(std::uint32_t vocab, std::vector<SparseEntry> e) {
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

}  // namespace

TEST_SUITE("splade") {
  TEST_CASE("pool: all logits non-positive gives an empty rep") {
    const auto l = logits_of(3, 4, {-1, -2, 0, -0.5f, -3, -1, -1, -9, 0, 0, -4, -2});
    CHECK(splade_pool(l, {0, 3}).empty());
  }

  TEST_CASE("pool: log(1 + max) over the span") {
    // Term 2 has span logits {1, 3}.
    const auto l = logits_of(2, 3, {0, -1, 1, 0, -1, 3});
    const auto r = splade_pool(l, {0, 2});
    REQUIRE(r.nnz() == 1);
    CHECK(r.entries[0].term == 2);
    CHECK(std::fabs(r.entries[0].weight - 1.3862944f) < 1e-6);
  }

  TEST_CASE("pool: a single position is the elementwise transform") {
    std::mt19937_64 rng(1);
    auto l = csplade::testing::random_tensor<float>({1, 9}, rng, -2, 2);
    const auto r = splade_pool(l, {0, 1}).to_dense();
    for (std::size_t j = 0; j < 9; ++j) {
      const float v = l.data[j];
      CHECK(std::fabs(r[j] - (v > 0 ? std::log1p(v) : 0.0f)) < 1e-6);
    }
  }

  TEST_CASE("pool: positions outside the span are ignored") {
    const auto l = logits_of(3, 2, {9, 9, 0.5f, -1, 9, 9});
    const auto r = splade_pool(l, {1, 2});
    REQUIRE(r.nnz() == 1);
    CHECK(r.entries[0].weight == doctest::Approx(std::log1p(0.5)).epsilon(1e-6));
  }

  TEST_CASE("pool: empty span is a contract error") {
    const auto l = logits_of(2, 2, {1, 1, 1, 1});
    CHECK_THROWS_AS(splade_pool(l, {1, 1}), ad::ContractError);
    CHECK_THROWS_AS(splade_pool(l, {0, 3}), ad::ContractError);
  }

  TEST_CASE("pool: weights are positive and tiny values are dropped") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      auto l = csplade::testing::random_tensor<float>({5, 30}, rng, -5, 5);
      const auto r = splade_pool(l, {0, 5});
      CHECK_NOTHROW(r.validate());
      for (const auto& e : r.entries) CHECK(e.weight > kDropThreshold);
    }
    const auto tiny = logits_of(1, 2, {1e-7f, 0.1f});
    CHECK(splade_pool(tiny, {0, 1}).nnz() == 1);
  }

  TEST_CASE("pool: adding a dominated position changes nothing") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      auto l = csplade::testing::random_tensor<float>({4, 12}, rng, -2, 2);
      const auto before = splade_pool(l, {0, 4});
      auto data = l.data;
      for (std::size_t j = 0; j < 12; ++j) {
        float mx = l.at(0, j);
        for (std::size_t i = 1; i < 4; ++i) mx = std::max(mx, l.at(i, j));
        data.push_back(mx - 0.5f * static_cast<float>(trial % 3));
      }
      const ad::Tensor<float> extended({5, 12}, data);
      CHECK(splade_pool(extended, {0, 5}) == before);
    }
  }

  TEST_CASE("pool: both activation modes share the forward pass") {
    std::mt19937_64 rng(4);
    auto l = csplade::testing::random_tensor<float>({3, 20}, rng, -2, 2);
    CHECK(splade_pool(l, {0, 3}, ActivationMode::PlainReLU) == splade_pool(l, {0, 3}, ActivationMode::ReparamReLU));
    ad::Graph<float> g(false);
    auto a = pool(g.constant(l), {0, 3}, ActivationMode::PlainReLU);
    auto b = pool(g.constant(l), {0, 3}, ActivationMode::ReparamReLU);
    CHECK(std::equal(a.value().begin(), a.value().end(), b.value().begin()));
  }

  TEST_CASE("pool: graph and inference paths agree") {
    std::mt19937_64 rng(5);
    auto l = csplade::testing::random_tensor<float>({4, 16}, rng, -2, 2);
    ad::Graph<float> g(false);
    auto v = pool(g.constant(l), {1, 4});
    const auto r = splade_pool(l, {1, 4}).to_dense();
    for (std::size_t j = 0; j < 16; ++j) CHECK(v.value()[j] == doctest::Approx(r[j]).epsilon(1e-6));
  }

  TEST_CASE("dot_score") {
    CHECK(dot_score(rep(10, {{1, 2.0f}}), rep(10, {{2, 2.0f}})) == 0.0f);
    CHECK(dot_score(rep(10, {{5, 2.0f}}), rep(10, {{5, 1.5f}})) == 3.0f);
    CHECK_THROWS_AS(dot_score(rep(10, {}), rep(11, {})), ad::ContractError);
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
      const auto q = random_rep(200, 0.2, rng), d = random_rep(200, 0.3, rng);
      const auto qd = q.to_dense(), dd = d.to_dense();
      double oracle = 0.0;
      for (std::size_t j = 0; j < qd.size(); ++j) oracle += static_cast<double>(qd[j]) * dd[j];
      CHECK(std::fabs(dot_score(q, d) - oracle) <= 1e-6 * std::max(1.0, oracle));
    }
  }

  TEST_CASE("rank_loss examples") {
    const double n1[] = {3.0};
    CHECK(rank_loss_from_scores(3.0, n1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const double n0[] = {0.0};
    CHECK(rank_loss_from_scores(10.0, n0) == doctest::Approx(4.54e-5).epsilon(1e-3));
    CHECK(std::fabs(rank_loss_from_scores(10.0, n0) - std::log1p(std::exp(-10.0))) < 1e-12);
    for (std::size_t n : {1u, 5u, 31u}) {
      const std::vector<double> negs(n, 2.0);
      CHECK(rank_loss_from_scores(2.0, negs) == doctest::Approx(std::log(n + 1.0)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(rank_loss_from_scores(1.0, {}), ad::ContractError);
    const auto q = rep(8, {{1, 1.0f}});
    CHECK_THROWS_AS(rank_loss(q, q, {}), ad::ContractError);
    const SparseRep negs[] = {rep(8, {{2, 1.0f}})};
    CHECK(rank_loss(q, rep(8, {{1, 10.0f}}), negs) == doctest::Approx(4.54e-5).epsilon(1e-3));
  }

  TEST_CASE("rank_loss is shift invariant") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> negs(7);
      for (auto& x : negs) x = u(rng);
      const double pos = u(rng), c = u(rng) * 20;
      auto shifted = negs;
      for (auto& x : shifted) x += c;
      CHECK(std::fabs(rank_loss_from_scores(pos, negs) - rank_loss_from_scores(pos + c, shifted)) < 1e-5);
    }
  }

  TEST_CASE("flops_reg examples") {
    const SparseRep empty[] = {rep(4, {}), rep(4, {})};
    CHECK(flops_reg(empty) == 0.0);
    const SparseRep one[] = {rep(4, {{2, 1.5f}})};
    CHECK(flops_reg(one) == doctest::Approx(2.25));
    const SparseRep two[] = {rep(4, {{0, 1.0f}}), rep(4, {{1, 1.0f}})};
    CHECK(flops_reg(two) == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("flops_reg: permutation invariant, quadratic in scale, graph path agrees") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<SparseRep> batch;
      for (int i = 0; i < 6; ++i) batch.push_back(random_rep(50, 0.3, rng));
      const double base = flops_reg(batch);
      auto perm = batch;
      std::shuffle(perm.begin(), perm.end(), rng);
      CHECK(flops_reg(perm) == doctest::Approx(base).epsilon(1e-12));
      auto scaled = batch;
      for (auto& r : scaled)
        for (auto& e : r.entries) e.weight *= 2.0f;
      CHECK(flops_reg(scaled) == doctest::Approx(4.0 * base).epsilon(1e-6));

      ad::Graph<double> g(false);
      auto dense = ad::Tensor<double>::zeros({6, 50});
      for (std::size_t i = 0; i < 6; ++i)
        for (const auto& e : batch[i].entries) dense.at(i, e.term) = e.weight;
      CHECK(flops_reg(g.constant(dense)).item() == doctest::Approx(base).epsilon(1e-9));
    }
  }

  TEST_CASE("adaptation_loss examples") {
    const std::vector<int> ids{1, 5, 6, 7, 2};
    const std::size_t vocab = 12;
    const ad::Tensor<float> zeros({5, vocab}, std::vector<float>(5 * vocab, 0.0f));
    const auto u = adaptation_loss(zeros, ids, 1.0);
    CHECK(u.clm == doctest::Approx(std::log(12.0)).epsilon(1e-9));
    CHECK(u.relu_clm == doctest::Approx(std::log(12.0)).epsilon(1e-9));

    std::mt19937_64 rng(9);
    const auto l = csplade::testing::random_tensor<float>({5, vocab}, rng, -3, 3);
    const auto zero_lambda = adaptation_loss(l, ids, 0.0);
    CHECK(zero_lambda.total == zero_lambda.clm);

    // Recompute both terms by hand.
    double clm = 0.0, rclm = 0.0;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const int t = ids[i + 1];
      auto ce = [&](auto f) {
        double mx = -1e300;
        for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, f(l.at(i, j)));
        double z = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) z += std::exp(f(l.at(i, j)) - mx);
        return -(f(l.at(i, t)) - mx - std::log(z));
      };
      clm += ce([](double x) { return x; });
      rclm += ce([](double x) { return std::log1p(std::max(x, 0.0)); });
    }
    clm /= 4;
    rclm /= 4;
    const auto full = adaptation_loss(l, ids, 1.0);
    CHECK(full.clm == doctest::Approx(clm).epsilon(1e-6));
    CHECK(full.relu_clm == doctest::Approx(rclm).epsilon(1e-6));
    CHECK(full.total == doctest::Approx(clm + rclm).epsilon(1e-6));

    const ad::Tensor<float> one({1, vocab}, std::vector<float>(vocab, 0.0f));
    const std::vector<int> single{1};
    CHECK_THROWS_AS(adaptation_loss(one, single, 1.0), ad::ContractError);
  }

  TEST_CASE("adaptation_loss ignores padding targets") {
    const std::vector<int> ids{1, 5, 2, 0, 0};
    CHECK(adaptation_targets(ids, 3) == 2);
    std::mt19937_64 rng(10);
    auto l = csplade::testing::random_tensor<double>({5, 8}, rng);
    ad::Graph<double> g(false);
    auto padded = adaptation_loss<double>(g.constant(l), ids, 3, 1.0);
    ad::Tensor<double> head({3, 8}, std::vector<double>(l.data.begin(), l.data.begin() + 24));
    const std::vector<int> short_ids{1, 5, 2};
    auto trimmed = adaptation_loss<double>(g.constant(head), short_ids, 3, 1.0);
    CHECK(padded.total.item() == doctest::Approx(trimmed.total.item()).epsilon(1e-12));
  }

  TEST_CASE("dead logits give empty reps and exactly zero gradients") {
    encoder::EncoderConfig c;
    c.vocab_size = 30;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 32;
    c.max_seq_len = 16;
    c.seed = 3;
    auto m = encoder::init_model(c);
    encoder::apply_negative_bias(m, 5.0f);
    const auto md = encoder::cast_weights<double>(m);

    auto seq = [](std::vector<int> content) {
      encoder::TokenSequence s;
      s.ids.push_back(encoder::kBos);
      s.ids.insert(s.ids.end(), content.begin(), content.end());
      s.ids.push_back(encoder::kEos);
      s.valid_len = s.ids.size();
      s.span_begin = 1;
      s.span_end = s.ids.size();
      return s;
    };
    const std::vector<encoder::TokenSequence> qs{seq({5, 6}), seq({7, 8, 9})};
    const std::vector<std::vector<encoder::TokenSequence>> ds{{seq({10, 11}), seq({12})}, {seq({13}), seq({14, 15})}};

    ad::Graph<double> g;
    const auto p = encoder::bind(g, md);
    const auto bg = train::contrastive_graph<double>(p, qs, ds, 0.003, 0.003, ActivationMode::PlainReLU);
    for (double v : bg.q_reps.value()) CHECK(v == 0.0);
    for (double v : bg.d_reps.value()) CHECK(v == 0.0);
    ad::Gradients<double> grads;
    for (const auto& t : md.params) grads.push_back(ad::Tensor<double>::zeros(t.shape));
    g.backward(bg.total, grads);
    for (const auto& gt : grads)
      for (double v : gt.data) CHECK(v == 0.0);
    CHECK(bg.rank.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }

  TEST_CASE("rep text format round trip") {
    std::mt19937_64 rng(11);
    std::vector<std::pair<std::string, SparseRep>> reps;
    for (int i = 0; i < 10; ++i) reps.emplace_back("d" + std::to_string(i), random_rep(100, 0.1, rng));
    reps.emplace_back("empty", rep(100, {}));
    std::ostringstream os;
    for (const auto& [id, r] : reps) write_rep_line(os, id, r);
    std::istringstream is(os.str());
    const auto back = read_reps(is, 100);
    REQUIRE(back.size() == reps.size());
    for (std::size_t i = 0; i < reps.size(); ++i) {
      CHECK(back[i].first == reps[i].first);
      REQUIRE(back[i].second.nnz() == reps[i].second.nnz());
      for (std::size_t j = 0; j < back[i].second.nnz(); ++j) {
        CHECK(back[i].second.entries[j].term == reps[i].second.entries[j].term);
        CHECK(std::fabs(back[i].second.entries[j].weight - reps[i].second.entries[j].weight) <= 5e-7);
      }
    }
    std::ostringstream one;
    write_rep_line(one, "x", rep(10, {{5, 2.0f}, {7, 0.25f}}));
    CHECK(one.str() == "x\t5:2.000000 7:0.250000\n");
    std::istringstream bad("x\t5:1.0 3:1.0\n");
    CHECK_THROWS(read_reps(bad, 10));
  }
}
