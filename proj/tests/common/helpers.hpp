// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "csplade/autodiff.hpp"

namespace csplade::testing {

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(CSPLADE_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

template <typename T>
ad::Tensor<T> random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> d(ad::numel(shape));
  for (auto& x : d) x = static_cast<T>(u(rng));
  return ad::Tensor<T>(std::move(shape), std::move(d));
}

// Keeps every entry at least `margin` away from zero.
inline void push_off_zero(ad::Tensor<double>& t, double margin = 1e-2) {
  for (auto& x : t.data) {
    if (x >= 0 && x < margin) x += margin;
    if (x < 0 && x > -margin) x -= margin;
  }
}

}  // namespace csplade::testing
