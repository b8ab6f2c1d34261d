// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csplade/encoder.hpp"
#include "csplade/splade.hpp"

// Weight-only symmetric quantization of the encoder plus an encode-latency
// benchmark. Activations stay fp32.
namespace csplade::quant {

enum class Granularity { PerTensor, PerChannel, Group };

std::string to_string(Granularity g);
Granularity parse_granularity(const std::string& s);

struct QuantConfig {
  int bits = 8;  // 4 or 8
  Granularity granularity = Granularity::PerChannel;
  std::size_t group_size = 32;  // Group only
  bool symmetric = true;

  void validate() const;
  int qmax() const { return (1 << (bits - 1)) - 1; }
  std::string name() const;  // e.g. "int8-per-channel"

  static QuantConfig int8_per_channel() { return {}; }
  static QuantConfig int4_group(std::size_t g = 32) { return {4, Granularity::Group, g, true}; }
};

// One quantized 2-D weight. A "channel" is a row of the stored matrix; groups
// run over the flattened row-major storage.
struct QuantizedTensor {
  ad::Shape shape;
  std::size_t group = 0;           // elements per scale
  std::vector<float> scales;       // one per group
  std::vector<std::uint8_t> data;  // int8 bytes, or two int4 nibbles per byte (low first)
  int bits = 8;

  std::size_t numel() const { return ad::numel(shape); }
  std::int8_t q(std::size_t i) const;
  // Unpacked integer values into `out` (size numel).
  void unpack(std::int8_t* out) const;
  std::size_t bytes() const { return data.size() + scales.size() * sizeof(float); }
};

QuantizedTensor quantize_tensor(const ad::Tensor<float>& w, const QuantConfig& cfg);
ad::Tensor<float> dequantize_tensor(const QuantizedTensor& qt);

struct QuantizedModel {
  encoder::EncoderConfig config;
  QuantConfig qconfig;
  // Parallel to the encoder's parameter list: 2-D weights are quantized,
  // everything else is kept in `fp32` (the other slot is empty).
  std::vector<QuantizedTensor> quantized;
  std::vector<ad::Tensor<float>> fp32;
  std::vector<bool> is_quantized;

  std::size_t weight_bytes() const;
};

QuantizedModel quantize_weights(const encoder::EncoderModel& model, const QuantConfig& cfg);
encoder::EncoderModel dequantize(const QuantizedModel& qm);

// Dequantizes into a scratch float model, then runs the regular forward.
ad::Tensor<float> forward_quantized(const QuantizedModel& qm, const encoder::TokenSequence& seq);

// Bytes held by an fp32 model's parameters.
std::size_t weight_bytes(const encoder::EncoderModel& model);

struct LatencyReport {
  std::string config;
  int bits = 32;
  std::string granularity = "none";
  double qps = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  std::size_t mem_bytes = 0;  // weights plus per-query activation estimate
  std::size_t measure_iters = 0;
};

struct BenchConfig {
  std::size_t batch_size = 1;
  std::size_t warmup_iters = 5;
  std::size_t measure_iters = 50;
};

using EncodeFn = std::function<splade::SparseRep(const encoder::TokenSequence&)>;

// Encode-only timing; query i of the measured loop is queries[i % n].
LatencyReport bench_encode(const EncodeFn& encode, const std::vector<encoder::TokenSequence>& queries,
                           const BenchConfig& cfg, std::string config_name, int bits,
                           std::string granularity, std::size_t weight_bytes,
                           const encoder::EncoderConfig& model_cfg);

LatencyReport bench_encode(const encoder::EncoderModel& model, const std::vector<encoder::TokenSequence>& queries,
                           const BenchConfig& cfg);
LatencyReport bench_encode(const QuantizedModel& qm, const std::vector<encoder::TokenSequence>& queries,
                           const BenchConfig& cfg);

void write_latency_csv(const std::string& path, const std::vector<LatencyReport>& rows);

}  // namespace csplade::quant
