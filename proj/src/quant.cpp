// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include "csplade/quant.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "csplade/kernels.hpp"

namespace csplade::quant {

std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::PerTensor:
      return "per-tensor";
    case Granularity::PerChannel:
      return "per-channel";
    default:
      return "group";
  }
}

Granularity parse_granularity(const std::string& s) {
  if (s == "per-tensor") return Granularity::PerTensor;
  if (s == "per-channel") return Granularity::PerChannel;
  if (s == "group") return Granularity::Group;
  throw std::invalid_argument("unknown granularity '" + s + "'");
}

void QuantConfig::validate() const {
  if (bits != 4 && bits != 8) throw std::invalid_argument("quant: bits must be 4 or 8");
  if (!symmetric) throw std::invalid_argument("quant: only symmetric quantization is supported");
  if (granularity == Granularity::Group && group_size == 0) throw std::invalid_argument("quant: group_size must be > 0");
}

std::string QuantConfig::name() const {
  std::string n = "int" + std::to_string(bits) + "-" + to_string(granularity);
  if (granularity == Granularity::Group) n += std::to_string(group_size);
  return n;
}

std::int8_t QuantizedTensor::q(std::size_t i) const {
  if (bits == 8) return static_cast<std::int8_t>(data[i]);
  const std::uint8_t byte = data[i / 2];
  const int nib = (i % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
  return static_cast<std::int8_t>(nib >= 8 ? nib - 16 : nib);
}

void QuantizedTensor::unpack(std::int8_t* out) const {
  const std::size_t n = numel();
  if (bits == 8) {
    std::copy(data.begin(), data.end(), reinterpret_cast<std::uint8_t*>(out));
    return;
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = q(i);
}

QuantizedTensor quantize_tensor(const ad::Tensor<float>& w, const QuantConfig& cfg) {
  cfg.validate();
  if (w.shape.size() != 2) throw ad::DimensionError("quantize_tensor: expected a 2-D weight, got " + ad::shape_str(w.shape));
  QuantizedTensor qt;
  qt.shape = w.shape;
  qt.bits = cfg.bits;
  const std::size_t n = w.numel();
  switch (cfg.granularity) {
    case Granularity::PerTensor:
      qt.group = n;
      break;
    case Granularity::PerChannel:
      qt.group = w.shape[1];
      break;
    case Granularity::Group:
      if (n % cfg.group_size != 0) {
        throw std::invalid_argument("quant: group_size " + std::to_string(cfg.group_size) + " does not divide " +
                                    std::to_string(n) + " elements of " + ad::shape_str(w.shape));
      }
      qt.group = cfg.group_size;
      break;
  }
  const int qmax = cfg.qmax();
  const std::size_t groups = n / qt.group;
  std::vector<std::int8_t> vals(n);
  qt.scales.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const float* src = w.data.data() + g * qt.group;
    float maxabs = 0.0f;
    for (std::size_t i = 0; i < qt.group; ++i) {
      if (!std::isfinite(src[i])) throw ad::NumericError("quantize_tensor: non-finite weight");
      maxabs = std::max(maxabs, std::fabs(src[i]));
    }
    const float s = maxabs > 0.0f ? maxabs / static_cast<float>(qmax) : 1.0f;
    qt.scales[g] = s;
    for (std::size_t i = 0; i < qt.group; ++i) {
      const float r = std::nearbyint(src[i] / s);
      vals[g * qt.group + i] = static_cast<std::int8_t>(std::clamp(r, -static_cast<float>(qmax), static_cast<float>(qmax)));
    }
  }
  if (cfg.bits == 8) {
    qt.data.assign(reinterpret_cast<const std::uint8_t*>(vals.data()),
                   reinterpret_cast<const std::uint8_t*>(vals.data()) + n);
  } else {
    qt.data.assign((n + 1) / 2, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto nib = static_cast<std::uint8_t>(vals[i] & 0x0F);
      qt.data[i / 2] |= (i % 2 == 0) ? nib : static_cast<std::uint8_t>(nib << 4);
    }
  }
  return qt;
}

ad::Tensor<float> dequantize_tensor(const QuantizedTensor& qt) {
  const std::size_t n = qt.numel();
  std::vector<std::int8_t> vals(n);
  qt.unpack(vals.data());
  ad::Tensor<float> out = ad::Tensor<float>::zeros(qt.shape);
  const auto& k = kernels::active();
  for (std::size_t g = 0; g < qt.scales.size(); ++g)
    k.dequant_i8(vals.data() + g * qt.group, qt.scales[g], out.data.data() + g * qt.group, qt.group);
  return out;
}

std::size_t QuantizedModel::weight_bytes() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < is_quantized.size(); ++i)
    n += is_quantized[i] ? quantized[i].bytes() : fp32[i].numel() * sizeof(float);
  return n;
}

QuantizedModel quantize_weights(const encoder::EncoderModel& model, const QuantConfig& cfg) {
  cfg.validate();
  if (!encoder::all_finite(model)) throw ad::NumericError("quantize_weights: model has non-finite weights");
  QuantizedModel qm;
  qm.config = model.config;
  qm.qconfig = cfg;
  const std::size_t n = model.params.size();
  qm.quantized.resize(n);
  qm.fp32.resize(n);
  qm.is_quantized.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = model.params[i];
    if (t.shape.size() == 2) {
      qm.quantized[i] = quantize_tensor(t, cfg);
      qm.is_quantized[i] = true;
    } else {
      qm.fp32[i] = t;
    }
  }
  return qm;
}

encoder::EncoderModel dequantize(const QuantizedModel& qm) {
  encoder::EncoderModel m;
  m.config = qm.config;
  m.params.resize(qm.is_quantized.size());
  for (std::size_t i = 0; i < m.params.size(); ++i)
    m.params[i] = qm.is_quantized[i] ? dequantize_tensor(qm.quantized[i]) : qm.fp32[i];
  return m;
}

ad::Tensor<float> forward_quantized(const QuantizedModel& qm, const encoder::TokenSequence& seq) {
  return encoder::forward_logits(dequantize(qm), seq);
}

std::size_t weight_bytes(const encoder::EncoderModel& model) {
  std::size_t n = 0;
  for (const auto& t : model.params) n += t.numel() * sizeof(float);
  return n;
}

namespace {

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

splade::SparseRep encode_with(const encoder::EncoderModel& m, const encoder::TokenSequence& seq) {
  const auto in = encoder::prepare_input(seq, m.config);
  return splade::splade_pool(encoder::forward_logits(m, in), {in.span_begin, in.span_end});
}

}  // namespace

LatencyReport bench_encode(const EncodeFn& encode, const std::vector<encoder::TokenSequence>& queries,
                           const BenchConfig& cfg, std::string config_name, int bits, std::string granularity,
                           std::size_t weight_bytes, const encoder::EncoderConfig& model_cfg) {
  if (cfg.measure_iters < 30) throw std::invalid_argument("bench_encode: measure_iters must be >= 30");
  if (cfg.batch_size == 0) throw std::invalid_argument("bench_encode: batch_size must be >= 1");
  if (queries.empty()) throw std::invalid_argument("bench_encode: no queries");
  using Clock = std::chrono::steady_clock;
  std::size_t cursor = 0;
  auto run_batch = [&] {
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto rep = encode(queries[cursor % queries.size()]);
      ++cursor;
      if (rep.vocab_size == 0) throw std::logic_error("bench_encode: encoder returned no vocabulary");
    }
  };
  for (std::size_t i = 0; i < cfg.warmup_iters; ++i) run_batch();
  cursor = 0;
  std::vector<double> lat_ms;
  lat_ms.reserve(cfg.measure_iters);
  const auto start = Clock::now();
  for (std::size_t i = 0; i < cfg.measure_iters; ++i) {
    const auto t0 = Clock::now();
    run_batch();
    lat_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count() /
                     static_cast<double>(cfg.batch_size));
  }
  const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();

  LatencyReport r;
  r.config = std::move(config_name);
  r.bits = bits;
  r.granularity = std::move(granularity);
  r.measure_iters = cfg.measure_iters;
  r.qps = static_cast<double>(cfg.measure_iters * cfg.batch_size) / std::max(elapsed, 1e-12);
  r.p50_ms = percentile(lat_ms, 0.50);
  r.p95_ms = percentile(lat_ms, 0.95);
  // Logits dominate activations: one [L, V] block plus a few [L, d_ff] ones.
  const std::size_t L = model_cfg.max_seq_len;
  r.mem_bytes = weight_bytes + sizeof(float) * L * (model_cfg.vocab_size + 4 * model_cfg.d_ff + 8 * model_cfg.d_model);
  return r;
}

LatencyReport bench_encode(const encoder::EncoderModel& model, const std::vector<encoder::TokenSequence>& queries,
                           const BenchConfig& cfg) {
  return bench_encode([&](const encoder::TokenSequence& s) { return encode_with(model, s); }, queries, cfg, "fp32",
                      32, "none", weight_bytes(model), model.config);
}

LatencyReport bench_encode(const QuantizedModel& qm, const std::vector<encoder::TokenSequence>& queries,
                           const BenchConfig& cfg) {
  // The float copy is rebuilt per query so the dequantization cost is timed.
  return bench_encode([&](const encoder::TokenSequence& s) { return encode_with(dequantize(qm), s); }, queries, cfg,
                      qm.qconfig.name(), qm.qconfig.bits, to_string(qm.qconfig.granularity), qm.weight_bytes(),
                      qm.config);
}

void write_latency_csv(const std::string& path, const std::vector<LatencyReport>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "config,bits,granularity,qps,p50_ms,p95_ms,mem_bytes\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%.3f,%.4f,%.4f,%zu\n", r.config.c_str(), r.bits, r.granularity.c_str(),
                  r.qps, r.p50_ms, r.p95_ms, r.mem_bytes);
    os << buf;
  }
}

}  // namespace csplade::quant
