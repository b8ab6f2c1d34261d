// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include "csplade/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace csplade::encoder {

namespace {

constexpr const char* kCheckpointMagic = "CSPL1";

const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{"vocab_size", "d_model",   "n_layers",  "n_heads", "d_ff",
                                          "max_seq_len", "mask_mode", "echo_mode", "seed"};
  return keys;
}

std::size_t parse_size(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("config: missing key '" + key + "'");
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for '" + key + "': " + it->second);
  }
}

}  // namespace

std::string to_string(MaskMode mode) { return mode == MaskMode::Causal ? "causal" : "bidirectional"; }

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "causal") return MaskMode::Causal;
  if (s == "bidirectional") return MaskMode::Bidirectional;
  throw ConfigError("unknown mask mode: " + s);
}

void EncoderConfig::validate() const {
  if (vocab_size < kNumReserved) throw ConfigError("vocab_size must be >= 4");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (n_layers == 0 || d_ff == 0) throw ConfigError("n_layers and d_ff must be positive");
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
  if (echo_mode && max_seq_len < 2) throw ConfigError("echo mode needs max_seq_len >= 2");
}

std::map<std::string, std::string> EncoderConfig::to_kv() const {
  return {{"vocab_size", std::to_string(vocab_size)}, {"d_model", std::to_string(d_model)},
          {"n_layers", std::to_string(n_layers)},     {"n_heads", std::to_string(n_heads)},
          {"d_ff", std::to_string(d_ff)},             {"max_seq_len", std::to_string(max_seq_len)},
          {"mask_mode", to_string(mask_mode)},        {"echo_mode", echo_mode ? "1" : "0"},
          {"seed", std::to_string(seed)}};
}

EncoderConfig EncoderConfig::from_kv(const std::map<std::string, std::string>& kv) {
  EncoderConfig c;
  c.vocab_size = parse_size(kv, "vocab_size");
  c.d_model = parse_size(kv, "d_model");
  c.n_layers = parse_size(kv, "n_layers");
  c.n_heads = parse_size(kv, "n_heads");
  c.d_ff = parse_size(kv, "d_ff");
  c.max_seq_len = parse_size(kv, "max_seq_len");
  auto mm = kv.find("mask_mode");
  if (mm == kv.end()) throw ConfigError("config: missing key 'mask_mode'");
  c.mask_mode = parse_mask_mode(mm->second);
  c.echo_mode = parse_size(kv, "echo_mode") != 0;
  c.seed = parse_size(kv, "seed");
  c.validate();
  return c;
}

bool operator==(const EncoderConfig& a, const EncoderConfig& b) { return a.to_kv() == b.to_kv(); }

void TokenSequence::validate(std::size_t vocab_size) const {
  if (valid_len > ids.size()) throw LengthError("sequence: valid_len exceeds length");
  if (span_begin >= span_end || span_end > valid_len) {
    throw LengthError("sequence: content span [" + std::to_string(span_begin) + "," + std::to_string(span_end) +
                      ") not inside valid length " + std::to_string(valid_len));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw ConfigError("sequence: token id " + std::to_string(id) + " outside vocabulary of " +
                        std::to_string(vocab_size));
    }
  }
}

TokenSequence echo_expand(const TokenSequence& seq, std::size_t max_seq_len) {
  std::vector<int> content;
  for (std::size_t i = seq.span_begin; i < seq.span_end && i < seq.ids.size(); ++i) {
    const int id = seq.ids[i];
    if (id != kPad && id != kBos && id != kEos) content.push_back(id);
  }
  if (content.empty()) throw LengthError("echo_expand: no content tokens to repeat");
  const std::size_t n = content.size();
  if (2 * n + 3 > max_seq_len) {
    throw LengthError("echo_expand: doubled length " + std::to_string(2 * n + 3) + " exceeds max_seq_len " +
                      std::to_string(max_seq_len));
  }
  TokenSequence out;
  out.ids.reserve(2 * n + 3);
  out.ids.push_back(kBos);
  out.ids.insert(out.ids.end(), content.begin(), content.end());
  out.ids.push_back(kSep);
  out.ids.insert(out.ids.end(), content.begin(), content.end());
  out.ids.push_back(kEos);
  out.valid_len = out.ids.size();
  out.span_begin = n + 2;
  out.span_end = 2 * n + 2;
  return out;
}

TokenSequence prepare_input(const TokenSequence& seq, const EncoderConfig& cfg) {
  return cfg.echo_mode ? echo_expand(seq, cfg.max_seq_len) : seq;
}

std::size_t input_budget(const EncoderConfig& cfg) {
  return cfg.echo_mode ? max_echo_content(cfg.max_seq_len) + 2 : cfg.max_seq_len;
}

std::vector<ParamSpec> param_layout(const EncoderConfig& cfg) {
  const std::size_t d = cfg.d_model, dh = cfg.head_dim();
  std::vector<ParamSpec> out;
  out.push_back({"tok_emb", {cfg.vocab_size, d}});
  out.push_back({"pos_emb", {cfg.max_seq_len, d}});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    out.push_back({p + "ln1_g", {d}});
    out.push_back({p + "ln1_b", {d}});
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const std::string ph = p + "h" + std::to_string(h) + ".";
      out.push_back({ph + "wq", {d, dh}});
      out.push_back({ph + "wk", {d, dh}});
      out.push_back({ph + "wv", {d, dh}});
      out.push_back({ph + "wo", {dh, d}});
    }
    out.push_back({p + "bo", {d}});
    out.push_back({p + "ln2_g", {d}});
    out.push_back({p + "ln2_b", {d}});
    out.push_back({p + "w1", {d, cfg.d_ff}});
    out.push_back({p + "b1", {cfg.d_ff}});
    out.push_back({p + "w2", {cfg.d_ff, d}});
    out.push_back({p + "b2", {d}});
  }
  out.push_back({"lnf_g", {d}});
  out.push_back({"lnf_b", {d}});
  out.push_back({"lm_bias", {cfg.vocab_size}});
  return out;
}

ParamIds param_ids(const EncoderConfig& cfg) {
  ParamIds ids;
  ad::ParamId next = 0;
  ids.tok_emb = next++;
  ids.pos_emb = next++;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerIds li;
    li.ln1_g = next++;
    li.ln1_b = next++;
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      li.wq.push_back(next++);
      li.wk.push_back(next++);
      li.wv.push_back(next++);
      li.wo.push_back(next++);
    }
    li.bo = next++;
    li.ln2_g = next++;
    li.ln2_b = next++;
    li.w1 = next++;
    li.b1 = next++;
    li.w2 = next++;
    li.b2 = next++;
    ids.layers.push_back(std::move(li));
  }
  ids.lnf_g = next++;
  ids.lnf_b = next++;
  ids.lm_bias = next++;
  ids.count = next;
  return ids;
}

EncoderModel init_model(const EncoderConfig& cfg) {
  cfg.validate();
  EncoderModel m;
  m.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  const float proj_std = 0.02f / std::sqrt(static_cast<float>(cfg.n_layers));
  for (const auto& spec : param_layout(cfg)) {
    auto t = ad::Tensor<float>::zeros(spec.shape);
    const std::string& name = spec.name;
    const auto ends_with = [&](const char* suffix) {
      const std::size_t n = std::strlen(suffix);
      return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
    };
    if (name == "tok_emb" || name == "pos_emb") {
      std::normal_distribution<float> nd(0.0f, 0.02f);
      for (auto& v : t.data) v = nd(rng);
    } else if (spec.shape.size() == 2) {
      std::normal_distribution<float> nd(0.0f, proj_std);
      for (auto& v : t.data) v = nd(rng);
    } else if (ends_with("_g")) {
      for (auto& v : t.data) v = 1.0f;
    }
    m.params.push_back(std::move(t));
  }
  return m;
}

void apply_negative_bias(EncoderModel& model, float offset) {
  const auto ids = param_ids(model.config);
  for (auto& v : model[ids.lm_bias].data) v -= offset;
}

template <typename T>
BoundParams<T> bind(ad::Graph<T>& g, const EncoderWeights<T>& w) {
  BoundParams<T> b;
  b.weights = &w;
  b.ids = param_ids(w.config);
  if (w.params.size() != b.ids.count) {
    throw ConfigError("bind: model has " + std::to_string(w.params.size()) + " tensors, layout needs " +
                      std::to_string(b.ids.count));
  }
  b.vars.reserve(w.params.size());
  for (std::size_t i = 0; i < w.params.size(); ++i) b.vars.push_back(g.param(i, w.params[i]));
  return b;
}

template <typename T>
ad::Var<T> forward_logits(const BoundParams<T>& p, const TokenSequence& seq) {
  const EncoderConfig& cfg = p.weights->config;
  const std::size_t len = seq.ids.size();
  if (len == 0) throw LengthError("forward: empty sequence");
  if (len > cfg.max_seq_len) {
    throw LengthError("forward: sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  }
  const std::size_t valid = seq.valid_len == 0 ? len : std::min(seq.valid_len, len);

  std::vector<int> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = static_cast<int>(i);

  // mask[i * len + j] = 1 when query i may not attend to key j.
  std::vector<std::uint8_t> mask(len * len, 0);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j) {
      const bool future = cfg.mask_mode == MaskMode::Causal && j > i;
      mask[i * len + j] = static_cast<std::uint8_t>(future || j >= valid);
    }

  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(cfg.head_dim()));
  const T neg_inf = T(-1e9);

  ad::Var<T> x = ad::add(ad::embedding(p[p.ids.tok_emb], std::span<const int>(seq.ids)),
                         ad::embedding(p[p.ids.pos_emb], std::span<const int>(positions)));
  for (const auto& li : p.ids.layers) {
    ad::Var<T> h = ad::layer_norm(x, p[li.ln1_g], p[li.ln1_b]);
    ad::Var<T> attn;
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
      ad::Var<T> q = ad::matmul(h, p[li.wq[head]]);
      ad::Var<T> k = ad::matmul(h, p[li.wk[head]]);
      ad::Var<T> v = ad::matmul(h, p[li.wv[head]]);
      ad::Var<T> scores = ad::masked_fill(ad::scale(ad::matmul_nt(q, k), inv_sqrt_dh),
                                          std::span<const std::uint8_t>(mask), neg_inf);
      ad::Var<T> out = ad::matmul(ad::matmul(ad::softmax_rows(scores), v), p[li.wo[head]]);
      attn = head == 0 ? out : ad::add(attn, out);
    }
    x = ad::add(x, ad::add_row(attn, p[li.bo]));
    ad::Var<T> h2 = ad::layer_norm(x, p[li.ln2_g], p[li.ln2_b]);
    ad::Var<T> ff = ad::gelu(ad::add_row(ad::matmul(h2, p[li.w1]), p[li.b1]));
    x = ad::add(x, ad::add_row(ad::matmul(ff, p[li.w2]), p[li.b2]));
  }
  ad::Var<T> hf = ad::layer_norm(x, p[p.ids.lnf_g], p[p.ids.lnf_b]);
  return ad::add_row(ad::matmul_nt(hf, p[p.ids.tok_emb]), p[p.ids.lm_bias]);
}

ad::Tensor<float> forward_logits(const EncoderModel& model, const TokenSequence& seq) {
  ad::Graph<float> g(false);
  auto bound = bind(g, model);
  auto logits = forward_logits(bound, seq);
  auto v = logits.value();
  return ad::Tensor<float>(logits.shape(), std::vector<float>(v.begin(), v.end()));
}

bool all_finite(const EncoderModel& model) {
  for (const auto& t : model.params)
    for (float v : t.data)
      if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_f32_le(std::ostream& os, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  os.write(b, 4);
}

}  // namespace

void save_checkpoint(const std::string& path, const EncoderModel& model,
                     const std::map<std::string, std::string>& metadata) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("checkpoint: cannot open " + path + " for writing");
  std::map<std::string, std::string> kv = model.config.to_kv();
  for (const auto& [k, v] : metadata) {
    if (config_keys().count(k)) throw ConfigError("checkpoint: metadata key '" + k + "' collides with config");
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("checkpoint: metadata '" + k + "' contains '=' or newline");
    }
    kv[k] = v;
  }
  os << kCheckpointMagic << '\n';
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  os << '\n';
  const auto layout = param_layout(model.config);
  if (layout.size() != model.params.size()) throw ConfigError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].shape != model.params[i].shape) throw ConfigError("checkpoint: shape mismatch at " + layout[i].name);
    for (float v : model.params[i].data) put_f32_le(os, v);
  }
  if (!os) throw FormatError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw FormatError("checkpoint: bad magic in " + path);
  std::map<std::string, std::string> kv;
  while (true) {
    if (!std::getline(is, line)) throw FormatError("checkpoint: truncated header in " + path);
    if (line.empty()) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: malformed header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  Checkpoint ck;
  ck.model.config = EncoderConfig::from_kv(kv);
  for (auto& [k, v] : kv)
    if (!config_keys().count(k)) ck.metadata[k] = v;
  for (const auto& spec : param_layout(ck.model.config)) {
    auto t = ad::Tensor<float>::zeros(spec.shape);
    std::vector<unsigned char> buf(t.numel() * 4);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size()) {
      throw FormatError("checkpoint: truncated parameter block '" + spec.name + "' in " + path);
    }
    for (std::size_t i = 0; i < t.numel(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[i * 4 + b]) << (8 * b);
      t.data[i] = std::bit_cast<float>(bits);
    }
    ck.model.params.push_back(std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes in " + path);
  return ck;
}

template BoundParams<float> bind<float>(ad::Graph<float>&, const EncoderWeights<float>&);
template BoundParams<double> bind<double>(ad::Graph<double>&, const EncoderWeights<double>&);
template ad::Var<float> forward_logits<float>(const BoundParams<float>&, const TokenSequence&);
template ad::Var<double> forward_logits<double>(const BoundParams<double>&, const TokenSequence&);

}  // namespace csplade::encoder
