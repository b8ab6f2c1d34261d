// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#include "csplade/index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <unordered_set>

namespace csplade::index {

namespace {

constexpr char kMagic[kMagicSize] = {'C', 'S', 'P', 'I', 'D', 'X', '1'};

std::size_t impact_width(std::uint8_t bits) { return bits == 8 ? 1 : bits == 16 ? 2 : 4; }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return static_cast<std::uint32_t>(s[0]) | static_cast<std::uint32_t>(s[1]) << 8 |
           static_cast<std::uint32_t>(s[2]) << 16 | static_cast<std::uint32_t>(s[3]) << 24;
  }
  std::span<const std::uint8_t> rest() const { return bytes_.subspan(pos_); }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Varint

std::size_t varint_size(std::uint32_t v) {
  std::size_t n = 1;
  while (v >= 0x80) {
    v >>= 7;
    ++n;
  }
  return n;
}

void encode_deltas(std::span<const std::uint32_t> ordinals, std::vector<std::uint8_t>& out) {
  std::uint32_t prev = 0;
  for (std::size_t i = 0; i < ordinals.size(); ++i) {
    if (i > 0 && ordinals[i] <= prev) throw BuildError("encode_deltas: ordinals not strictly increasing");
    std::uint32_t d = ordinals[i] - prev;
    prev = ordinals[i];
    while (d >= 0x80) {
      out.push_back(static_cast<std::uint8_t>((d & 0x7F) | 0x80));
      d >>= 7;
    }
    out.push_back(static_cast<std::uint8_t>(d));
  }
}

std::vector<std::uint32_t> decode_deltas(std::span<const std::uint8_t> bytes, std::size_t count,
                                         std::size_t* consumed) {
  std::vector<std::uint32_t> out;
  out.reserve(count);
  std::size_t pos = 0;
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t v = 0;
    int shift = 0;
    while (true) {
      if (pos >= bytes.size()) throw FormatError("truncated varint", pos);
      const std::uint8_t b = bytes[pos++];
      v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
      if (!(b & 0x80)) break;
      shift += 7;
      if (shift > 28) throw FormatError("varint too long", pos);
    }
    if (i > 0 && v == 0) throw FormatError("zero delta in posting list", pos);
    prev += v;
    if (prev > UINT32_MAX) throw FormatError("ordinal overflow", pos);
    out.push_back(static_cast<std::uint32_t>(prev));
  }
  if (consumed) *consumed = pos;
  return out;
}

// ---------------------------------------------------------------------------
// Build

std::uint32_t InvertedIndex::quantize(float w) const {
  const double levels = static_cast<double>((1u << bits_) - 1u);
  const double q = std::round(static_cast<double>(w) / static_cast<double>(scale_) * levels);
  return static_cast<std::uint32_t>(std::clamp(q, 1.0, levels));
}

float InvertedIndex::dequant(const PostingList& list, std::size_t i) const {
  switch (bits_) {
    case 8:
      return static_cast<float>(list.impacts8[i]) * (scale_ / 255.0f);
    case 16:
      return static_cast<float>(list.impacts16[i]) * (scale_ / 65535.0f);
    default:
      return list.impacts_f32[i];
  }
}

InvertedIndex build_index(std::span<const std::pair<std::string, SparseRep>> reps, std::uint32_t vocab_size,
                          std::uint8_t bits) {
  if (bits != 0 && bits != 8 && bits != 16) throw BuildError("build_index: bits must be 0, 8 or 16");
  InvertedIndex idx;
  idx.vocab_size_ = vocab_size;
  idx.bits_ = bits;
  std::unordered_set<std::string> seen;
  float max_w = 0.0f;
  for (const auto& [id, rep] : reps) {
    if (!seen.insert(id).second) throw BuildError("build_index: duplicate doc id '" + id + "'");
    if (rep.vocab_size != vocab_size) throw BuildError("build_index: vocab mismatch for doc '" + id + "'");
    rep.validate();
    for (const auto& e : rep.entries) max_w = std::max(max_w, e.weight);
    idx.doc_ids_.push_back(id);
  }
  idx.scale_ = max_w;

  std::map<std::uint32_t, PostingList> lists;
  for (std::uint32_t ord = 0; ord < reps.size(); ++ord) {
    for (const auto& e : reps[ord].second.entries) {
      auto& pl = lists[e.term];
      pl.term = e.term;
      pl.docs.push_back(ord);
      switch (bits) {
        case 8:
          pl.impacts8.push_back(static_cast<std::uint8_t>(idx.quantize(e.weight)));
          break;
        case 16:
          pl.impacts16.push_back(static_cast<std::uint16_t>(idx.quantize(e.weight)));
          break;
        default:
          pl.impacts_f32.push_back(e.weight);
      }
    }
  }
  for (auto& [term, pl] : lists) idx.lists_.push_back(std::move(pl));
  return idx;
}

// ---------------------------------------------------------------------------
// Search

std::vector<SearchHit> search(const InvertedIndex& index, const SparseRep& q, std::size_t k) {
  if (k == 0) throw std::invalid_argument("search: k must be >= 1");
  std::vector<SearchHit> hits;
  if (q.empty() || index.doc_count() == 0) return hits;
  const auto& lists = index.postings();
  std::vector<float> acc(index.doc_count(), 0.0f);
  std::vector<std::uint8_t> touched_flag(index.doc_count(), 0);
  std::vector<std::uint32_t> touched;

  auto it = lists.begin();
  for (const auto& e : q.entries) {
    it = std::lower_bound(it, lists.end(), e.term, [](const PostingList& pl, std::uint32_t t) { return pl.term < t; });
    if (it == lists.end()) break;
    if (it->term != e.term) continue;
    const PostingList& pl = *it;
    for (std::size_t i = 0; i < pl.size(); ++i) {
      const std::uint32_t d = pl.docs[i];
      acc[d] += e.weight * index.dequant(pl, i);
      if (!touched_flag[d]) {
        touched_flag[d] = 1;
        touched.push_back(d);
      }
    }
  }

  std::vector<std::uint32_t> cands;
  cands.reserve(touched.size());
  for (auto d : touched)
    if (acc[d] > 0.0f) cands.push_back(d);
  auto better = [&](std::uint32_t a, std::uint32_t b) { return acc[a] != acc[b] ? acc[a] > acc[b] : a < b; };
  const std::size_t n = std::min(k, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(n), cands.end(), better);
  hits.reserve(n);
  for (std::size_t i = 0; i < n; ++i) hits.push_back({index.doc_ids()[cands[i]], cands[i], acc[cands[i]]});
  return hits;
}

std::vector<SparseRep> dequantized_docs(const InvertedIndex& index) {
  std::vector<SparseRep> docs(index.doc_count());
  for (auto& d : docs) d.vocab_size = index.vocab_size();
  for (const auto& pl : index.postings())
    for (std::size_t i = 0; i < pl.size(); ++i) docs[pl.docs[i]].entries.push_back({pl.term, index.dequant(pl, i)});
  return docs;
}

trec::Run to_run(const std::string& qid, const std::vector<SearchHit>& hits) {
  trec::Run run;
  auto& list = run[qid];
  for (const auto& h : hits) list.push_back({h.doc_id, h.score});
  return run;
}

// ---------------------------------------------------------------------------
// Serialization

std::vector<std::uint8_t> serialize_bytes(const InvertedIndex& index) {
  std::vector<std::uint8_t> out;
  out.reserve(index_size_bytes(index));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, index.vocab_size());
  put_u32(out, index.doc_count());
  out.push_back(index.bits());
  put_u32(out, std::bit_cast<std::uint32_t>(index.scale()));
  for (const auto& id : index.doc_ids()) {
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out.insert(out.end(), id.begin(), id.end());
  }
  for (const auto& pl : index.postings()) {
    put_u32(out, pl.term);
    put_u32(out, static_cast<std::uint32_t>(pl.size()));
    encode_deltas(pl.docs, out);
    switch (index.bits()) {
      case 8:
        out.insert(out.end(), pl.impacts8.begin(), pl.impacts8.end());
        break;
      case 16:
        for (auto v : pl.impacts16) {
          out.push_back(static_cast<std::uint8_t>(v));
          out.push_back(static_cast<std::uint8_t>(v >> 8));
        }
        break;
      default:
        for (float v : pl.impacts_f32) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  return out;
}

InvertedIndex deserialize_bytes(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(kMagicSize, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw FormatError("bad magic", 0);
  InvertedIndex idx;
  idx.vocab_size_ = r.u32("header");
  const std::uint32_t doc_count = r.u32("header");
  const std::size_t bits_at = r.pos();
  idx.bits_ = r.take(1, "header")[0];
  if (idx.bits_ != 0 && idx.bits_ != 8 && idx.bits_ != 16) throw FormatError("unsupported bit width", bits_at);
  idx.scale_ = std::bit_cast<float>(r.u32("header"));
  idx.doc_ids_.reserve(doc_count);
  for (std::uint32_t i = 0; i < doc_count; ++i) {
    const std::uint32_t len = r.u32("doc-id length");
    auto s = r.take(len, "doc id");
    idx.doc_ids_.emplace_back(s.begin(), s.end());
  }
  const std::size_t width = impact_width(idx.bits_);
  while (!r.done()) {
    const std::size_t list_at = r.pos();
    PostingList pl;
    pl.term = r.u32("posting header");
    const std::uint32_t count = r.u32("posting header");
    if (pl.term >= idx.vocab_size_) throw FormatError("term id out of range", list_at);
    if (!idx.lists_.empty() && idx.lists_.back().term >= pl.term) throw FormatError("term ids not increasing", list_at);
    if (count == 0) throw FormatError("empty posting list", list_at);
    std::size_t used = 0;
    try {
      pl.docs = decode_deltas(r.rest(), count, &used);
    } catch (const FormatError& e) {
      throw FormatError("bad posting list: " + std::string(e.what()), r.pos());
    }
    if (pl.docs.back() >= doc_count) throw FormatError("doc ordinal out of range", r.pos());
    r.skip(used);
    auto raw = r.take(static_cast<std::size_t>(count) * width, "impacts");
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto* p = raw.data() + i * width;
      switch (idx.bits_) {
        case 8:
          pl.impacts8.push_back(p[0]);
          break;
        case 16:
          pl.impacts16.push_back(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
          break;
        default: {
          const std::uint32_t b = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                                  static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
          pl.impacts_f32.push_back(std::bit_cast<float>(b));
        }
      }
    }
    idx.lists_.push_back(std::move(pl));
  }
  return idx;
}

void serialize(const InvertedIndex& index, const std::string& path) {
  const auto bytes = serialize_bytes(index);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed for " + path);
}

InvertedIndex deserialize(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_bytes(bytes);
}

std::uint64_t index_size_bytes(const InvertedIndex& index) {
  std::uint64_t n = kMagicSize + kHeaderSize;
  for (const auto& id : index.doc_ids()) n += 4 + id.size();
  const std::size_t width = impact_width(index.bits());
  for (const auto& pl : index.postings()) {
    n += 8 + pl.size() * width;
    std::uint32_t prev = 0;
    for (auto d : pl.docs) {
      n += varint_size(d - prev);
      prev = d;
    }
  }
  return n;
}

}  // namespace csplade::index
