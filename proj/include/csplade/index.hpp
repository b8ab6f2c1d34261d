// Copyright 2026 The CSPLADE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "csplade/splade.hpp"
#include "csplade/trec.hpp"

namespace csplade::index {

using splade::SparseRep;

class BuildError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// LEB128 varint codec over strictly increasing ordinals (first value is a
// delta from zero).
void encode_deltas(std::span<const std::uint32_t> ordinals, std::vector<std::uint8_t>& out);
std::vector<std::uint32_t> decode_deltas(std::span<const std::uint8_t> bytes, std::size_t count,
                                         std::size_t* consumed = nullptr);
std::size_t varint_size(std::uint32_t v);

struct PostingList {
  std::uint32_t term = 0;
  std::vector<std::uint32_t> docs;  // strictly increasing ordinals
  // Exactly one of these is populated, depending on the index bit width.
  std::vector<std::uint8_t> impacts8;
  std::vector<std::uint16_t> impacts16;
  std::vector<float> impacts_f32;

  std::size_t size() const { return docs.size(); }
};

struct SearchHit {
  std::string doc_id;
  std::uint32_t ordinal = 0;
  float score = 0.0f;
};

class InvertedIndex {
 public:
  std::uint32_t vocab_size() const { return vocab_size_; }
  std::uint32_t doc_count() const { return static_cast<std::uint32_t>(doc_ids_.size()); }
  std::uint8_t bits() const { return bits_; }
  float scale() const { return scale_; }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  const std::vector<PostingList>& postings() const { return lists_; }

  // Stored impact of posting `i` in `list`, mapped back to weight units.
  float dequant(const PostingList& list, std::size_t i) const;
  std::uint32_t quantize(float w) const;

 private:
  friend InvertedIndex build_index(std::span<const std::pair<std::string, SparseRep>>, std::uint32_t,
                                   std::uint8_t);
  friend InvertedIndex deserialize(const std::string&);
  friend InvertedIndex deserialize_bytes(std::span<const std::uint8_t>);

  std::uint32_t vocab_size_ = 0;
  std::uint8_t bits_ = 8;
  float scale_ = 0.0f;
  std::vector<std::string> doc_ids_;
  std::vector<PostingList> lists_;  // ascending term id, non-empty lists only
};

// bits: 8 or 16 (linear impact quantization with floor 1), or 0 (raw f32).
InvertedIndex build_index(std::span<const std::pair<std::string, SparseRep>> reps, std::uint32_t vocab_size,
                          std::uint8_t bits = 8);

// Term-at-a-time exact top-k; ties by ascending ordinal; zero scores dropped.
std::vector<SearchHit> search(const InvertedIndex& index, const SparseRep& q, std::size_t k);

// Dense doc vector exactly as the index scores it (for oracle checks).
std::vector<SparseRep> dequantized_docs(const InvertedIndex& index);

std::vector<std::uint8_t> serialize_bytes(const InvertedIndex& index);
InvertedIndex deserialize_bytes(std::span<const std::uint8_t> bytes);
void serialize(const InvertedIndex& index, const std::string& path);
InvertedIndex deserialize(const std::string& path);
std::uint64_t index_size_bytes(const InvertedIndex& index);

inline constexpr std::size_t kMagicSize = 7;
inline constexpr std::size_t kHeaderSize = 13;

trec::Run to_run(const std::string& qid, const std::vector<SearchHit>& hits);

}  // namespace csplade::index
