#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "looprune/text.hpp"

namespace looprune {

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  bool operator==(const Span&) const = default;
};

struct Sentence {
  std::size_t index = 0;
  std::string text;  // untrimmed; trailing whitespace belongs here
  Span span;
  std::size_t token_count = 0;
};

struct Passage {
  std::string doc_id;
  std::vector<Sentence> sentences;
  std::optional<std::vector<int>> labels;

  std::size_t size() const { return sentences.size(); }
  // Concatenation of all sentence texts; equals the source chunk for a
  // freshly segmented passage.
  std::string text() const;
};

// Abbreviations that suppress a boundary after their final period. Matching
// is exact and case-sensitive on the whitespace-delimited word that ends at
// the period.
class AbbreviationList {
 public:
  AbbreviationList() = default;
  explicit AbbreviationList(std::vector<std::string> entries);

  // One abbreviation per line; blank lines and lines starting with '#' are
  // ignored. Throws std::runtime_error if the file cannot be read.
  static AbbreviationList load(const std::string& path);
  static const AbbreviationList& builtin();

  bool contains(std::string_view word) const;
  std::vector<std::string> entries() const;

 private:
  std::unordered_set<std::string> entries_;
};

// Splits a chunk into sentences whose spans tile the input exactly.
// A boundary follows a run of . ! ? (plus any closing quotes or brackets)
// when whitespace and then an uppercase ASCII letter or a digit follow.
// Throws std::invalid_argument("empty chunk") for empty input.
Passage segment(std::string_view chunk,
                const AbbreviationList& abbreviations = AbbreviationList::builtin(),
                const TokenCounter& counter = default_token_counter());

// Builds a passage from sentences that were split upstream. Spans are
// assigned consecutively over the concatenation.
Passage passage_from_sentences(std::string doc_id,
                               std::vector<std::string> sentences,
                               std::optional<std::vector<int>> labels = std::nullopt,
                               const TokenCounter& counter = default_token_counter());

inline constexpr std::size_t kOverlapMergeCap = 20;
inline constexpr std::size_t kShortPassageThreshold = 4;
inline constexpr std::size_t kShortMergeCap = 12;

// Chunk-merge preprocessing.
//  1. A chunk whose leading sentences repeat the trailing sentences of the
//     most recent chunk from the same doc_id is appended to it with the
//     repeated run kept once, unless the result would exceed 20 sentences.
//  2. A passage with fewer than 4 sentences is concatenated with its
//     neighbour in input order (preceding one first), unless the result
//     would exceed 12 sentences.
// Sentence order is preserved; only exact duplicates are dropped.
std::vector<Passage> merge_passages(std::vector<Passage> passages);

std::vector<Passage> merge_chunks(
    const std::vector<std::pair<std::string, std::string>>& chunks,
    const AbbreviationList& abbreviations = AbbreviationList::builtin(),
    const TokenCounter& counter = default_token_counter());

}  // namespace looprune
