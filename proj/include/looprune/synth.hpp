#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "looprune/dataset.hpp"

namespace looprune {

// Synthetic QA with planted clue sentences. Each clue sentence carries its
// own key terms (which also appear in the question), a relation word and a
// named entity; the first clue holds the gold answer. Clue sentences go to
// distinct passages, so every other passage is clue-free. Distractor
// sentences draw from a Zipf-weighted pseudo-word vocabulary that shares no
// word with key terms, relation words or question templates.
struct SynthSpec {
  std::size_t n_questions = 100;
  std::size_t passages_per_question = 10;
  std::size_t min_sentences = 10;
  std::size_t max_sentences = 10;
  std::size_t min_clues = 1;
  std::size_t max_clues = 2;
  std::size_t distractor_vocab_size = 2000;
  std::size_t key_terms_per_clue = 2;
  // Upper bound on how many clue sentences (across the dataset) may share
  // one key term. 1 makes every key term unique.
  std::size_t key_term_max_df = 1;
  std::size_t min_sentence_words = 6;
  std::size_t max_sentence_words = 12;
  double zipf_exponent = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SynthSpec&) const = default;
};

struct SynthDataset {
  std::vector<DatasetRecord> records;
  std::vector<std::string> clue_terms;  // every key term used
};

SynthDataset generate(const SynthSpec& spec);

}  // namespace looprune
