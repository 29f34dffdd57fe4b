#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "looprune/scorer.hpp"
#include "looprune/segmenter.hpp"
#include "looprune/text.hpp"

namespace looprune {

struct InferenceConfig {
  double d_min = 0.12;
  double delta_min = 0.01;

  // Throws std::invalid_argument unless 0 < d_min < 1 and delta_min > 0.
  void validate() const;
  bool operator==(const InferenceConfig&) const = default;
};

struct LooScores {
  double p0 = 0.0;
  std::vector<double> p_minus;
  std::vector<double> deltas;
};

// Scores the full passage and every single-sentence-removed variant:
// exactly n + 1 scorer calls, variants keep the original order.
LooScores loo_deltas(const Scorer& scorer, std::string_view query,
                     const Passage& passage, unsigned parallelism = 1);

enum class GateDecision { kKeep, kPruneAll };

// Prune-all iff sigmoid(p0) < d_min.
GateDecision passage_gate(double p0, const InferenceConfig& cfg);

struct Selection {
  std::optional<double> tau;  // absent when no delta exceeds delta_min
  std::vector<bool> critical;
};

// Gap-based adaptive threshold. Among deltas strictly above delta_min,
// sorted descending, the cut goes at the largest gap between neighbours
// (first such gap on ties) and tau = max(delta_min, value below the cut).
// A sentence is critical iff its delta > tau. With one significant delta, or
// when all significant deltas are equal, tau = delta_min and every
// significant sentence is kept.
Selection adaptive_select(const std::vector<double>& deltas,
                          const InferenceConfig& cfg);

struct PassageDiagnostics {
  bool gated = false;  // pruned by the passage gate; no variants scored
  double p0 = 0.0;
  std::vector<double> deltas;
  std::optional<double> tau;
};

struct KeptSentence {
  std::size_t passage = 0;
  std::size_t sentence = 0;
  bool operator==(const KeptSentence&) const = default;
  auto operator<=>(const KeptSentence&) const = default;
};

struct CompressionResult {
  std::vector<KeptSentence> kept;  // sorted by (passage, sentence)
  std::string compressed_text;
  double ratio = 0.0;
  double latency_seconds = 0.0;
  std::vector<PassageDiagnostics> passages;
};

// Kept sentences rendered in order: trailing whitespace trimmed, sentences
// of one passage joined by a space, passages joined by a newline.
std::string render_compressed(const std::vector<Passage>& passages,
                              const std::vector<KeptSentence>& kept);

// Compressed token count over original token count; 0 for empty input.
double compression_ratio(const std::vector<Passage>& passages,
                         const std::vector<KeptSentence>& kept,
                         const TokenCounter& counter = default_token_counter());

// Gate, leave-one-out deltas and adaptive selection per passage. Passages
// (and their variants) may be scored concurrently; output does not depend on
// parallelism.
CompressionResult prune(const Scorer& scorer, std::string_view query,
                        const std::vector<Passage>& passages,
                        const InferenceConfig& cfg, unsigned parallelism = 1,
                        const TokenCounter& counter = default_token_counter());

// Applies the gate and selection to precomputed scores.
std::vector<bool> classify_passage(const LooScores& scores,
                                   const InferenceConfig& cfg);

}  // namespace looprune
