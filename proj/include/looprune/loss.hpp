#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "looprune/segmenter.hpp"

namespace looprune {

struct LossConfig {
  double m1 = 0.35;
  double m2 = 0.35;
  double m3 = 0.035;
  double alpha = 1.5;
  double beta = 1.25;
  double gamma = 1.0;
  double lambda = 0.75;
  double bce_pos_weight = 5.0;
  std::size_t sample_m = 50;

  // Throws std::invalid_argument unless margins are positive with
  // m3 < min(m1, m2), weights are non-negative, pos weight is positive and
  // sample_m >= 1.
  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

// Full-context logit, leave-one-out logits and their gaps.
struct DeltaBundle {
  double p0 = 0.0;
  std::vector<double> p_minus;
  std::vector<double> deltas;  // deltas[k] == p0 - p_minus[k]
  std::vector<int> labels;

  static DeltaBundle from_scores(double p0, std::vector<double> p_minus,
                                 std::vector<int> labels);
};

// Unweighted component sums.
struct LossBreakdown {
  double ord = 0.0;
  double crit = 0.0;
  double non = 0.0;
  double bce = 0.0;

  double ranking() const { return ord + crit + non; }
};

struct LossValue {
  double total = 0.0;
  LossBreakdown breakdown;
};

// Total loss plus its derivatives with respect to p0 and each p_minus[k].
// Hinges contribute nothing at their kink.
struct LossEvaluation {
  LossValue value;
  bool clue_filled = false;
  double d_p0 = 0.0;
  std::vector<double> d_p_minus;
};

class LossRoutingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

double softplus(double x);
double sigmoid(double x);

// Weighted binary cross-entropy on sigmoid(logit); pos_weight multiplies the
// target-1 term only. Computed through softplus, so it is finite for every
// finite logit.
double bce(double logit, int target, double pos_weight);

// Throws LossRoutingError if no label is 1.
LossValue loss_clue_filled(const DeltaBundle& bundle, const LossConfig& cfg);
// Throws LossRoutingError if any label is 1.
LossValue loss_clue_free(const DeltaBundle& bundle, const LossConfig& cfg);

// Routes by labels and differentiates.
LossEvaluation evaluate_loss(const DeltaBundle& bundle, const LossConfig& cfg);

// Indices (ascending) of the sentences kept for one training step: all of
// them if n <= sample_m, else every critical index plus a seeded uniform
// sample of non-critical ones up to sample_m. Throws std::invalid_argument
// ("sample cap below critical count") when critical sentences cannot fit.
std::vector<std::size_t> sample_sentences(const std::vector<int>& labels,
                                          const LossConfig& cfg,
                                          std::uint64_t seed);
std::vector<std::size_t> sample_sentences(const Passage& passage,
                                          const LossConfig& cfg,
                                          std::uint64_t seed);

}  // namespace looprune
