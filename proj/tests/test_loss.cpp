#include <gtest/gtest.h>

#include <cmath>

#include <set>

#include "looprune/loss.hpp"
#include "looprune/rng.hpp"

namespace looprune {
namespace {

DeltaBundle from_deltas(double p0, const std::vector<double>& deltas, std::vector<int> labels) {
  std::vector<double> p_minus;
  for (double d : deltas) p_minus.push_back(p0 - d);
  return DeltaBundle::from_scores(p0, p_minus, std::move(labels));
}

TEST(Bce, Examples) {
  EXPECT_NEAR(bce(0, 1, 1.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce(0, 0, 5.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce(10, 1, 5.0), 2.2700e-4, 1e-8);
}

TEST(Bce, StableForExtremeLogits) {
  for (double x : {-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6}) {
    EXPECT_TRUE(std::isfinite(bce(x, 1, 5.0)));
    EXPECT_TRUE(std::isfinite(bce(x, 0, 5.0)));
    EXPECT_GE(bce(x, 0, 5.0), 0.0);
  }
  EXPECT_NEAR(bce(-800, 1, 1.0), 800.0, 1e-9);
  EXPECT_NEAR(softplus(-800), 0.0, 1e-300);
}

TEST(LossClueFilled, Examples) {
  const LossConfig cfg;
  const auto slack = loss_clue_filled(from_deltas(10, {0.5, -0.1}, {1, 0}), cfg);
  EXPECT_EQ(slack.breakdown.ord, 0.0);
  EXPECT_EQ(slack.breakdown.crit, 0.0);
  EXPECT_EQ(slack.breakdown.non, 0.0);
  EXPECT_NEAR(slack.total, 1.7025e-4, 1e-8);

  const auto active = loss_clue_filled(DeltaBundle::from_scores(0, {-0.2, -0.1}, {1, 0}), cfg);
  EXPECT_NEAR(active.breakdown.ord, 0.25, 1e-15);
  EXPECT_NEAR(active.breakdown.crit, 0.15, 1e-15);
  EXPECT_NEAR(active.breakdown.non, 0.135, 1e-15);
  EXPECT_NEAR(active.breakdown.bce, 5 * std::log(2.0), 1e-15);
  EXPECT_NEAR(active.total, 0.375 + 0.1875 + 0.135 + 3.75 * std::log(2.0), 1e-12);

  const auto boundary = loss_clue_filled(DeltaBundle::from_scores(100, {99.65}, {1}), cfg);
  EXPECT_EQ(boundary.breakdown.ord, 0.0);
  EXPECT_NEAR(boundary.breakdown.crit, 0.0, 1e-12);
}

TEST(LossClueFree, Examples) {
  const LossConfig cfg;
  EXPECT_NEAR(loss_clue_free(DeltaBundle::from_scores(-10, {-10, -10}, {0, 0}), cfg).total,
              1.0215e-4, 1e-8);
  EXPECT_NEAR(loss_clue_free(DeltaBundle::from_scores(0, {0}, {0}), cfg).total, 1.5 * std::log(2.0),
              1e-15);
  const auto edge = loss_clue_free(DeltaBundle::from_scores(0.5, {0.5 - 0.035, 0.5 + 0.035}, {0, 0}),
                                   cfg);
  EXPECT_NEAR(edge.breakdown.non, 0.0, 1e-12);
}

TEST(LossRouting, WrongBranchThrows) {
  const LossConfig cfg;
  try {
    loss_clue_filled(from_deltas(0, {0.1, 0.2}, {0, 0}), cfg);
    FAIL();
  } catch (const LossRoutingError& e) {
    EXPECT_STREQ(e.what(), "clue-free passage routed to clue-filled loss");
  }
  try {
    loss_clue_free(from_deltas(0, {0.1, 0.2}, {0, 1}), cfg);
    FAIL();
  } catch (const LossRoutingError& e) {
    EXPECT_STREQ(e.what(), "clue-filled passage routed to clue-free loss");
  }
  EXPECT_TRUE(evaluate_loss(from_deltas(0, {0.1, 0.2}, {0, 1}), cfg).clue_filled);
  EXPECT_FALSE(evaluate_loss(from_deltas(0, {0.1, 0.2}, {0, 0}), cfg).clue_filled);
}

DeltaBundle random_bundle(Rng& rng, bool force_positive) {
  const std::size_t n = 1 + rng.uniform_index(8);
  std::vector<double> deltas;
  std::vector<int> labels;
  for (std::size_t k = 0; k < n; ++k) {
    deltas.push_back(rng.uniform(-1.5, 1.5));
    labels.push_back(rng.bernoulli(0.3) ? 1 : 0);
  }
  if (force_positive) labels[rng.uniform_index(n)] = 1;
  return from_deltas(rng.uniform(-5, 5), deltas, labels);
}

bool has_positive(const DeltaBundle& b) {
  return std::find(b.labels.begin(), b.labels.end(), 1) != b.labels.end();
}

TEST(LossProperties, NonNegative) {
  Rng rng(1);
  const LossConfig cfg;
  for (int i = 0; i < 2000; ++i) {
    const auto b = random_bundle(rng, false);
    const auto v = has_positive(b) ? loss_clue_filled(b, cfg) : loss_clue_free(b, cfg);
    EXPECT_GE(v.breakdown.ord, 0.0);
    EXPECT_GE(v.breakdown.crit, 0.0);
    EXPECT_GE(v.breakdown.non, 0.0);
    EXPECT_GE(v.breakdown.bce, 0.0);
    EXPECT_GE(v.total, 0.0);
  }
}

TEST(LossProperties, ZeroRankingLossCharacterization) {
  Rng rng(2);
  const LossConfig cfg;
  int zeros = 0;
  for (int i = 0; i < 4000; ++i) {
    auto b = random_bundle(rng, true);
    // Push half of the bundles towards the satisfied region.
    if (i % 2 == 0) {
      auto d = b.deltas;
      for (std::size_t k = 0; k < d.size(); ++k)
        d[k] = b.labels[k] ? rng.uniform(0.3, 1.5) : rng.uniform(-0.5, 0.0);
      b = from_deltas(b.p0, d, b.labels);
    }
    const double ranking = loss_clue_filled(b, cfg).breakdown.ranking();
    bool satisfied = true;
    for (std::size_t i2 = 0; i2 < b.deltas.size(); ++i2) {
      if (b.labels[i2] == 1 && b.deltas[i2] < cfg.m2) satisfied = false;
      if (b.labels[i2] == 0 && b.deltas[i2] > -cfg.m3) satisfied = false;
      for (std::size_t j = 0; j < b.deltas.size(); ++j)
        if (b.labels[i2] == 1 && b.labels[j] == 0 && b.deltas[i2] - b.deltas[j] < cfg.m1)
          satisfied = false;
    }
    EXPECT_EQ(ranking == 0.0, satisfied);
    zeros += satisfied;
  }
  EXPECT_GT(zeros, 50);
}

// Hinge monotonicity under scaling holds term by term only on the side of
// the kink the term already sits on, so each component is checked on the
// bundles where its arguments have the right sign.
TEST(LossProperties, ScaleResponse) {
  Rng rng(3);
  const LossConfig cfg;
  int ordered_seen = 0, crit_seen = 0, non_seen = 0;
  for (int i = 0; i < 4000; ++i) {
    auto b = random_bundle(rng, true);
    if (i % 2) {
      // Shift toward well-ordered bundles so every branch gets exercised.
      std::vector<double> d = b.deltas;
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = b.labels[k] ? std::abs(d[k]) + 0.2 : std::abs(d[k]) * 0.1;
      b = from_deltas(b.p0, d, b.labels);
    }
    const double c = rng.uniform(1.0, 4.0);
    std::vector<double> scaled;
    for (double d : b.deltas) scaled.push_back(c * d);
    const auto base = loss_clue_filled(b, cfg).breakdown;
    const auto big = loss_clue_filled(from_deltas(b.p0, scaled, b.labels), cfg).breakdown;

    bool ordered = true, crit_pos = true, non_pos = true;
    for (std::size_t k = 0; k < b.deltas.size(); ++k) {
      if (b.labels[k] == 1 && b.deltas[k] < 0) crit_pos = false;
      if (b.labels[k] == 0 && b.deltas[k] < 0) non_pos = false;
      for (std::size_t j = 0; j < b.deltas.size(); ++j)
        if (b.labels[k] == 1 && b.labels[j] == 0 && b.deltas[k] < b.deltas[j]) ordered = false;
    }
    if (ordered) {
      EXPECT_LE(big.ord, base.ord + 1e-12);
      ++ordered_seen;
    }
    if (crit_pos) {
      EXPECT_LE(big.crit, base.crit + 1e-12);
      ++crit_seen;
    }
    if (non_pos) {
      EXPECT_GE(big.non, base.non - 1e-12);
      ++non_seen;
    }
  }
  EXPECT_GT(ordered_seen, 500);
  EXPECT_GT(crit_seen, 500);
  EXPECT_GT(non_seen, 500);
}

TEST(LossProperties, ClueFreePermutationInvariant) {
  Rng rng(4);
  const LossConfig cfg;
  for (int i = 0; i < 500; ++i) {
    std::vector<double> p_minus;
    const std::size_t n = 1 + rng.uniform_index(8);
    for (std::size_t k = 0; k < n; ++k) p_minus.push_back(rng.uniform(-3, 3));
    const double p0 = rng.uniform(-3, 3);
    const double a = loss_clue_free(DeltaBundle::from_scores(p0, p_minus, std::vector<int>(n, 0)), cfg).total;
    rng.shuffle(p_minus);
    const double b = loss_clue_free(DeltaBundle::from_scores(p0, p_minus, std::vector<int>(n, 0)), cfg).total;
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(EvaluateLoss, DerivativesMatchFiniteDifferences) {
  Rng rng(5);
  const LossConfig cfg;
  for (int i = 0; i < 300; ++i) {
    const auto b = random_bundle(rng, false);
    const auto ev = evaluate_loss(b, cfg);
    EXPECT_EQ(ev.value.total,
              (has_positive(b) ? loss_clue_filled(b, cfg) : loss_clue_free(b, cfg)).total);
    const double h = 1e-6;
    auto total_at = [&](double p0, std::vector<double> pm) {
      return evaluate_loss(DeltaBundle::from_scores(p0, std::move(pm), b.labels), cfg).value.total;
    };
    const double num_p0 = (total_at(b.p0 + h, b.p_minus) - total_at(b.p0 - h, b.p_minus)) / (2 * h);
    EXPECT_NEAR(ev.d_p0, num_p0, 1e-5);
    for (std::size_t k = 0; k < b.p_minus.size(); ++k) {
      auto up = b.p_minus, down = b.p_minus;
      up[k] += h;
      down[k] -= h;
      EXPECT_NEAR(ev.d_p_minus[k], (total_at(b.p0, up) - total_at(b.p0, down)) / (2 * h), 1e-5);
    }
  }
}

TEST(LossConfig, Validation) {
  LossConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.m3 = 0.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.alpha = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.sample_m = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(SampleSentences, Examples) {
  LossConfig cfg;
  std::vector<int> labels(10, 0);
  labels[3] = 1;
  auto all = sample_sentences(labels, cfg, 1);
  EXPECT_EQ(all.size(), 10u);

  std::vector<int> big(80, 0);
  big[5] = big[40] = big[79] = 1;
  const auto s = sample_sentences(big, cfg, 9);
  EXPECT_EQ(s.size(), 50u);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 50u);
  for (std::size_t k : {5u, 40u, 79u}) EXPECT_TRUE(std::binary_search(s.begin(), s.end(), k));
  EXPECT_EQ(sample_sentences(big, cfg, 9), s);
  EXPECT_NE(sample_sentences(big, cfg, 10), s);

  cfg.sample_m = 2;
  try {
    sample_sentences(big, cfg, 1);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "sample cap below critical count");
  }
}

}  // namespace
}  // namespace looprune
