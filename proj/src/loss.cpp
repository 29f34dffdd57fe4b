#include "looprune/loss.hpp"

#include <algorithm>
#include <cmath>

#include "looprune/rng.hpp"

namespace looprune {
namespace {

void check_bundle(const DeltaBundle& b) {
  if (b.p_minus.size() != b.deltas.size() || b.labels.size() != b.deltas.size())
    throw std::invalid_argument("delta bundle fields differ in length");
}

bool any_positive(const std::vector<int>& labels) {
  return std::any_of(labels.begin(), labels.end(), [](int y) { return y == 1; });
}

}  // namespace

void LossConfig::validate() const {
  if (!(m1 > 0 && m2 > 0 && m3 > 0))
    throw std::invalid_argument("margins must be positive");
  if (!(m3 < std::min(m1, m2)))
    throw std::invalid_argument("m3 must be smaller than m1 and m2");
  if (alpha < 0 || beta < 0 || gamma < 0 || lambda < 0)
    throw std::invalid_argument("loss weights must be non-negative");
  if (!(bce_pos_weight > 0))
    throw std::invalid_argument("bce_pos_weight must be positive");
  if (sample_m < 1) throw std::invalid_argument("sample_m must be at least 1");
}

DeltaBundle DeltaBundle::from_scores(double p0, std::vector<double> p_minus,
                                     std::vector<int> labels) {
  DeltaBundle b;
  b.p0 = p0;
  b.deltas.reserve(p_minus.size());
  for (double p : p_minus) b.deltas.push_back(p0 - p);
  b.p_minus = std::move(p_minus);
  b.labels = std::move(labels);
  check_bundle(b);
  return b;
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bce(double logit, int target, double pos_weight) {
  // -log(sigmoid(x)) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x).
  return target == 1 ? pos_weight * softplus(-logit) : softplus(logit);
}

LossEvaluation evaluate_loss(const DeltaBundle& bundle, const LossConfig& cfg) {
  check_bundle(bundle);
  const std::size_t n = bundle.deltas.size();
  const auto& delta = bundle.deltas;
  const auto& y = bundle.labels;

  LossEvaluation ev;
  ev.clue_filled = any_positive(y);
  std::vector<double> d_delta(n, 0.0);
  LossBreakdown& br = ev.value.breakdown;

  if (ev.clue_filled) {
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] != 1) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (y[j] == 1) continue;
        const double slack = cfg.m1 - (delta[i] - delta[j]);
        if (slack > 0) {
          br.ord += slack;
          d_delta[i] -= cfg.alpha;
          d_delta[j] += cfg.alpha;
        }
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (y[k] == 1) {
        const double slack = cfg.m2 - delta[k];
        if (slack > 0) {
          br.crit += slack;
          d_delta[k] -= cfg.beta;
        }
      } else {
        const double slack = delta[k] + cfg.m3;
        if (slack > 0) {
          br.non += slack;
          d_delta[k] += cfg.gamma;
        }
      }
    }
    br.bce = bce(bundle.p0, 1, cfg.bce_pos_weight);
    ev.d_p0 = -cfg.lambda * cfg.bce_pos_weight * sigmoid(-bundle.p0);
    ev.value.total = cfg.alpha * br.ord + cfg.beta * br.crit +
                     cfg.gamma * br.non + cfg.lambda * br.bce;
    ev.d_p_minus.assign(n, 0.0);
  } else {
    br.bce = bce(bundle.p0, 0, cfg.bce_pos_weight);
    ev.d_p0 = cfg.lambda * sigmoid(bundle.p0);
    ev.d_p_minus.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      br.bce += bce(bundle.p_minus[k], 0, cfg.bce_pos_weight);
      ev.d_p_minus[k] = cfg.lambda * sigmoid(bundle.p_minus[k]);
      const double slack = std::abs(delta[k]) - cfg.m3;
      if (slack > 0) {
        br.non += slack;
        d_delta[k] += cfg.gamma * (delta[k] > 0 ? 1.0 : -1.0);
      }
    }
    ev.value.total = cfg.lambda * br.bce + cfg.gamma * br.non;
  }

  // delta_k = p0 - p_minus[k]
  for (std::size_t k = 0; k < n; ++k) {
    ev.d_p0 += d_delta[k];
    ev.d_p_minus[k] -= d_delta[k];
  }
  return ev;
}

LossValue loss_clue_filled(const DeltaBundle& bundle, const LossConfig& cfg) {
  if (!any_positive(bundle.labels))
    throw LossRoutingError("clue-free passage routed to clue-filled loss");
  return evaluate_loss(bundle, cfg).value;
}

LossValue loss_clue_free(const DeltaBundle& bundle, const LossConfig& cfg) {
  if (any_positive(bundle.labels))
    throw LossRoutingError("clue-filled passage routed to clue-free loss");
  return evaluate_loss(bundle, cfg).value;
}

std::vector<std::size_t> sample_sentences(const std::vector<int>& labels,
                                          const LossConfig& cfg,
                                          std::uint64_t seed) {
  const std::size_t n = labels.size();
  std::vector<std::size_t> critical, other;
  for (std::size_t k = 0; k < n; ++k) (labels[k] == 1 ? critical : other).push_back(k);
  if (critical.size() > cfg.sample_m)
    throw std::invalid_argument("sample cap below critical count");

  std::vector<std::size_t> out;
  if (n <= cfg.sample_m) {
    out.resize(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = k;
    return out;
  }
  Rng rng(seed);
  rng.shuffle(other);
  other.resize(cfg.sample_m - critical.size());
  out = std::move(critical);
  out.insert(out.end(), other.begin(), other.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> sample_sentences(const Passage& passage,
                                          const LossConfig& cfg,
                                          std::uint64_t seed) {
  std::vector<int> labels = passage.labels.value_or(std::vector<int>(passage.size(), 0));
  return sample_sentences(labels, cfg, seed);
}

}  // namespace looprune
