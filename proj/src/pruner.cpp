#include "looprune/pruner.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include "looprune/loss.hpp"
#include "looprune/parallel.hpp"

namespace looprune {
namespace {

std::vector<ScorerInput> loo_inputs(std::string_view query, const Passage& passage) {
  const std::size_t n = passage.size();
  std::vector<ScorerInput> inputs(n + 1);
  for (auto& in : inputs) in.query = query;
  for (const auto& s : passage.sentences) inputs[0].sentences.push_back(s.text);
  for (std::size_t k = 0; k < n; ++k) {
    auto& v = inputs[k + 1].sentences;
    v.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != k) v.push_back(passage.sentences[j].text);
  }
  return inputs;
}

}  // namespace

void InferenceConfig::validate() const {
  if (!(d_min > 0.0 && d_min < 1.0))
    throw std::invalid_argument("d_min must lie in (0, 1)");
  if (!(delta_min > 0.0)) throw std::invalid_argument("delta_min must be positive");
}

LooScores loo_deltas(const Scorer& scorer, std::string_view query,
                     const Passage& passage, unsigned parallelism) {
  if (passage.sentences.empty())
    throw std::invalid_argument("passage has no sentences");
  const auto inputs = loo_inputs(query, passage);
  std::vector<double> scores;
  try {
    scores = score_batch(scorer, inputs, parallelism);
  } catch (const ScoringError& e) {
    // Input 0 is the full context; input k + 1 is variant k.
    if (e.index() == 0) throw ScoringError(0, std::string("full context: ") + e.what());
    throw ScoringError(e.index() - 1,
                       "variant without sentence " + std::to_string(e.index() - 1) +
                           ": " + e.what());
  }
  LooScores out;
  out.p0 = scores[0];
  out.p_minus.assign(scores.begin() + 1, scores.end());
  out.deltas.reserve(out.p_minus.size());
  for (double p : out.p_minus) out.deltas.push_back(out.p0 - p);
  return out;
}

GateDecision passage_gate(double p0, const InferenceConfig& cfg) {
  return sigmoid(p0) < cfg.d_min ? GateDecision::kPruneAll : GateDecision::kKeep;
}

Selection adaptive_select(const std::vector<double>& deltas,
                          const InferenceConfig& cfg) {
  Selection sel;
  sel.critical.assign(deltas.size(), false);

  std::vector<double> significant;
  for (double d : deltas)
    if (d > cfg.delta_min) significant.push_back(d);
  if (significant.empty()) return sel;

  std::sort(significant.begin(), significant.end(), std::greater<>());
  double tau = cfg.delta_min;
  if (significant.size() > 1) {
    std::size_t best = 0;
    double best_gap = significant[0] - significant[1];
    for (std::size_t i = 1; i + 1 < significant.size(); ++i) {
      const double gap = significant[i] - significant[i + 1];
      if (gap > best_gap) {
        best_gap = gap;
        best = i;
      }
    }
    // All gaps zero means no gap structure; fall back to delta_min.
    if (best_gap > 0.0) tau = std::max(cfg.delta_min, significant[best + 1]);
  }
  sel.tau = tau;
  for (std::size_t k = 0; k < deltas.size(); ++k) sel.critical[k] = deltas[k] > tau;
  return sel;
}

std::vector<bool> classify_passage(const LooScores& scores,
                                   const InferenceConfig& cfg) {
  if (passage_gate(scores.p0, cfg) == GateDecision::kPruneAll)
    return std::vector<bool>(scores.deltas.size(), false);
  return adaptive_select(scores.deltas, cfg).critical;
}

std::string render_compressed(const std::vector<Passage>& passages,
                              const std::vector<KeptSentence>& kept) {
  std::string out;
  std::size_t current = passages.size();
  for (const auto& k : kept) {
    const std::string_view text = trim(passages.at(k.passage).sentences.at(k.sentence).text);
    if (!out.empty()) out += (k.passage == current) ? " " : "\n";
    out += text;
    current = k.passage;
  }
  return out;
}

double compression_ratio(const std::vector<Passage>& passages,
                         const std::vector<KeptSentence>& kept,
                         const TokenCounter& counter) {
  std::size_t original = 0;
  for (const auto& p : passages)
    for (const auto& s : p.sentences) original += counter.count(s.text);
  if (original == 0) return 0.0;
  std::size_t compressed = 0;
  for (const auto& k : kept)
    compressed += counter.count(passages.at(k.passage).sentences.at(k.sentence).text);
  return static_cast<double>(compressed) / static_cast<double>(original);
}

CompressionResult prune(const Scorer& scorer, std::string_view query,
                        const std::vector<Passage>& passages,
                        const InferenceConfig& cfg, unsigned parallelism,
                        const TokenCounter& counter) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  CompressionResult result;
  result.passages.resize(passages.size());
  std::vector<std::vector<bool>> critical(passages.size());

  // Full-context scores first, so gated passages skip their n variants.
  std::vector<ScorerInput> full(passages.size());
  for (std::size_t i = 0; i < passages.size(); ++i) {
    full[i].query = query;
    for (const auto& s : passages[i].sentences) full[i].sentences.push_back(s.text);
  }
  const std::vector<double> p0 = score_batch(scorer, full, parallelism);

  parallel_for(passages.size(), parallelism, [&](std::size_t i) {
    PassageDiagnostics& diag = result.passages[i];
    diag.p0 = p0[i];
    const std::size_t n = passages[i].size();
    if (passage_gate(p0[i], cfg) == GateDecision::kPruneAll) {
      diag.gated = true;
      critical[i].assign(n, false);
      return;
    }
    std::vector<ScorerInput> variants = loo_inputs(query, passages[i]);
    variants.erase(variants.begin());
    const std::vector<double> p_minus = score_batch(scorer, variants, 1);
    diag.deltas.reserve(n);
    for (double p : p_minus) diag.deltas.push_back(p0[i] - p);
    Selection sel = adaptive_select(diag.deltas, cfg);
    diag.tau = sel.tau;
    critical[i] = std::move(sel.critical);
  });

  for (std::size_t i = 0; i < passages.size(); ++i)
    for (std::size_t k = 0; k < critical[i].size(); ++k)
      if (critical[i][k]) result.kept.push_back({i, k});

  result.compressed_text = render_compressed(passages, result.kept);
  result.ratio = compression_ratio(passages, result.kept, counter);
  result.latency_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace looprune
