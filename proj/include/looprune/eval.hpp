#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "looprune/pruner.hpp"
#include "looprune/scorer.hpp"
#include "looprune/segmenter.hpp"

namespace looprune {

struct QAMetrics {
  double em = 0.0;
  double f1 = 0.0;
};

// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse
// whitespace.
std::string normalize_answer(std::string_view text);

// EM against any gold; F1 is the best token-multiset F1 over golds. Two
// empty normalized strings score (1, 1). No golds scores (0, 0).
QAMetrics em_f1(std::string_view prediction, const std::vector<std::string>& golds);

// Stand-in reader: the first gold whose normalized tokens occur as a
// contiguous run in the normalized context, else "".
std::string containment_reader(std::string_view compressed_context,
                               const std::vector<std::string>& golds);

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

// Micro-averaged over all sentences. Precision is 0 without predictions,
// recall is 0 without gold positives.
PRF sentence_prf(const std::vector<std::vector<bool>>& predicted,
                 const std::vector<std::vector<int>>& gold);

// Accumulating form of sentence_prf.
class PRFCounter {
 public:
  void add(const std::vector<bool>& predicted, const std::vector<int>& gold);
  PRF result() const;

 private:
  std::size_t tp_ = 0, fp_ = 0, fn_ = 0;
};

// The reader prompt used when exporting compressed contexts.
std::string render_qa_prompt(std::string_view compressed_context,
                             std::string_view question);

// A labeled question for tuning and evaluation.
struct EvalQuestion {
  std::string id;
  std::string question;
  std::vector<Passage> passages;  // labels required for grid search
  std::vector<std::string> answers;
};

struct GridPoint {
  double d_min = 0.0;
  double delta_min = 0.0;
  PRF prf;
  double kept_ratio = 0.0;  // token compression ratio over the dev set
};

struct GridSearchResult {
  GridPoint best;
  std::vector<GridPoint> surface;  // d_min-major order
};

// Inclusive arithmetic grid lo, lo + step, ... <= hi (with 1e-9 slack).
std::vector<double> parse_grid(std::string_view spec);
std::vector<double> make_grid(double lo, double hi, double step);

// Exhaustive search maximizing sentence F1; ties go to the smaller kept
// ratio, then smaller d_min, then smaller delta_min. Scores each passage
// once and re-thresholds for every grid point.
GridSearchResult grid_search(const std::vector<EvalQuestion>& dev,
                             const Scorer& scorer,
                             const std::vector<double>& d_min_grid,
                             const std::vector<double>& delta_min_grid,
                             unsigned parallelism = 1,
                             const TokenCounter& counter = default_token_counter());

// Scores every passage of every question (n + 1 calls each).
std::vector<std::vector<LooScores>> score_questions(
    const std::vector<EvalQuestion>& questions, const Scorer& scorer,
    unsigned parallelism = 1);

// Sentence PRF of the given configuration on precomputed scores.
PRF classification_prf(const std::vector<EvalQuestion>& questions,
                       const std::vector<std::vector<LooScores>>& scores,
                       const InferenceConfig& cfg);

struct LatencyStats {
  double mean = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
  std::size_t questions = 0;
  std::size_t repetitions = 0;
  std::vector<double> per_question;  // mean over repetitions
};

// Nearest-rank percentile of an unsorted sample, q in [0, 1].
double percentile(std::vector<double> values, double q);

// End-to-end prune wall-clock per question, averaged over repetitions.
LatencyStats bench(const std::vector<EvalQuestion>& questions, const Scorer& scorer,
                   const InferenceConfig& cfg, std::size_t repetitions = 3,
                   unsigned parallelism = 1);

}  // namespace looprune
