#include "looprune/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>

#include "looprune/parallel.hpp"
#include "looprune/text.hpp"

namespace looprune {
namespace {

bool is_ascii_punct(char c) {
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') ||
         (c >= '[' && c <= '`') || (c >= '{' && c <= '~');
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_ascii_space(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double token_f1(const std::vector<std::string>& pred,
                const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, long> counts;
  for (const auto& t : gold) ++counts[t];
  long common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(pred.size());
  const double r = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * p * r / (p + r);
}

PRF finish_prf(std::size_t tp, std::size_t fp, std::size_t fn) {
  PRF r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

// Precedence for grid points: higher F1, then smaller kept ratio, then
// smaller d_min, then smaller delta_min.
bool better(const GridPoint& a, const GridPoint& b) {
  if (a.prf.f1 != b.prf.f1) return a.prf.f1 > b.prf.f1;
  if (a.kept_ratio != b.kept_ratio) return a.kept_ratio < b.kept_ratio;
  if (a.d_min != b.d_min) return a.d_min < b.d_min;
  return a.delta_min < b.delta_min;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string stripped;
  stripped.reserve(text.size());
  for (char c : ascii_lower(text))
    if (!is_ascii_punct(c)) stripped.push_back(c);
  std::string out;
  for (const auto& tok : whitespace_tokens(stripped)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

QAMetrics em_f1(std::string_view prediction, const std::vector<std::string>& golds) {
  QAMetrics m;
  const std::string pred = normalize_answer(prediction);
  const auto pred_tokens = whitespace_tokens(pred);
  for (const auto& g : golds) {
    const std::string gold = normalize_answer(g);
    if (gold == pred) m.em = 1.0;
    m.f1 = std::max(m.f1, token_f1(pred_tokens, whitespace_tokens(gold)));
  }
  return m;
}

std::string containment_reader(std::string_view compressed_context,
                               const std::vector<std::string>& golds) {
  const auto context = whitespace_tokens(normalize_answer(compressed_context));
  for (const auto& g : golds) {
    const auto needle = whitespace_tokens(normalize_answer(g));
    if (needle.empty()) continue;
    auto it = std::search(context.begin(), context.end(), needle.begin(), needle.end());
    if (it != context.end()) return g;
  }
  return "";
}

void PRFCounter::add(const std::vector<bool>& predicted, const std::vector<int>& gold) {
  if (predicted.size() != gold.size())
    throw std::invalid_argument("prediction and label lengths differ");
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const bool g = gold[k] == 1;
    if (predicted[k] && g) ++tp_;
    else if (predicted[k]) ++fp_;
    else if (g) ++fn_;
  }
}

PRF PRFCounter::result() const { return finish_prf(tp_, fp_, fn_); }

PRF sentence_prf(const std::vector<std::vector<bool>>& predicted,
                 const std::vector<std::vector<int>>& gold) {
  if (predicted.size() != gold.size())
    throw std::invalid_argument("prediction and label set counts differ");
  PRFCounter c;
  for (std::size_t i = 0; i < gold.size(); ++i) c.add(predicted[i], gold[i]);
  return c.result();
}

std::string render_qa_prompt(std::string_view compressed_context,
                             std::string_view question) {
  std::string out = "Context information is:\n```";
  out += compressed_context;
  out +=
      "```\n\nGiven provided context (might not be sufficient for below query), "
      "answer the query without any explanation.\nQuery: `";
  out += question;
  out += "`\nAnswer (in plain text):";
  return out;
}

std::vector<double> make_grid(double lo, double hi, double step) {
  if (!(step > 0)) throw std::invalid_argument("grid step must be positive");
  if (hi < lo) throw std::invalid_argument("grid upper bound below lower bound");
  std::vector<double> grid;
  for (std::size_t i = 0;; ++i) {
    const double v = lo + static_cast<double>(i) * step;
    if (v > hi + 1e-9) break;
    grid.push_back(v);
  }
  return grid;
}

std::vector<double> parse_grid(std::string_view spec) {
  const auto c1 = spec.find(':');
  const auto c2 = c1 == std::string_view::npos ? c1 : spec.find(':', c1 + 1);
  if (c2 == std::string_view::npos)
    throw std::invalid_argument("grid must be lo:hi:step, got '" + std::string(spec) + "'");
  try {
    const double lo = std::stod(std::string(spec.substr(0, c1)));
    const double hi = std::stod(std::string(spec.substr(c1 + 1, c2 - c1 - 1)));
    const double step = std::stod(std::string(spec.substr(c2 + 1)));
    return make_grid(lo, hi, step);
  } catch (const std::logic_error& e) {
    throw std::invalid_argument("bad grid '" + std::string(spec) + "': " + e.what());
  }
}

std::vector<std::vector<LooScores>> score_questions(
    const std::vector<EvalQuestion>& questions, const Scorer& scorer,
    unsigned parallelism) {
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  std::vector<std::vector<LooScores>> out(questions.size());
  for (std::size_t q = 0; q < questions.size(); ++q) {
    out[q].resize(questions[q].passages.size());
    for (std::size_t p = 0; p < questions[q].passages.size(); ++p) jobs.push_back({q, p});
  }
  parallel_for(jobs.size(), parallelism, [&](std::size_t j) {
    const auto [q, p] = jobs[j];
    out[q][p] = loo_deltas(scorer, questions[q].question, questions[q].passages[p]);
  });
  return out;
}

PRF classification_prf(const std::vector<EvalQuestion>& questions,
                       const std::vector<std::vector<LooScores>>& scores,
                       const InferenceConfig& cfg) {
  PRFCounter counter;
  for (std::size_t q = 0; q < questions.size(); ++q) {
    for (std::size_t p = 0; p < questions[q].passages.size(); ++p) {
      const Passage& passage = questions[q].passages[p];
      if (!passage.labels) throw std::invalid_argument("passage without labels");
      counter.add(classify_passage(scores[q][p], cfg), *passage.labels);
    }
  }
  return counter.result();
}

GridSearchResult grid_search(const std::vector<EvalQuestion>& dev,
                             const Scorer& scorer,
                             const std::vector<double>& d_min_grid,
                             const std::vector<double>& delta_min_grid,
                             unsigned parallelism, const TokenCounter& counter) {
  if (d_min_grid.empty() || delta_min_grid.empty())
    throw std::invalid_argument("empty grid");
  const auto scores = score_questions(dev, scorer, parallelism);

  std::size_t original_tokens = 0;
  std::vector<std::vector<std::vector<std::size_t>>> token_counts(dev.size());
  for (std::size_t q = 0; q < dev.size(); ++q) {
    for (const auto& p : dev[q].passages) {
      std::vector<std::size_t> counts;
      for (const auto& s : p.sentences) {
        counts.push_back(counter.count(s.text));
        original_tokens += counts.back();
      }
      token_counts[q].push_back(std::move(counts));
    }
  }

  GridSearchResult result;
  for (double d_min : d_min_grid) {
    for (double delta_min : delta_min_grid) {
      InferenceConfig cfg{d_min, delta_min};
      cfg.validate();
      GridPoint point{d_min, delta_min, {}, 0.0};
      PRFCounter prf;
      std::size_t kept_tokens = 0;
      for (std::size_t q = 0; q < dev.size(); ++q) {
        for (std::size_t p = 0; p < dev[q].passages.size(); ++p) {
          const Passage& passage = dev[q].passages[p];
          if (!passage.labels) throw std::invalid_argument("passage without labels");
          const auto critical = classify_passage(scores[q][p], cfg);
          prf.add(critical, *passage.labels);
          for (std::size_t k = 0; k < critical.size(); ++k)
            if (critical[k]) kept_tokens += token_counts[q][p][k];
        }
      }
      point.prf = prf.result();
      point.kept_ratio = original_tokens ? static_cast<double>(kept_tokens) /
                                               static_cast<double>(original_tokens)
                                         : 0.0;
      result.surface.push_back(point);
      if (result.surface.size() == 1 || better(point, result.best)) result.best = point;
    }
  }
  return result;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(values.size())));
  return values[rank == 0 ? 0 : rank - 1];
}

LatencyStats bench(const std::vector<EvalQuestion>& questions, const Scorer& scorer,
                   const InferenceConfig& cfg, std::size_t repetitions,
                   unsigned parallelism) {
  if (repetitions == 0) throw std::invalid_argument("repetitions must be positive");
  LatencyStats stats;
  stats.questions = questions.size();
  stats.repetitions = repetitions;
  stats.per_question.assign(questions.size(), 0.0);
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (std::size_t q = 0; q < questions.size(); ++q) {
      const auto start = std::chrono::steady_clock::now();
      prune(scorer, questions[q].question, questions[q].passages, cfg, parallelism);
      stats.per_question[q] +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  }
  double sum = 0.0;
  for (double& v : stats.per_question) {
    v /= static_cast<double>(repetitions);
    sum += v;
  }
  if (!questions.empty()) stats.mean = sum / static_cast<double>(questions.size());
  stats.p50 = percentile(stats.per_question, 0.50);
  stats.p95 = percentile(stats.per_question, 0.95);
  return stats;
}

}  // namespace looprune
