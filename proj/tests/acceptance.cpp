// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "looprune/commands.hpp"
#include "looprune/config.hpp"
#include "looprune/dataset.hpp"
#include "looprune/eval.hpp"
#include "looprune/loss.hpp"
#include "looprune/pruner.hpp"
#include "looprune/rng.hpp"
#include "looprune/synth.hpp"
#include "looprune/trainer.hpp"
#include "support.hpp"

namespace lp = looprune;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "looprune");
  std::ostringstream o, e;
  const int code = lp::run_cli(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::fprintf(stderr, "looprune %s failed: %s\n", args[1].c_str(), e.str().c_str());
  return code;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto start = Clock::now();
  const auto r = lp::run_gradient_check_suite(20240601, 100, {1e-4, 1e-5});
  const double secs = seconds_since(start);
  const bool ok = r.samples == 100 && r.max_rel_err[0] < 1e-3 && r.max_rel_err[1] < 1e-6 &&
                  secs < 120.0;
  return {ok, "samples=" + std::to_string(r.samples) + " err(h=1e-4)=" +
                  fmt("%.3g", r.max_rel_err[0]) + " err(h=1e-5)=" + fmt("%.3g", r.max_rel_err[1]) +
                  " skipped_near_kink=" + std::to_string(r.rejected_near_kink) +
                  " time=" + fmt("%.1fs", secs)};
}

Outcome loss_arithmetic() {
  const lp::LossConfig cfg;
  using lp::DeltaBundle;
  // Clue-filled: all hinges slack; all hinges active; crit hinge at its kink.
  const double slack = lp::loss_clue_filled(DeltaBundle::from_scores(10, {9.5, 10.1}, {1, 0}), cfg).total;
  const auto active = lp::loss_clue_filled(DeltaBundle::from_scores(0, {-0.2, -0.1}, {1, 0}), cfg);
  const auto kink = lp::loss_clue_filled(DeltaBundle::from_scores(50, {49.65}, {1}), cfg);
  // Clue-free: saturated negatives; single sentence at zero logits.
  const double sat = lp::loss_clue_free(DeltaBundle::from_scores(-10, {-10, -10}, {0, 0}), cfg).total;
  const double zero = lp::loss_clue_free(DeltaBundle::from_scores(0, {0}, {0}), cfg).total;

  const double ln2 = std::log(2.0);
  const double active_expected = 1.5 * 0.25 + 1.25 * 0.15 + 0.135 + 0.75 * 5 * ln2;
  double worst = 0.0;
  auto check = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  check(slack, 0.75 * 5 * std::log1p(std::exp(-10.0)));
  check(active.total, active_expected);
  check(active.breakdown.ord, 0.25);
  check(active.breakdown.crit, 0.15);
  check(active.breakdown.non, 0.135);
  check(kink.breakdown.ord, 0.0);
  check(kink.breakdown.crit, 0.0);
  check(sat, 0.75 * 3 * std::log1p(std::exp(-10.0)));
  check(zero, 0.75 * 2 * ln2);
  return {worst < 1e-6, "max_abs_err=" + fmt("%.3g", worst) + " active_total=" +
                            fmt("%.7f", active.total)};
}

// Written without reference to the library implementation: enumerate the
// candidate cut points directly on the unsorted input.
struct NaiveSelection {
  bool has_tau = false;
  double tau = 0.0;
  std::vector<bool> keep;
};

NaiveSelection naive_select(const std::vector<double>& d, double delta_min) {
  NaiveSelection s;
  s.keep.assign(d.size(), false);
  std::vector<double> sig;
  for (double x : d)
    if (x > delta_min) sig.push_back(x);
  if (sig.empty()) return s;
  std::sort(sig.begin(), sig.end(), std::greater<>());
  s.has_tau = true;
  double best_gap = 0.0;
  std::size_t cut = sig.size();  // "no cut": keep every significant value
  for (std::size_t i = 0; i + 1 < sig.size(); ++i) {
    const double g = sig[i] - sig[i + 1];
    if (g > best_gap) {
      best_gap = g;
      cut = i;
    }
  }
  s.tau = cut == sig.size() ? delta_min : std::max(delta_min, sig[cut + 1]);
  for (std::size_t k = 0; k < d.size(); ++k) s.keep[k] = d[k] > s.tau;
  return s;
}

std::vector<double> random_deltas(lp::Rng& rng, std::size_t n, int flavor) {
  std::vector<double> d(n);
  switch (flavor) {
    case 0:  // continuous
      for (double& x : d) x = rng.normal() * 0.3;
      break;
    case 1:  // coarse grid, lots of exact ties
      for (double& x : d) x = 0.05 * static_cast<double>(rng.uniform_index(9)) - 0.1;
      break;
    case 2: {  // all equal
      const double v = rng.uniform(-0.2, 0.8);
      std::fill(d.begin(), d.end(), v);
      break;
    }
    case 3:  // all at or below delta_min
      for (double& x : d) x = rng.uniform(-1.0, 0.01);
      break;
    default:  // a few large spikes over noise
      for (double& x : d) x = rng.uniform(-0.05, 0.05);
      for (std::size_t i = 0; i < 1 + n / 10; ++i) d[rng.uniform_index(n)] = rng.uniform(0.3, 2.0);
  }
  return d;
}

Outcome selection_oracle() {
  lp::Rng rng(99);
  const std::vector<double> mins = {0.005, 0.01, 0.02, 0.05, 0.1};
  std::size_t mismatches = 0, all_tie = 0, all_below = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t n = 1 + rng.uniform_index(50);
    const int flavor = static_cast<int>(rng.uniform_index(5));
    const auto d = random_deltas(rng, n, flavor);
    lp::InferenceConfig cfg;
    cfg.delta_min = mins[rng.uniform_index(mins.size())];
    const auto got = lp::adaptive_select(d, cfg);
    const auto want = naive_select(d, cfg.delta_min);
    all_tie += flavor == 2;
    all_below += !want.has_tau;
    const bool same = got.tau.has_value() == want.has_tau && (!want.has_tau || *got.tau == want.tau) &&
                      got.critical == want.keep;
    mismatches += !same;
  }
  return {mismatches == 0 && all_tie > 0 && all_below > 0,
          "vectors=10000 mismatches=" + std::to_string(mismatches) + " all_tie=" +
              std::to_string(all_tie) + " none_significant=" + std::to_string(all_below)};
}

Outcome monotonicity() {
  lp::Rng rng(1234);
  const std::vector<double> grid = {0.005, 0.01, 0.02, 0.05, 0.1};
  std::size_t violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto d = random_deltas(rng, 1 + rng.uniform_index(50), static_cast<int>(rng.uniform_index(5)));
    std::vector<bool> prev;
    for (double m : grid) {
      lp::InferenceConfig cfg;
      cfg.delta_min = m;
      const auto cur = lp::adaptive_select(d, cfg).critical;
      if (!prev.empty())
        for (std::size_t k = 0; k < d.size(); ++k) violations += cur[k] && !prev[k];
      prev = cur;
    }
  }
  return {violations == 0, "vectors=1000 violations=" + std::to_string(violations)};
}

lp::SynthSpec big_spec() {
  lp::SynthSpec s;
  s.n_questions = 500;
  s.passages_per_question = 10;
  s.min_sentences = s.max_sentences = 10;
  s.min_clues = 1;
  s.max_clues = 2;
  s.seed = 5;
  return s;
}

Outcome synthetic_lexical() {
  const auto data = lp::generate(big_spec());
  const lp::LexicalScorer scorer(lp::idf_from_records(data.records));
  const lp::InferenceConfig cfg;
  std::size_t clues = 0, found = 0;
  double ratio = 0.0;
  for (const auto& rec : data.records) {
    const auto res = lp::prune(scorer, rec.question, rec.passages, cfg);
    ratio += res.ratio;
    for (std::size_t p = 0; p < rec.passages.size(); ++p)
      for (std::size_t s = 0; s < rec.passages[p].size(); ++s)
        if ((*rec.passages[p].labels)[s]) {
          ++clues;
          found += std::binary_search(res.kept.begin(), res.kept.end(), lp::KeptSentence{p, s});
        }
  }
  const double recall = static_cast<double>(found) / static_cast<double>(clues);
  ratio /= static_cast<double>(data.records.size());
  return {recall >= 0.99 && ratio <= 0.25,
          "questions=500 clue_recall=" + fmt("%.4f", recall) + " mean_ratio=" + fmt("%.4f", ratio)};
}

// Trains one variant through the CLI and returns held-out sentence F1 with
// d_min and delta_min tuned on dev.
double toy_variant(const std::filesystem::path& dir, const std::string& name,
                   const std::string& loss_json, const std::vector<lp::DatasetRecord>& dev,
                   const std::vector<lp::DatasetRecord>& test, std::string& note) {
  const auto cfg_path = dir / (name + ".json");
  lp::testing::write_file(cfg_path, R"({"loss": )" + loss_json + R"(, "train": )"
                                    R"({"learning_rate": 0.3, "epochs": 8, "batch_size": 4,)"
                                    R"( "grad_accum_steps": 1, "warmup_steps": 50, "weight_decay": 0.0}})");
  const auto model = dir / (name + ".bin");
  if (run_cli({"train", "--train", (dir / "train.jsonl").string(), "--config", cfg_path.string(),
               "--out", model.string()}) != 0)
    return -1.0;
  const lp::NeuralScorer scorer(lp::load_params(model.string()));
  const auto tuned = lp::grid_search(dev, scorer, lp::parse_grid("0.02:0.5:0.02"),
                                     lp::parse_grid("0.005:0.2:0.005"));
  lp::InferenceConfig best;
  best.d_min = tuned.best.d_min;
  best.delta_min = tuned.best.delta_min;
  const double f1 = lp::classification_prf(test, lp::score_questions(test, scorer), best).f1;
  note += " " + name + "=" + fmt("%.3f", f1);
  return f1;
}

Outcome toy_training() {
  const auto start = Clock::now();
  const auto dir = lp::testing::temp_dir("acceptance_toy");
  lp::SynthSpec spec;
  spec.n_questions = 400;
  spec.seed = 11;
  const auto all = lp::generate(spec).records;
  const std::vector<lp::DatasetRecord> train(all.begin(), all.begin() + 200);
  const std::vector<lp::DatasetRecord> dev(all.begin() + 200, all.begin() + 300);
  const std::vector<lp::DatasetRecord> test(all.begin() + 300, all.end());
  lp::write_dataset((dir / "train.jsonl").string(), train);

  std::string note;
  const double full = toy_variant(dir, "full", "{}", dev, test, note);
  const double no_crit = toy_variant(dir, "no_crit", R"({"beta": 0})", dev, test, note);
  const double no_bce_crit = toy_variant(dir, "no_bce_crit", R"({"beta": 0, "lambda": 0})", dev, test, note);
  const double secs = seconds_since(start);
  const bool ok = full >= 0.90 && full >= no_crit && no_crit >= no_bce_crit && secs < 600.0;
  return {ok, "held-out F1:" + note + " time=" + fmt("%.0fs", secs)};
}

Outcome determinism() {
  const auto dir = lp::testing::temp_dir("acceptance_det");
  lp::write_dataset((dir / "in.jsonl").string(), lp::generate(big_spec()).records);
  for (const char* par : {"1", "8"})
    if (run_cli({"prune", "--input", (dir / "in.jsonl").string(), "--output",
                 (dir / (std::string("p") + par + ".jsonl")).string(), "--no-latency",
                 "--parallelism", par}) != 0)
      return {false, "prune failed"};
  const auto a = lp::testing::slurp(dir / "p1.jsonl");
  const auto b = lp::testing::slurp(dir / "p8.jsonl");
  return {!a.empty() && a == b, "bytes=" + std::to_string(a.size()) +
                                    (a == b ? " identical" : " DIFFERENT")};
}

Outcome calls_and_scaling() {
  // Call counts with a random scorer biased so that the gate closes on a
  // good share of passages.
  lp::SynthSpec spec = big_spec();
  spec.n_questions = 50;
  spec.min_sentences = 3;
  spec.max_sentences = 15;
  const auto data = lp::generate(spec);
  auto wild_params = lp::ScorerParams::random(lp::ScorerDims{32, 4, 4096}, 8, 3.0);
  wild_params.bias = -2.0;
  const lp::NeuralScorer wild(std::move(wild_params));
  lp::testing::CountingScorer counter(wild);
  std::size_t bad = 0, ungated = 0, gated = 0;
  for (const auto& rec : data.records) {
    for (const auto& p : rec.passages) {
      counter.reset();
      const auto res = lp::prune(counter, rec.question, {p}, lp::InferenceConfig{});
      const bool g = res.passages[0].gated;
      gated += g;
      ungated += !g;
      bad += counter.calls() != (g ? 1 : p.size() + 1);
    }
  }

  // Latency versus passage count with a serial neural scorer.
  lp::SynthSpec lat_spec;
  lat_spec.n_questions = 1;
  lat_spec.passages_per_question = 30;
  lat_spec.min_sentence_words = lat_spec.max_sentence_words = 9;  // equal-sized passages
  lat_spec.seed = 3;
  const auto rec = lp::generate(lat_spec).records[0];
  const lp::NeuralScorer neural(lp::ScorerParams::random(lp::ScorerDims{}, 17, 0.1));
  lp::InferenceConfig cfg;
  cfg.d_min = 1e-9;  // never gate, so every passage costs n + 1 calls
  // Sizes are interleaved at the level of single prune calls so that slow
  // phases of a shared machine land on every size in proportion to its work.
  const std::vector<std::size_t> sizes = {5, 10, 20, 30};
  std::vector<std::vector<lp::Passage>> inputs;
  for (std::size_t k : sizes) inputs.emplace_back(rec.passages.begin(), rec.passages.begin() + k);
  std::vector<double> mean_t(sizes.size(), 0.0);
  constexpr int kRounds = 60;
  for (int r = 0; r < kRounds; ++r) {
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const auto t0 = Clock::now();
      lp::prune(neural, rec.question, inputs[i], cfg, 1);
      mean_t[i] += seconds_since(t0) / kRounds;
    }
  }
  const double base = mean_t[0] / 5.0;
  double worst = 0.0;
  std::string curve;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    worst = std::max(worst, (mean_t[i] / static_cast<double>(sizes[i])) / base);
    curve += " t(" + std::to_string(sizes[i]) + ")=" + fmt("%.4fs", mean_t[i]);
  }
  return {bad == 0 && ungated > 0 && gated > 0 && worst <= 1.2,
          "ungated=" + std::to_string(ungated) + " gated=" + std::to_string(gated) +
              " count_mismatches=" + std::to_string(bad) +
              curve + " worst_per_passage_vs_k5=" + fmt("%.3f", worst)};
}

Outcome metrics_harness() {
  bool ok = true;
  auto em_f1_is = [&](const std::string& pred, std::vector<std::string> golds, double em, double f1) {
    const auto m = lp::em_f1(pred, golds);
    ok = ok && m.em == em && std::abs(m.f1 - f1) < 1e-12;
  };
  em_f1_is("Paris", {"paris"}, 1.0, 1.0);
  em_f1_is("in Paris France", {"Paris"}, 0.0, 0.5);
  em_f1_is("", {"x"}, 0.0, 0.0);
  em_f1_is("", {""}, 1.0, 1.0);
  ok = ok && lp::normalize_answer("The Eiffel Tower!") == "eiffel tower";

  const auto rec = lp::generate(big_spec()).records[0];
  std::vector<lp::KeptSentence> all;
  for (std::size_t p = 0; p < rec.passages.size(); ++p)
    for (std::size_t s = 0; s < rec.passages[p].size(); ++s) all.push_back({p, s});
  const double identity = lp::compression_ratio(rec.passages, all);
  const double empty = lp::compression_ratio(rec.passages, {});
  ok = ok && identity == 1.0 && empty == 0.0;
  return {ok, "em_f1 cases ok=" + std::string(ok ? "yes" : "no") + " identity_ratio=" +
                  fmt("%.3f", identity) + " empty_ratio=" + fmt("%.3f", empty)};
}

Outcome config_fidelity() {
  const lp::PipelineConfig c;
  const auto& l = c.loss;
  const auto& t = c.train;
  const auto& a = c.augment;
  const bool ok = l.m1 == 0.35 && l.m2 == 0.35 && l.m3 == 0.035 && l.alpha == 1.5 &&
                  l.beta == 1.25 && l.gamma == 1.0 && l.lambda == 0.75 &&
                  l.bce_pos_weight == 5.0 && l.sample_m == 50 && c.inference.d_min == 0.12 &&
                  c.inference.delta_min == 0.01 && t.learning_rate == 7e-5 &&
                  t.weight_decay == 0.02 && t.epochs == 6 && t.batch_size == 4 &&
                  t.grad_accum_steps == 8 && t.warmup_steps == 200 &&
                  a.p_drop_extra_crit == 0.10 && a.p_drop_extra_noncrit == 0.10 &&
                  a.p_insert_punct == 0.20 && a.p_add_affix == 0.05 &&
                  lp::parse_config("{}") == c && lp::parse_config(lp::dump_config(c)) == c;
  return {ok, "defaults " + std::string(ok ? "match" : "differ") + " (config_hash=" +
                  lp::config_hash(c) + ")"};
}

}  // namespace

// Optional arguments restrict the run to the named criteria.
int main(int argc, char** argv) {
  const std::vector<std::string> only(argv + 1, argv + argc);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient-oracle", gradient_oracle},
      {"loss-arithmetic", loss_arithmetic},
      {"selection-oracle", selection_oracle},
      {"selection-monotonicity", monotonicity},
      {"synthetic-lexical", synthetic_lexical},
      {"toy-training", toy_training},
      {"parallel-determinism", determinism},
      {"call-count-and-scaling", calls_and_scaling},
      {"metrics-harness", metrics_harness},
      {"config-fidelity", config_fidelity},
  };
  int failed = 0;
  std::size_t ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && std::find(only.begin(), only.end(), criteria[i].first) == only.end())
      continue;
    ++ran;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %-24s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  if (ran == 0) {
    std::fprintf(stderr, "no criterion matches the given names\n");
    return 2;
  }
  std::printf("%d of %zu criteria failed\n", failed, ran);
  return failed == 0 ? 0 : 1;
}
