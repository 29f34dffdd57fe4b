#include "looprune/commands.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <optional>

#include "looprune/config.hpp"
#include "looprune/dataset.hpp"
#include "looprune/eval.hpp"
#include "looprune/parallel.hpp"
#include "looprune/pruner.hpp"
#include "looprune/rng.hpp"
#include "looprune/scorer.hpp"
#include "looprune/synth.hpp"
#include "looprune/trainer.hpp"

namespace looprune {
namespace {

using nlohmann::ordered_json;

// Records handed to the workers at once while streaming.
constexpr std::size_t kRecordsPerChunk = 256;

struct ScorerOptions {
  std::string kind = "lexical";
  std::string params_path;
  std::string idf_path;
};

struct CommonOptions {
  std::string config_path;
  unsigned parallelism = 1;
  std::string abbreviations_path;
};

PipelineConfig resolve_config(const CommonOptions& common) {
  PipelineConfig cfg = common.config_path.empty() ? PipelineConfig{}
                                                  : load_config(common.config_path);
  apply_seed_override(cfg);
  return cfg;
}

AbbreviationList resolve_abbreviations(const CommonOptions& common) {
  return common.abbreviations_path.empty()
             ? AbbreviationList::builtin()
             : AbbreviationList::load(common.abbreviations_path);
}

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--config", common.config_path, "Configuration file (JSON)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--parallelism", common.parallelism, "Worker threads")
      ->check(CLI::Range(1u, 1024u));
  cmd->add_option("--abbreviations", common.abbreviations_path,
                  "Abbreviation list, one per line")
      ->check(CLI::ExistingFile);
}

void add_scorer(CLI::App* cmd, ScorerOptions& opts) {
  cmd->add_option("--scorer", opts.kind, "Scorer backend")
      ->check(CLI::IsMember({"lexical", "neural"}));
  cmd->add_option("--params", opts.params_path, "Neural scorer checkpoint")
      ->check(CLI::ExistingFile);
  cmd->add_option("--idf", opts.idf_path, "IDF table for the lexical scorer")
      ->check(CLI::ExistingFile);
}

// `corpus` supplies IDF statistics when the lexical scorer has no table.
std::unique_ptr<Scorer> make_scorer(const ScorerOptions& opts,
                                    const std::vector<DatasetRecord>* corpus) {
  if (opts.kind == "neural") {
    if (opts.params_path.empty()) throw std::invalid_argument("--scorer neural needs --params");
    return std::make_unique<NeuralScorer>(load_params(opts.params_path));
  }
  if (!opts.idf_path.empty()) return std::make_unique<LexicalScorer>(IdfTable::load(opts.idf_path));
  if (!corpus) throw std::invalid_argument("lexical scorer needs --idf");
  return std::make_unique<LexicalScorer>(idf_from_records(*corpus));
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

// Reads up to `limit` non-blank lines; returns (line number, text) pairs.
std::vector<std::pair<std::size_t, std::string>> read_lines(std::istream& in,
                                                            std::size_t& line_no,
                                                            std::size_t limit) {
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::string line;
  while (lines.size() < limit && std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines.emplace_back(line_no, std::move(line));
  }
  return lines;
}

void merge_record(DatasetRecord& rec) { rec.passages = merge_passages(std::move(rec.passages)); }

std::vector<DatasetRecord> load_records(const std::string& path, const AbbreviationList& abbr,
                                        bool merge) {
  auto records = read_dataset(path, abbr);
  if (merge)
    for (auto& r : records) merge_record(r);
  return records;
}

ordered_json prf_json(const PRF& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1},
          {"tp", p.tp},               {"fp", p.fp},         {"fn", p.fn}};
}

// ---------------------------------------------------------------------------

struct PruneOptions {
  std::string input, output;
  bool no_latency = false;
  bool merge_chunks = false;
};

int cmd_prune(const PruneOptions& o, const ScorerOptions& so, const CommonOptions& common,
              std::ostream& out) {
  const PipelineConfig cfg = resolve_config(common);
  const AbbreviationList abbr = resolve_abbreviations(common);
  std::unique_ptr<Scorer> scorer;
  if (so.kind == "lexical" && so.idf_path.empty()) {
    const auto corpus = load_records(o.input, abbr, o.merge_chunks);
    scorer = make_scorer(so, &corpus);
  } else {
    scorer = make_scorer(so, nullptr);
  }
  const TokenCounter& counter = default_token_counter();

  std::ofstream file;
  std::ostream* sink = &out;
  if (!o.output.empty()) {
    file = open_output(o.output);
    sink = &file;
  }

  std::ifstream in = open_input(o.input);
  std::size_t line_no = 0;
  for (;;) {
    const auto lines = read_lines(in, line_no, kRecordsPerChunk);
    if (lines.empty()) break;
    std::vector<DatasetRecord> records;
    records.reserve(lines.size());
    for (const auto& [no, text] : lines) {
      records.push_back(parse_record(text, no, abbr));
      if (o.merge_chunks) merge_record(records.back());
    }
    std::vector<std::string> rendered(records.size());
    parallel_for(records.size(), common.parallelism, [&](std::size_t i) {
      const CompressionResult result =
          prune(*scorer, records[i].question, records[i].passages, cfg.inference, 1, counter);
      PruneRecord pr = make_prune_record(records[i], result, counter.name());
      if (o.no_latency) pr.latency_seconds.reset();
      rendered[i] = serialize_prune_record(pr);
    });
    for (const auto& r : rendered) *sink << r << '\n';
  }
  sink->flush();
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string train, val, out, init, trace;
};

int cmd_train(const TrainOptions& o, const CommonOptions& common, std::ostream& out) {
  PipelineConfig cfg = resolve_config(common);
  if (common.parallelism > 1) cfg.train.parallelism = common.parallelism;
  const AbbreviationList abbr = resolve_abbreviations(common);

  std::vector<TrainingExample> train_set = to_training_examples(read_dataset(o.train, abbr));
  std::vector<TrainingExample> val_set;
  if (!o.val.empty()) {
    val_set = to_training_examples(read_dataset(o.val, abbr));
  } else {
    std::tie(train_set, val_set) = split_train_val(std::move(train_set), 0.9, cfg.train.seed);
  }

  ScorerParams init = o.init.empty()
                          ? ScorerParams::random(cfg.scorer.dims, mix_seed(cfg.train.seed, 0x1417),
                                                 cfg.scorer.init_scale)
                          : load_params(o.init);

  const std::string trace_path = o.trace.empty() ? o.out + ".trace.tsv" : o.trace;
  const bool fresh_trace =
      !std::filesystem::exists(trace_path) || std::filesystem::file_size(trace_path) == 0;
  std::ofstream trace(trace_path, std::ios::app);
  if (!trace) throw std::runtime_error("cannot open for writing: " + trace_path);
  if (fresh_trace) trace << "epoch\ttrain_loss\tval_loss\n";
  trace.precision(10);

  auto on_epoch = [&](const EpochRecord& r) {
    trace << r.epoch << '\t' << r.train_loss << '\t' << r.val_loss << '\n';
    trace.flush();
    out << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss
        << '\n';
  };
  const TrainResult result =
      train(train_set, val_set, std::move(init), cfg.train, cfg.loss, cfg.augment, on_epoch);

  save_params(result.params, o.out);
  ordered_json meta = {{"epoch", result.best_epoch},
                       {"val_loss", result.best_val_loss},
                       {"config_hash", config_hash(cfg)},
                       {"train_examples", train_set.size()},
                       {"val_examples", val_set.size()}};
  std::ofstream meta_file = open_output(o.out + ".meta.json");
  meta_file << meta.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string input, pruned, reader = "containment", report, prompts;
  bool merge_chunks = false;
};

int cmd_eval(const EvalOptions& o, const CommonOptions& common, std::ostream& out) {
  const AbbreviationList abbr = resolve_abbreviations(common);
  const auto records = load_records(o.input, abbr, o.merge_chunks);

  std::ifstream in = open_input(o.pruned);
  std::ofstream prompts;
  if (!o.prompts.empty()) prompts = open_output(o.prompts);

  double em = 0, f1 = 0, ratio = 0, full_em = 0, full_f1 = 0;
  PRFCounter prf;
  bool labeled = true;
  std::size_t n = 0, line_no = 0;
  for (;;) {
    const auto lines = read_lines(in, line_no, 1);
    if (lines.empty()) break;
    const auto& [no, text] = lines.front();
    const PruneRecord pr = parse_prune_record(text, no);
    if (n >= records.size()) throw DatasetError(no, "more pruned records than inputs");
    const DatasetRecord& rec = records[n];
    if (pr.id != rec.id)
      throw DatasetError(no, "id '" + pr.id + "' does not match input '" + rec.id + "'");

    std::vector<std::vector<bool>> kept(rec.passages.size());
    for (std::size_t p = 0; p < rec.passages.size(); ++p)
      kept[p].assign(rec.passages[p].size(), false);
    for (const auto& k : pr.kept) {
      if (k.passage >= kept.size() || k.sentence >= kept[k.passage].size())
        throw DatasetError(no, "kept index out of range");
      kept[k.passage][k.sentence] = true;
    }
    for (std::size_t p = 0; p < rec.passages.size(); ++p) {
      if (!rec.passages[p].labels) {
        labeled = false;
        continue;
      }
      prf.add(kept[p], *rec.passages[p].labels);
    }

    const QAMetrics m = em_f1(containment_reader(pr.compressed_text, rec.answers), rec.answers);
    std::string full;
    for (std::size_t p = 0; p < rec.passages.size(); ++p)
      full += (p ? "\n" : "") + rec.passages[p].text();
    const QAMetrics fm = em_f1(containment_reader(full, rec.answers), rec.answers);
    em += m.em;
    f1 += m.f1;
    full_em += fm.em;
    full_f1 += fm.f1;
    ratio += pr.ratio;
    if (prompts.is_open())
      prompts << ordered_json{{"id", rec.id},
                              {"prompt", render_qa_prompt(pr.compressed_text, rec.question)}}
                     .dump()
              << '\n';
    ++n;
  }
  if (n != records.size())
    throw DatasetError(line_no, "pruned file has " + std::to_string(n) + " records, input has " +
                                    std::to_string(records.size()));

  const double denom = n ? static_cast<double>(n) : 1.0;
  ordered_json report = {{"questions", n},
                         {"reader", o.reader},
                         {"em", em / denom},
                         {"f1", f1 / denom},
                         {"full_context_em", full_em / denom},
                         {"full_context_f1", full_f1 / denom},
                         {"mean_ratio", ratio / denom}};
  if (labeled && n) report["sentence_prf"] = prf_json(prf.result());
  if (!o.report.empty()) {
    std::ofstream file = open_output(o.report);
    file << report.dump(2) << '\n';
  }
  out << report.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GridOptions {
  std::string dev, dmin_grid = "0.02:0.5:0.02", deltamin_grid = "0.005:0.2:0.005";
  std::string report, config_out;
};

int cmd_grid_search(const GridOptions& o, const ScorerOptions& so, const CommonOptions& common,
                    std::ostream& out) {
  PipelineConfig cfg = resolve_config(common);
  const auto dev = read_dataset(o.dev, resolve_abbreviations(common));
  for (std::size_t q = 0; q < dev.size(); ++q)
    for (const auto& p : dev[q].passages)
      if (!p.labels) throw DatasetError(q + 1, "grid search needs labels on every passage");
  const auto scorer = make_scorer(so, &dev);
  const auto result = grid_search(dev, *scorer, parse_grid(o.dmin_grid),
                                  parse_grid(o.deltamin_grid), common.parallelism);

  auto point = [](const GridPoint& g) {
    return ordered_json{{"d_min", g.d_min},
                        {"delta_min", g.delta_min},
                        {"kept_ratio", g.kept_ratio},
                        {"prf", prf_json(g.prf)}};
  };
  ordered_json best = point(result.best);
  out << best.dump(2) << '\n';
  if (!o.report.empty()) {
    ordered_json surface = ordered_json::array();
    for (const auto& g : result.surface) surface.push_back(point(g));
    std::ofstream file = open_output(o.report);
    file << ordered_json{{"best", best}, {"surface", surface}}.dump(2) << '\n';
  }
  if (!o.config_out.empty()) {
    cfg.inference.d_min = result.best.d_min;
    cfg.inference.delta_min = result.best.delta_min;
    std::ofstream file = open_output(o.config_out);
    file << dump_config(cfg) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BenchOptions {
  std::string input;
  std::size_t repetitions = 3;
};

int cmd_bench(const BenchOptions& o, const ScorerOptions& so, const CommonOptions& common,
              std::ostream& out) {
  const PipelineConfig cfg = resolve_config(common);
  const auto records = read_dataset(o.input, resolve_abbreviations(common));
  const auto scorer = make_scorer(so, &records);
  const LatencyStats s = bench(records, *scorer, cfg.inference, o.repetitions, common.parallelism);
  out << ordered_json{{"questions", s.questions},
                      {"repetitions", s.repetitions},
                      {"scorer", scorer->name()},
                      {"mean_seconds", s.mean},
                      {"p50_seconds", s.p50},
                      {"p95_seconds", s.p95}}
             .dump(2)
      << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string spec, out, idf_out;
};

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  SynthSpec spec = o.spec.empty() ? SynthSpec{} : load_synth_spec(o.spec);
  if (auto seed = seed_from_env()) spec.seed = *seed;
  const SynthDataset data = generate(spec);
  write_dataset(o.out, data.records);
  if (!o.idf_out.empty()) idf_from_records(data.records).save(o.idf_out);
  out << "wrote " << data.records.size() << " records to " << o.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct CheckGradOptions {
  std::uint64_t seed = 0;
  std::size_t samples = 100;
  std::vector<double> h_values = {1e-4, 1e-5};
};

int cmd_check_grad(const CheckGradOptions& o, const CommonOptions& common, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(common);
  const auto start = std::chrono::steady_clock::now();
  const auto report = run_gradient_check_suite(o.seed, o.samples, o.h_values, cfg.loss);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ordered_json per_h = ordered_json::array();
  for (std::size_t i = 0; i < report.h_values.size(); ++i)
    per_h.push_back({{"h", report.h_values[i]},
                     {"max_rel_err", report.max_rel_err[i]},
                     {"worst_param", report.worst_param[i]}});
  out << ordered_json{{"samples", report.samples},
                      {"rejected_near_kink", report.rejected_near_kink},
                      {"coordinates_per_sample", report.coordinates_per_sample},
                      {"results", per_h},
                      {"seconds", seconds}}
             .dump(2)
      << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Leave-one-out sentence pruning for retrieved contexts", "looprune"};
  app.require_subcommand(1);

  CommonOptions common;
  ScorerOptions scorer_opts;

  PruneOptions prune_opts;
  auto* prune_cmd = app.add_subcommand("prune", "Compress every record of a dataset");
  prune_cmd->add_option("--input", prune_opts.input, "Dataset JSONL")->required()
      ->check(CLI::ExistingFile);
  prune_cmd->add_option("--output", prune_opts.output, "Output JSONL (default stdout)");
  prune_cmd->add_flag("--no-latency", prune_opts.no_latency,
                      "Omit wall-clock latency from the output records");
  prune_cmd->add_flag("--merge-chunks", prune_opts.merge_chunks,
                      "Merge overlapping and short passages before scoring");
  add_scorer(prune_cmd, scorer_opts);
  add_common(prune_cmd, common);

  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train the neural scorer");
  train_cmd->add_option("--train", train_opts.train, "Labeled training JSONL")->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--val", train_opts.val, "Labeled validation JSONL")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_opts.out, "Checkpoint path")->required();
  train_cmd->add_option("--init", train_opts.init, "Initial checkpoint")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--trace", train_opts.trace, "Per-epoch loss trace (TSV, appended)");
  add_common(train_cmd, common);

  EvalOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "Score pruned contexts against gold answers");
  eval_cmd->add_option("--input", eval_opts.input, "Dataset JSONL")->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--pruned", eval_opts.pruned, "Prune output JSONL")->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--reader", eval_opts.reader, "Reader")
      ->check(CLI::IsMember({"containment"}));
  eval_cmd->add_option("--report", eval_opts.report, "Write the report JSON here");
  eval_cmd->add_option("--prompts", eval_opts.prompts, "Export reader prompts as JSONL");
  eval_cmd->add_flag("--merge-chunks", eval_opts.merge_chunks,
                     "Input was pruned with --merge-chunks");
  add_common(eval_cmd, common);

  GridOptions grid_opts;
  auto* grid_cmd = app.add_subcommand("grid-search", "Tune d_min and delta_min on labeled data");
  grid_cmd->add_option("--dev", grid_opts.dev, "Labeled dev JSONL")->required()
      ->check(CLI::ExistingFile);
  grid_cmd->add_option("--dmin-grid", grid_opts.dmin_grid, "lo:hi:step");
  grid_cmd->add_option("--deltamin-grid", grid_opts.deltamin_grid, "lo:hi:step");
  grid_cmd->add_option("--report", grid_opts.report, "Write the full surface as JSON");
  grid_cmd->add_option("--config-out", grid_opts.config_out,
                       "Write the configuration with the tuned thresholds");
  add_scorer(grid_cmd, scorer_opts);
  add_common(grid_cmd, common);

  BenchOptions bench_opts;
  auto* bench_cmd = app.add_subcommand("bench", "Measure end-to-end prune latency");
  bench_cmd->add_option("--input", bench_opts.input, "Dataset JSONL")->required()
      ->check(CLI::ExistingFile);
  bench_cmd->add_option("--repetitions", bench_opts.repetitions, "Runs per question")
      ->check(CLI::PositiveNumber);
  add_scorer(bench_cmd, scorer_opts);
  add_common(bench_cmd, common);

  SynthOptions synth_opts;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  synth_cmd->add_option("--spec", synth_opts.spec, "Generator settings (JSON)")
      ->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", synth_opts.out, "Output JSONL")->required();
  synth_cmd->add_option("--idf-out", synth_opts.idf_out, "Also write a corpus IDF table");

  CheckGradOptions grad_opts;
  auto* grad_cmd = app.add_subcommand("check-grad", "Compare analytic and numeric gradients");
  grad_cmd->add_option("--seed", grad_opts.seed, "Random seed");
  grad_cmd->add_option("--samples", grad_opts.samples, "Kink-free samples to check")
      ->check(CLI::PositiveNumber);
  grad_cmd->add_option("--step", grad_opts.h_values, "Finite-difference step sizes");
  add_common(grad_cmd, common);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*prune_cmd) return cmd_prune(prune_opts, scorer_opts, common, out);
    if (*train_cmd) return cmd_train(train_opts, common, out);
    if (*eval_cmd) return cmd_eval(eval_opts, common, out);
    if (*grid_cmd) return cmd_grid_search(grid_opts, scorer_opts, common, out);
    if (*bench_cmd) return cmd_bench(bench_opts, scorer_opts, common, out);
    if (*synth_cmd) return cmd_synth(synth_opts, out);
    if (*grad_cmd) return cmd_check_grad(grad_opts, common, out);
  } catch (const DatasetError& e) {
    err << "error: " << e.what() << '\n';
    return kExitMalformedInput;
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << '\n';
    return kExitMalformedInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace looprune
