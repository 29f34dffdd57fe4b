#include "looprune/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>

#include "looprune/parallel.hpp"
#include "looprune/rng.hpp"
#include "looprune/text.hpp"

namespace looprune {
namespace {

constexpr std::array<const char*, 4> kPunctuation = {";", "|", "--", "..."};
constexpr std::array<const char*, 4> kStartPhrases = {"Note that", "In short,",
                                                      "Reportedly,", "As noted,"};
constexpr std::array<const char*, 4> kEndPhrases = {"as reported.", "and so on.",
                                                    "it seems.", "they say."};

constexpr double kDivergenceLimit = 1e6;

// Token ids of the query and of each sentence, tokenized once per sample.
struct TokenizedSample {
  std::vector<std::uint32_t> query;
  std::vector<std::vector<std::uint32_t>> sentences;
};

TokenizedSample tokenize_sample(const TrainingSample& s, std::uint32_t buckets) {
  TokenizedSample t;
  t.query = tokenize_text(s.query, buckets);
  t.query.push_back(kSeparatorId);
  for (const auto& text : s.sentences) t.sentences.push_back(tokenize_text(text, buckets));
  return t;
}

// removed.size() == n; removed[k] != 0 drops sentence k.
TokenSequence assemble(const TokenizedSample& t, const std::vector<char>& removed) {
  TokenSequence seq;
  seq.ids = t.query;
  for (std::size_t k = 0; k < t.sentences.size(); ++k)
    if (!removed[k])
      seq.ids.insert(seq.ids.end(), t.sentences[k].begin(), t.sentences[k].end());
  seq.is_padding.assign(seq.ids.size(), 0);
  return seq;
}

std::vector<char> variant_mask(const TrainingSample& s, std::size_t k) {
  std::vector<char> removed(s.sentences.size(), 0);
  removed[k] = 1;
  if (!s.extra_drops.empty())
    for (std::size_t j : s.extra_drops[k]) removed.at(j) = 1;
  return removed;
}

void check_sample(const TrainingSample& s) {
  if (s.sentences.empty()) throw std::invalid_argument("sample has no sentences");
  if (s.labels.size() != s.sentences.size())
    throw std::invalid_argument("labels not aligned with sentences");
  if (!s.extra_drops.empty() && s.extra_drops.size() != s.sentences.size())
    throw std::invalid_argument("extra_drops not aligned with sentences");
}

// Forward passes for the full context and every variant.
struct SampleForward {
  ForwardCache full;
  std::vector<ForwardCache> variants;
  DeltaBundle bundle;
};

SampleForward forward_sample(const ScorerParams& params, const TrainingSample& s,
                             bool keep_cache) {
  check_sample(s);
  const TokenizedSample tok = tokenize_sample(s, params.dims.bucket_count);
  const std::size_t n = s.sentences.size();
  SampleForward out;
  std::vector<char> none(n, 0);
  const double p0 = neural_forward(params, assemble(tok, none),
                                   keep_cache ? &out.full : nullptr);
  std::vector<double> p_minus(n);
  if (keep_cache) out.variants.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    p_minus[k] = neural_forward(params, assemble(tok, variant_mask(s, k)),
                                keep_cache ? &out.variants[k] : nullptr);
  }
  out.bundle = DeltaBundle::from_scores(p0, std::move(p_minus), s.labels);
  return out;
}

// Loss value only, with scores and sums in long double. Finite differences
// of this function resolve directional derivatives far smaller than double
// rounding of a loss of order 10 would allow.
long double extended_sample_loss(const ScorerParams& params, const TrainingSample& s,
                                 const LossConfig& cfg) {
  using L = long double;
  const TokenizedSample tok = tokenize_sample(s, params.dims.bucket_count);
  const std::size_t n = s.sentences.size();
  const L p0 = neural_forward_extended(params, assemble(tok, std::vector<char>(n, 0)));
  std::vector<L> delta(n), p_minus(n);
  for (std::size_t k = 0; k < n; ++k) {
    p_minus[k] = neural_forward_extended(params, assemble(tok, variant_mask(s, k)));
    delta[k] = p0 - p_minus[k];
  }
  auto softplus_l = [](L x) { return std::max(x, L(0)) + std::log1p(std::exp(-std::abs(x))); };
  const auto& y = s.labels;
  if (std::any_of(y.begin(), y.end(), [](int v) { return v == 1; })) {
    L ord = 0, crit = 0, non = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) ord += std::max(L(0), cfg.m1 - (delta[i] - delta[j]));
    for (std::size_t k = 0; k < n; ++k) {
      if (y[k] == 1) crit += std::max(L(0), cfg.m2 - delta[k]);
      else non += std::max(L(0), delta[k] + cfg.m3);
    }
    return cfg.alpha * ord + cfg.beta * crit + cfg.gamma * non +
           cfg.lambda * cfg.bce_pos_weight * softplus_l(-p0);
  }
  L bce_sum = softplus_l(p0), non = 0;
  for (std::size_t k = 0; k < n; ++k) {
    bce_sum += softplus_l(p_minus[k]);
    non += std::max(L(0), std::abs(delta[k]) - cfg.m3);
  }
  return cfg.lambda * bce_sum + cfg.gamma * non;
}

// A flat view over one parameter block, for perturbation.
struct Block {
  std::string name;
  std::vector<double*> coords;
  std::vector<double> analytic;  // gradient entries aligned with coords
};

std::vector<Block> gradient_blocks(ScorerParams& p, const ScorerGradient& g) {
  std::vector<Block> blocks;
  const std::size_t d = p.dims.dim;

  Block emb{"embedding_table", {}, {}};
  std::vector<std::uint32_t> rows;
  for (const auto& [id, row] : g.embedding_rows) rows.push_back(id);
  std::sort(rows.begin(), rows.end());
  for (std::uint32_t id : rows) {
    const auto& grow = g.embedding_rows.at(id);
    for (std::size_t j = 0; j < d; ++j) {
      emb.coords.push_back(&p.embedding_table[id * d + j]);
      emb.analytic.push_back(grow[j]);
    }
  }
  blocks.push_back(std::move(emb));

  auto dense = [&](const char* name, std::vector<double>& v,
                   const std::vector<double>& gv) {
    Block b{name, {}, {}};
    for (std::size_t i = 0; i < v.size(); ++i) {
      b.coords.push_back(&v[i]);
      b.analytic.push_back(gv[i]);
    }
    blocks.push_back(std::move(b));
  };
  dense("pooling_queries", p.pooling_queries, g.pooling_queries);
  dense("output_projection", p.output_projection, g.output_projection);
  dense("head_weights", p.head_weights, g.head_weights);
  blocks.push_back(Block{"bias", {&p.bias}, {g.bias}});
  return blocks;
}

std::string random_word(Rng& rng, const std::vector<std::string>& vocab) {
  return vocab[rng.uniform_index(vocab.size())];
}

TrainingSample random_gradcheck_sample(Rng& rng) {
  static const std::vector<std::string> vocab = {
      "river", "castle", "engine", "violin", "harbor", "planet", "garden",
      "copper", "lantern", "meadow", "falcon", "summit", "canyon", "ember",
      "glacier", "orchid", "quartz", "saddle", "timber", "willow", "zephyr",
      "anchor", "beacon", "cobalt", "dune", "fjord", "granite", "heron"};
  TrainingSample s;
  const std::size_t qlen = 3 + rng.uniform_index(3);
  for (std::size_t i = 0; i < qlen; ++i) s.query += random_word(rng, vocab) + " ";
  const std::size_t n = 4;
  for (std::size_t k = 0; k < n; ++k) {
    std::string sent = "The";
    const std::size_t len = 4 + rng.uniform_index(5);
    for (std::size_t i = 0; i < len; ++i) sent += " " + random_word(rng, vocab);
    s.sentences.push_back(sent + ". ");
  }
  const bool clue_filled = rng.bernoulli(0.6);
  s.labels.assign(n, 0);
  if (clue_filled) {
    s.labels[rng.uniform_index(n)] = 1;
    for (std::size_t k = 0; k < n; ++k)
      if (rng.bernoulli(0.25)) s.labels[k] = 1;
  }
  s.extra_drops.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (!rng.bernoulli(0.3)) continue;
    const std::size_t j = rng.uniform_index(n);
    if (j != k && s.labels[j] == 0) s.extra_drops[k].push_back(j);
  }
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (weight_decay < 0) throw std::invalid_argument("weight_decay must be non-negative");
  if (epochs < 1 || batch_size < 1 || grad_accum_steps < 1)
    throw std::invalid_argument("epochs, batch_size, grad_accum_steps must be positive");
}

void AugmentConfig::validate() const {
  for (double p : {p_drop_extra_crit, p_drop_extra_noncrit, p_insert_punct, p_add_affix})
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("augmentation probabilities must lie in [0, 1]");
}

TrainingSample augment(const TrainingExample& example, const AugmentConfig& cfg,
                       std::uint64_t seed) {
  if (example.labels.size() != example.sentences.size())
    throw std::invalid_argument("labels not aligned with sentences");
  Rng rng(seed);
  TrainingSample s{example.query, example.sentences, example.labels, {}};
  const std::size_t n = s.sentences.size();

  s.extra_drops.resize(n);
  std::vector<std::size_t> non_critical;
  for (std::size_t k = 0; k < n; ++k)
    if (s.labels[k] == 0) non_critical.push_back(k);
  for (std::size_t k = 0; k < n; ++k) {
    const double p = s.labels[k] == 1 ? cfg.p_drop_extra_crit : cfg.p_drop_extra_noncrit;
    if (!rng.bernoulli(p)) continue;
    std::vector<std::size_t> candidates;
    for (std::size_t j : non_critical)
      if (j != k) candidates.push_back(j);
    if (!candidates.empty())
      s.extra_drops[k].push_back(candidates[rng.uniform_index(candidates.size())]);
  }

  if (n >= 2 && rng.bernoulli(cfg.p_insert_punct)) {
    const std::size_t at = rng.uniform_index(n - 1);
    const char* mark = kPunctuation[rng.uniform_index(kPunctuation.size())];
    std::string& text = s.sentences[at];
    const std::string_view body = rtrim(text);
    std::string tail = text.substr(body.size());
    if (tail.empty()) tail = " ";
    text = std::string(body) + " " + mark + tail;
  }

  if (rng.bernoulli(cfg.p_add_affix)) {
    const char* start = kStartPhrases[rng.uniform_index(kStartPhrases.size())];
    const char* end = kEndPhrases[rng.uniform_index(kEndPhrases.size())];
    s.sentences.front() = std::string(start) + " " + s.sentences.front();
    std::string& last = s.sentences.back();
    const std::string_view body = rtrim(last);
    last = std::string(body) + " " + end + last.substr(body.size());
  }
  return s;
}

TrainingSample make_sample(const TrainingExample& example, const LossConfig& cfg,
                           const AugmentConfig* augment_cfg, std::uint64_t seed) {
  const auto keep = sample_sentences(example.labels, cfg, mix_seed(seed, 1));
  TrainingExample sub{example.query, {}, {}};
  for (std::size_t k : keep) {
    sub.sentences.push_back(example.sentences[k]);
    sub.labels.push_back(example.labels[k]);
  }
  if (augment_cfg) return augment(sub, *augment_cfg, mix_seed(seed, 2));
  return TrainingSample{std::move(sub.query), std::move(sub.sentences),
                        std::move(sub.labels), {}};
}

DeltaBundle sample_bundle(const ScorerParams& params, const TrainingSample& sample) {
  return forward_sample(params, sample, false).bundle;
}

LossEvaluation sample_loss(const ScorerParams& params, const TrainingSample& sample,
                           const LossConfig& cfg) {
  return evaluate_loss(sample_bundle(params, sample), cfg);
}

LossAndGradient grad_loss(const ScorerParams& params, const TrainingSample& sample,
                          const LossConfig& cfg) {
  SampleForward fw = forward_sample(params, sample, true);
  LossAndGradient out{evaluate_loss(fw.bundle, cfg), ScorerGradient(params.dims)};
  neural_backward(params, fw.full, out.loss.d_p0, out.grad);
  for (std::size_t k = 0; k < fw.variants.size(); ++k)
    if (out.loss.d_p_minus[k] != 0.0)
      neural_backward(params, fw.variants[k], out.loss.d_p_minus[k], out.grad);
  out.grad.check_finite();
  return out;
}

bool near_hinge_kink(const DeltaBundle& b, const LossConfig& cfg, double tol) {
  const std::size_t n = b.deltas.size();
  const bool clue_filled =
      std::any_of(b.labels.begin(), b.labels.end(), [](int y) { return y == 1; });
  auto close = [tol](double slack) { return std::abs(slack) <= tol; };
  for (std::size_t k = 0; k < n; ++k) {
    if (clue_filled) {
      if (b.labels[k] == 1) {
        if (close(cfg.m2 - b.deltas[k])) return true;
        for (std::size_t j = 0; j < n; ++j)
          if (b.labels[j] == 0 && close(cfg.m1 - (b.deltas[k] - b.deltas[j])))
            return true;
      } else if (close(b.deltas[k] + cfg.m3)) {
        return true;
      }
    } else if (close(std::abs(b.deltas[k]) - cfg.m3)) {
      return true;
    }
  }
  return false;
}

GradCheckReport check_gradients(const ScorerParams& params,
                                const TrainingSample& sample,
                                const LossConfig& cfg, double h,
                                std::uint64_t seed) {
  if (!(h > 0)) throw std::invalid_argument("h must be positive");
  const LossAndGradient analytic = grad_loss(params, sample, cfg);

  GradCheckReport report;
  report.kink_free = !near_hinge_kink(sample_bundle(params, sample), cfg, 10.0 * h);

  ScorerParams work = params;
  Rng rng(seed);
  for (Block& block : gradient_blocks(work, analytic.grad)) {
    const std::size_t m = block.coords.size();
    std::vector<double> dir(m);
    double norm = 0.0;
    for (double& v : dir) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    double directional = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      dir[i] /= norm;
      directional += block.analytic[i] * dir[i];
    }

    std::vector<double> original(m);
    for (std::size_t i = 0; i < m; ++i) original[i] = *block.coords[i];
    auto eval_at = [&](double step) {
      for (std::size_t i = 0; i < m; ++i) *block.coords[i] = original[i] + step * dir[i];
      const long double f = extended_sample_loss(work, sample, cfg);
      for (std::size_t i = 0; i < m; ++i) *block.coords[i] = original[i];
      return f;
    };
    const double numeric = static_cast<double>((eval_at(h) - eval_at(-h)) / (2.0L * h));
    const double denom =
        std::max({std::abs(directional), std::abs(numeric), 1e-12});
    const double rel = std::abs(directional - numeric) / denom;
    report.coordinates += m;
    if (report.worst_param.empty() || rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = block.name;
    }
  }
  return report;
}

GradCheckSuiteReport run_gradient_check_suite(std::uint64_t seed,
                                              std::size_t samples,
                                              const std::vector<double>& h_values,
                                              const LossConfig& cfg) {
  GradCheckSuiteReport report;
  report.h_values = h_values;
  report.max_rel_err.assign(h_values.size(), 0.0);
  report.worst_param.assign(h_values.size(), "");
  if (h_values.empty()) return report;
  const double widest_h = *std::max_element(h_values.begin(), h_values.end());

  Rng rng(seed);
  const ScorerDims dims{64, 8, 4096};
  std::size_t attempt = 0;
  while (report.samples < samples) {
    ++attempt;
    ScorerParams params = ScorerParams::random(dims, rng.next_u64(), 1.0);
    params.bias = rng.normal();
    const TrainingSample sample = random_gradcheck_sample(rng);
    if (near_hinge_kink(sample_bundle(params, sample), cfg, 10.0 * widest_h)) {
      ++report.rejected_near_kink;
      continue;
    }
    const std::uint64_t dir_seed = rng.next_u64();
    for (std::size_t i = 0; i < h_values.size(); ++i) {
      const GradCheckReport r = check_gradients(params, sample, cfg, h_values[i], dir_seed);
      report.coordinates_per_sample = r.coordinates;
      if (report.worst_param[i].empty() || r.max_rel_err > report.max_rel_err[i]) {
        report.max_rel_err[i] = r.max_rel_err;
        report.worst_param[i] = r.worst_param;
      }
    }
    ++report.samples;
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {

bool has_both_kinds(const std::vector<TrainingExample>& set) {
  bool filled = false, free = false;
  for (const auto& ex : set) {
    const bool any = std::any_of(ex.labels.begin(), ex.labels.end(),
                                 [](int y) { return y == 1; });
    (any ? filled : free) = true;
  }
  return filled && free;
}

void apply_update(ScorerParams& p, const ScorerGradient& g, double lr, double wd) {
  const std::size_t d = p.dims.dim;
  auto step = [lr, wd](double& theta, double grad) {
    theta -= lr * (grad + wd * theta);
  };
  for (const auto& [id, row] : g.embedding_rows)
    for (std::size_t j = 0; j < d; ++j) step(p.embedding_table[id * d + j], row[j]);
  for (std::size_t i = 0; i < p.pooling_queries.size(); ++i)
    step(p.pooling_queries[i], g.pooling_queries[i]);
  for (std::size_t i = 0; i < p.output_projection.size(); ++i)
    step(p.output_projection[i], g.output_projection[i]);
  for (std::size_t i = 0; i < p.head_weights.size(); ++i)
    step(p.head_weights[i], g.head_weights[i]);
  p.bias -= lr * g.bias;  // bias is not decayed
}

}  // namespace

double mean_loss(const ScorerParams& params,
                 const std::vector<TrainingExample>& examples,
                 const LossConfig& cfg, std::uint64_t seed, unsigned parallelism) {
  if (examples.empty()) return 0.0;
  std::vector<double> losses(examples.size());
  parallel_for(examples.size(), parallelism, [&](std::size_t i) {
    const TrainingSample s = make_sample(examples[i], cfg, nullptr, mix_seed(seed, i));
    losses[i] = sample_loss(params, s, cfg).value.total;
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) /
         static_cast<double>(examples.size());
}

double mean_ranking_loss(const ScorerParams& params,
                         const std::vector<TrainingExample>& examples,
                         const LossConfig& cfg, std::uint64_t seed) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const TrainingSample s = make_sample(examples[i], cfg, nullptr, mix_seed(seed, i));
    total += sample_loss(params, s, cfg).value.breakdown.ranking();
  }
  return total / static_cast<double>(examples.size());
}

TrainResult train(const std::vector<TrainingExample>& train_set,
                  const std::vector<TrainingExample>& val_set,
                  ScorerParams init, const TrainConfig& train_cfg,
                  const LossConfig& loss_cfg, const AugmentConfig& augment_cfg,
                  const EpochCallback& on_epoch) {
  train_cfg.validate();
  loss_cfg.validate();
  augment_cfg.validate();
  init.validate();
  if (!has_both_kinds(train_set))
    throw std::invalid_argument(
        "training set needs both clue-filled and clue-free passages");

  TrainResult result;
  result.params = init;
  result.best_val_loss = INFINITY;
  ScorerParams params = std::move(init);

  Rng order_rng(mix_seed(train_cfg.seed, 0x5eed));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_update = train_cfg.batch_size * train_cfg.grad_accum_steps;
  const std::uint64_t val_seed = mix_seed(train_cfg.seed, 0x7a1);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += per_update) {
      const std::size_t count = std::min(per_update, order.size() - start);
      std::vector<LossAndGradient> parts;
      parts.reserve(count);
      for (std::size_t i = 0; i < count; ++i)
        parts.push_back({LossEvaluation{}, ScorerGradient(params.dims)});
      parallel_for(count, train_cfg.parallelism, [&](std::size_t i) {
        const std::size_t ex = order[start + i];
        const std::uint64_t s =
            mix_seed(mix_seed(train_cfg.seed, epoch), ex);
        const TrainingSample sample =
            make_sample(train_set[ex], loss_cfg, &augment_cfg, s);
        parts[i] = grad_loss(params, sample, loss_cfg);
      });

      ScorerGradient total(params.dims);
      double batch_loss = 0.0;
      for (const auto& part : parts) {
        total.add(part.grad);
        batch_loss += part.loss.value.total;
      }
      total.scale(1.0 / static_cast<double>(count));
      if (!std::isfinite(batch_loss) ||
          batch_loss / static_cast<double>(count) > kDivergenceLimit) {
        throw TrainingDiverged("training diverged at epoch " +
                                   std::to_string(epoch) + ", step " +
                                   std::to_string(step),
                               result.trace);
      }
      epoch_loss += batch_loss;

      double lr = train_cfg.learning_rate;
      if (train_cfg.warmup_steps > 0)
        lr *= std::min(1.0, static_cast<double>(step + 1) /
                                static_cast<double>(train_cfg.warmup_steps));
      apply_update(params, total, lr, train_cfg.weight_decay);
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(train_set.size());
    rec.val_loss = val_set.empty()
                       ? rec.train_loss
                       : mean_loss(params, val_set, loss_cfg, val_seed,
                                   train_cfg.parallelism);
    result.trace.push_back(rec);
    if (!std::isfinite(rec.val_loss) || rec.val_loss > kDivergenceLimit)
      throw TrainingDiverged("validation loss diverged at epoch " +
                                 std::to_string(epoch),
                             result.trace);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      result.params = params;
    }
  }
  return result;
}

std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>>
split_train_val(std::vector<TrainingExample> examples, double train_fraction,
                std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(examples);
  const auto cut = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(examples.size())));
  std::vector<TrainingExample> val(examples.begin() + static_cast<std::ptrdiff_t>(cut),
                                   examples.end());
  examples.resize(cut);
  return {std::move(examples), std::move(val)};
}

}  // namespace looprune
