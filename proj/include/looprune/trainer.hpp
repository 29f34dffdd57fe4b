#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "looprune/loss.hpp"
#include "looprune/scorer.hpp"

namespace looprune {

struct TrainConfig {
  double learning_rate = 7e-5;
  double weight_decay = 0.02;
  std::size_t epochs = 6;
  std::size_t batch_size = 4;
  std::size_t grad_accum_steps = 8;
  std::size_t warmup_steps = 200;
  std::uint64_t seed = 0;
  unsigned parallelism = 1;  // per-example gradient workers

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct AugmentConfig {
  double p_drop_extra_crit = 0.10;
  double p_drop_extra_noncrit = 0.10;
  double p_insert_punct = 0.20;
  double p_add_affix = 0.05;

  void validate() const;
  bool operator==(const AugmentConfig&) const = default;
};

// One labeled (query, passage) pair.
struct TrainingExample {
  std::string query;
  std::vector<std::string> sentences;
  std::vector<int> labels;
};

// What a single loss evaluation sees. Leave-one-out variant k removes
// sentence k and, when present, every index in extra_drops[k].
struct TrainingSample {
  std::string query;
  std::vector<std::string> sentences;
  std::vector<int> labels;
  std::vector<std::vector<std::size_t>> extra_drops;  // empty or size n
};

// Per-passage augmentation: each variant may drop one additional
// non-critical sentence (rate depends on whether the inspected sentence is
// critical); one punctuation mark may be inserted between two adjacent
// sentences; a start and an end phrase may be attached. Critical sentences
// are never dropped and labels stay aligned.
TrainingSample augment(const TrainingExample& example, const AugmentConfig& cfg,
                       std::uint64_t seed);

// Sentence sampling (cfg.sample_m) followed by optional augmentation.
TrainingSample make_sample(const TrainingExample& example, const LossConfig& cfg,
                           const AugmentConfig* augment_cfg, std::uint64_t seed);

// Deltas and routed loss for a sample (n + 1 forward passes).
LossEvaluation sample_loss(const ScorerParams& params, const TrainingSample& sample,
                           const LossConfig& cfg);
DeltaBundle sample_bundle(const ScorerParams& params, const TrainingSample& sample);

struct LossAndGradient {
  LossEvaluation loss;
  ScorerGradient grad;
};

// Exact gradient of the routed loss. Throws NumericalError naming the
// parameter block if any component is non-finite.
LossAndGradient grad_loss(const ScorerParams& params, const TrainingSample& sample,
                          const LossConfig& cfg);

// True if any active-or-inactive hinge argument lies within `tol` of its
// kink, where the loss is not differentiable.
bool near_hinge_kink(const DeltaBundle& bundle, const LossConfig& cfg, double tol);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t coordinates = 0;  // perturbed coordinates across all blocks
  bool kink_free = true;        // false if hinge slack <= 10h somewhere
};

// Central differences along one random unit direction per parameter block
// (embedding rows touched by the sample, pooling queries, output
// projection, head weights, bias), compared with the analytic directional
// derivative. Relative error uses max(|analytic|, |numeric|, 1e-12).
GradCheckReport check_gradients(const ScorerParams& params,
                                const TrainingSample& sample,
                                const LossConfig& cfg, double h,
                                std::uint64_t seed);

struct GradCheckSuiteReport {
  std::vector<double> h_values;
  std::vector<double> max_rel_err;  // per h
  std::vector<std::string> worst_param;
  std::size_t samples = 0;
  std::size_t rejected_near_kink = 0;
  std::size_t coordinates_per_sample = 0;
};

// Draws random (params, sample) pairs until `samples` kink-free ones have
// been checked at every h.
GradCheckSuiteReport run_gradient_check_suite(std::uint64_t seed,
                                              std::size_t samples,
                                              const std::vector<double>& h_values,
                                              const LossConfig& cfg = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ScorerParams params;  // checkpoint with the lowest validation loss
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::vector<EpochRecord> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<EpochRecord>& trace() const { return trace_; }

 private:
  std::vector<EpochRecord> trace_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch gradient descent with decoupled weight decay, linear warmup and
// gradient accumulation (one update per batch_size * grad_accum_steps
// examples, gradients averaged). Embedding rows decay only when touched by
// the update's batch. Deterministic for a given seed and independent of
// cfg.parallelism.
TrainResult train(const std::vector<TrainingExample>& train_set,
                  const std::vector<TrainingExample>& val_set,
                  ScorerParams init, const TrainConfig& train_cfg,
                  const LossConfig& loss_cfg, const AugmentConfig& augment_cfg,
                  const EpochCallback& on_epoch = {});

// Mean loss without augmentation.
double mean_loss(const ScorerParams& params,
                 const std::vector<TrainingExample>& examples,
                 const LossConfig& cfg, std::uint64_t seed, unsigned parallelism = 1);

// Mean ranking component (ord + crit + non), no augmentation.
double mean_ranking_loss(const ScorerParams& params,
                         const std::vector<TrainingExample>& examples,
                         const LossConfig& cfg, std::uint64_t seed);

// Seeded 9:1 style split.
std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>>
split_train_val(std::vector<TrainingExample> examples, double train_fraction,
                std::uint64_t seed);

}  // namespace looprune
