#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "looprune/loss.hpp"
#include "looprune/pruner.hpp"
#include "looprune/scorer.hpp"
#include "looprune/synth.hpp"
#include "looprune/trainer.hpp"

namespace looprune {

struct ScorerSection {
  ScorerDims dims;
  double init_scale = 0.1;
  bool operator==(const ScorerSection&) const = default;
};

// Sections: loss, inference, train, augment, scorer. Missing sections and
// fields keep their defaults; unknown keys are rejected.
struct PipelineConfig {
  LossConfig loss;
  InferenceConfig inference;
  TrainConfig train;
  AugmentConfig augment;
  ScorerSection scorer;

  void validate() const;
  bool operator==(const PipelineConfig&) const = default;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::string& path);
std::string dump_config(const PipelineConfig& cfg, int indent = 2);

// Applies LOO_PRUNE_SEED (decimal) to train.seed when set.
void apply_seed_override(PipelineConfig& cfg);
std::optional<std::uint64_t> seed_from_env();

// FNV-1a 64 of the compact JSON form, as 16 hex digits.
std::string config_hash(const PipelineConfig& cfg);

SynthSpec parse_synth_spec(const std::string& json_text);
SynthSpec load_synth_spec(const std::string& path);
std::string dump_synth_spec(const SynthSpec& spec);

}  // namespace looprune
