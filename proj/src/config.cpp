#include "looprune/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace looprune {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads the named fields of one section in place, rejecting keys that are
// not listed.
class SectionReader {
 public:
  SectionReader(const json& root, const char* section) : section_(section) {
    auto it = root.find(section);
    if (it == root.end()) return;
    if (!it->is_object())
      throw ConfigError(std::string("section '") + section + "' must be an object");
    obj_ = &*it;
  }

  template <typename T>
  SectionReader& field(const char* key, T& target) {
    seen_.push_back(key);
    if (!obj_) return *this;
    auto it = obj_->find(key);
    if (it == obj_->end()) return *this;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        target = it->get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_unsigned())
          throw ConfigError("");
        target = it->get<T>();
      } else {
        if (!it->is_number()) throw ConfigError("");
        target = it->get<T>();
      }
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad value for ") + section_ + "." + key);
    }
    return *this;
  }

  void finish() const {
    if (!obj_) return;
    for (const auto& [key, _] : obj_->items()) {
      bool known = false;
      for (const auto& s : seen_) known = known || s == key;
      if (!known) throw ConfigError("unknown key " + std::string(section_) + "." + key);
    }
  }

 private:
  const char* section_;
  const json* obj_ = nullptr;
  std::vector<std::string> seen_;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_object(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("configuration must be a JSON object");
  return root;
}

ordered_json to_json(const PipelineConfig& c) {
  ordered_json j;
  j["loss"] = {{"m1", c.loss.m1},
               {"m2", c.loss.m2},
               {"m3", c.loss.m3},
               {"alpha", c.loss.alpha},
               {"beta", c.loss.beta},
               {"gamma", c.loss.gamma},
               {"lambda", c.loss.lambda},
               {"bce_pos_weight", c.loss.bce_pos_weight},
               {"sample_m", c.loss.sample_m}};
  j["inference"] = {{"d_min", c.inference.d_min}, {"delta_min", c.inference.delta_min}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"grad_accum_steps", c.train.grad_accum_steps},
                {"warmup_steps", c.train.warmup_steps},
                {"seed", c.train.seed},
                {"parallelism", c.train.parallelism}};
  j["augment"] = {{"p_drop_extra_crit", c.augment.p_drop_extra_crit},
                  {"p_drop_extra_noncrit", c.augment.p_drop_extra_noncrit},
                  {"p_insert_punct", c.augment.p_insert_punct},
                  {"p_add_affix", c.augment.p_add_affix}};
  j["scorer"] = {{"dim", c.scorer.dims.dim},
                 {"heads", c.scorer.dims.heads},
                 {"bucket_count", c.scorer.dims.bucket_count},
                 {"init_scale", c.scorer.init_scale}};
  return j;
}

}  // namespace

void PipelineConfig::validate() const {
  try {
    loss.validate();
    inference.validate();
    train.validate();
    augment.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (scorer.dims.dim == 0 || scorer.dims.heads == 0 || scorer.dims.bucket_count < 2 ||
      scorer.dims.dim % scorer.dims.heads != 0)
    throw ConfigError("scorer dims must be positive with dim divisible by heads");
  if (!(scorer.init_scale > 0)) throw ConfigError("scorer.init_scale must be positive");
}

PipelineConfig parse_config(const std::string& json_text) {
  const json root = parse_object(json_text);
  for (const auto& [key, _] : root.items())
    if (key != "loss" && key != "inference" && key != "train" && key != "augment" &&
        key != "scorer")
      throw ConfigError("unknown section " + key);

  PipelineConfig c;
  SectionReader(root, "loss")
      .field("m1", c.loss.m1)
      .field("m2", c.loss.m2)
      .field("m3", c.loss.m3)
      .field("alpha", c.loss.alpha)
      .field("beta", c.loss.beta)
      .field("gamma", c.loss.gamma)
      .field("lambda", c.loss.lambda)
      .field("bce_pos_weight", c.loss.bce_pos_weight)
      .field("sample_m", c.loss.sample_m)
      .finish();
  SectionReader(root, "inference")
      .field("d_min", c.inference.d_min)
      .field("delta_min", c.inference.delta_min)
      .finish();
  SectionReader(root, "train")
      .field("learning_rate", c.train.learning_rate)
      .field("weight_decay", c.train.weight_decay)
      .field("epochs", c.train.epochs)
      .field("batch_size", c.train.batch_size)
      .field("grad_accum_steps", c.train.grad_accum_steps)
      .field("warmup_steps", c.train.warmup_steps)
      .field("seed", c.train.seed)
      .field("parallelism", c.train.parallelism)
      .finish();
  SectionReader(root, "augment")
      .field("p_drop_extra_crit", c.augment.p_drop_extra_crit)
      .field("p_drop_extra_noncrit", c.augment.p_drop_extra_noncrit)
      .field("p_insert_punct", c.augment.p_insert_punct)
      .field("p_add_affix", c.augment.p_add_affix)
      .finish();
  SectionReader(root, "scorer")
      .field("dim", c.scorer.dims.dim)
      .field("heads", c.scorer.dims.heads)
      .field("bucket_count", c.scorer.dims.bucket_count)
      .field("init_scale", c.scorer.init_scale)
      .finish();
  c.validate();
  return c;
}

PipelineConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

std::string dump_config(const PipelineConfig& cfg, int indent) {
  return to_json(cfg).dump(indent);
}

std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("LOO_PRUNE_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long seed = std::strtoull(v, &end, 10);
  if (*end != '\0' || v[0] == '-') throw ConfigError("LOO_PRUNE_SEED must be a non-negative integer");
  return seed;
}

void apply_seed_override(PipelineConfig& cfg) {
  if (auto s = seed_from_env()) cfg.train.seed = *s;
}

std::string config_hash(const PipelineConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

SynthSpec parse_synth_spec(const std::string& json_text) {
  json root = parse_object(json_text);
  // Accept either a bare object or one wrapped in a "synth" section.
  if (root.size() == 1 && root.contains("synth")) root = json{{"synth", root["synth"]}};
  else root = json{{"synth", root}};
  SynthSpec s;
  SectionReader(root, "synth")
      .field("n_questions", s.n_questions)
      .field("passages_per_question", s.passages_per_question)
      .field("min_sentences", s.min_sentences)
      .field("max_sentences", s.max_sentences)
      .field("min_clues", s.min_clues)
      .field("max_clues", s.max_clues)
      .field("distractor_vocab_size", s.distractor_vocab_size)
      .field("key_terms_per_clue", s.key_terms_per_clue)
      .field("key_term_max_df", s.key_term_max_df)
      .field("min_sentence_words", s.min_sentence_words)
      .field("max_sentence_words", s.max_sentence_words)
      .field("zipf_exponent", s.zipf_exponent)
      .field("seed", s.seed)
      .finish();
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

SynthSpec load_synth_spec(const std::string& path) {
  return parse_synth_spec(read_file(path));
}

std::string dump_synth_spec(const SynthSpec& s) {
  ordered_json j = {{"n_questions", s.n_questions},
                    {"passages_per_question", s.passages_per_question},
                    {"min_sentences", s.min_sentences},
                    {"max_sentences", s.max_sentences},
                    {"min_clues", s.min_clues},
                    {"max_clues", s.max_clues},
                    {"distractor_vocab_size", s.distractor_vocab_size},
                    {"key_terms_per_clue", s.key_terms_per_clue},
                    {"key_term_max_df", s.key_term_max_df},
                    {"min_sentence_words", s.min_sentence_words},
                    {"max_sentence_words", s.max_sentence_words},
                    {"zipf_exponent", s.zipf_exponent},
                    {"seed", s.seed}};
  return j.dump(2);
}

}  // namespace looprune
