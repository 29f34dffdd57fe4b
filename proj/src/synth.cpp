#include "looprune/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "looprune/rng.hpp"
#include "looprune/scorer.hpp"

namespace looprune {
namespace {

constexpr std::array<const char*, 16> kRelations = {
    "founded",  "married", "discovered", "composed", "governed", "designed",
    "captured", "painted", "inherited",  "surveyed", "defeated", "translated",
    "financed", "built",   "directed",   "chartered"};

// Fixed question template; none of these words occur in passages.
constexpr const char* kQuestionHead = "Which name is tied to";

constexpr std::array<const char*, 12> kOnsets = {"b", "d", "f", "g", "k", "l",
                                                 "m", "n", "p", "r", "s", "t"};
constexpr std::array<const char*, 5> kVowels = {"a", "e", "i", "o", "u"};
constexpr std::array<const char*, 6> kCodas = {"", "n", "r", "l", "s", "x"};

std::string syllable(Rng& rng) {
  return std::string(kOnsets[rng.uniform_index(kOnsets.size())]) +
         kVowels[rng.uniform_index(kVowels.size())] +
         kCodas[rng.uniform_index(kCodas.size())];
}

std::string capitalize(std::string w) {
  if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

// Draws pseudo-words that are unique across every vocabulary in one run.
// Words that share a default hash bucket with a relation or template word
// are rejected as well, so the neural scorer sees those markers cleanly.
class WordFactory {
 public:
  explicit WordFactory(Rng& rng) : rng_(rng) {
    for (const char* r : kRelations) reserve(r);
    for (const char* w : {"which", "name", "is", "tied", "to", "and"}) reserve(w);
  }

  std::string fresh(std::size_t min_syl, std::size_t max_syl, std::string_view prefix = "") {
    for (;;) {
      std::string w(prefix);
      const std::size_t n = min_syl + rng_.uniform_index(max_syl - min_syl + 1);
      for (std::size_t i = 0; i < n; ++i) w += syllable(rng_);
      if (reserved_buckets_.count(hash_bucket(w, kDefaultBucketCount))) continue;
      if (taken_.insert(w).second) return w;
    }
  }

 private:
  void reserve(const char* word) {
    taken_.insert(word);
    reserved_buckets_.insert(hash_bucket(word, kDefaultBucketCount));
  }

  Rng& rng_;
  std::unordered_set<std::string> taken_;
  std::unordered_set<std::uint32_t> reserved_buckets_;
};

// Inverse-CDF sampling over rank weights 1 / rank^s.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double s) : cdf_(n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += 1.0 / std::pow(static_cast<double>(i + 1), s);
      cdf_[i] = acc;
    }
    for (double& c : cdf_) c /= acc;
  }
  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()),
                                 cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

std::size_t in_range(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_index(hi - lo + 1);
}

}  // namespace

void SynthSpec::validate() const {
  if (n_questions == 0 || passages_per_question == 0)
    throw std::invalid_argument("n_questions and passages_per_question must be positive");
  if (min_sentences == 0 || min_sentences > max_sentences)
    throw std::invalid_argument("bad sentences_per_passage range");
  if (min_clues == 0 || min_clues > max_clues)
    throw std::invalid_argument("clues_per_question range must start at 1 or more");
  if (max_clues > passages_per_question)
    throw std::invalid_argument("each clue needs its own passage");
  if (distractor_vocab_size < 10)
    throw std::invalid_argument("distractor_vocab_size too small");
  if (key_terms_per_clue == 0 || key_term_max_df == 0)
    throw std::invalid_argument("key term settings must be positive");
  if (min_sentence_words < 2 || min_sentence_words > max_sentence_words)
    throw std::invalid_argument("bad sentence length range");
  if (!(zipf_exponent > 0)) throw std::invalid_argument("zipf_exponent must be positive");
}

SynthDataset generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  WordFactory words(rng);

  std::vector<std::string> distractors;
  for (std::size_t i = 0; i < spec.distractor_vocab_size; ++i)
    distractors.push_back(words.fresh(1, 3));
  std::vector<std::string> names;
  for (std::size_t i = 0; i < 200; ++i) names.push_back(capitalize(words.fresh(2, 3)));
  const ZipfSampler zipf(distractors.size(), spec.zipf_exponent);

  // Key terms, with per-term usage counts for key_term_max_df.
  std::vector<std::string> key_pool;
  std::vector<std::size_t> key_uses;

  SynthDataset out;
  std::set<std::string> all_keys;

  for (std::size_t q = 0; q < spec.n_questions; ++q) {
    const std::size_t n_clues = in_range(rng, spec.min_clues, spec.max_clues);
    const std::string answer = names[rng.uniform_index(names.size())];

    std::set<std::string> used_here;
    auto pick_key = [&]() -> std::string {
      if (spec.key_term_max_df > 1 && !key_pool.empty() && rng.bernoulli(0.5)) {
        for (int attempt = 0; attempt < 8; ++attempt) {
          const std::size_t i = rng.uniform_index(key_pool.size());
          if (key_uses[i] < spec.key_term_max_df && !used_here.count(key_pool[i])) {
            ++key_uses[i];
            used_here.insert(key_pool[i]);
            return key_pool[i];
          }
        }
      }
      std::string k = words.fresh(3, 3, "q");
      key_pool.push_back(k);
      key_uses.push_back(1);
      used_here.insert(k);
      return k;
    };

    auto filler = [&](std::size_t count) {
      std::string s;
      for (std::size_t i = 0; i < count; ++i) s += " " + distractors[zipf.sample(rng)];
      return s;
    };

    std::vector<std::string> clue_sentences;
    std::vector<std::string> question_keys;
    for (std::size_t c = 0; c < n_clues; ++c) {
      const std::string entity =
          c == 0 ? answer : names[rng.uniform_index(names.size())];
      std::string sentence = entity + " " + kRelations[rng.uniform_index(kRelations.size())];
      for (std::size_t t = 0; t < spec.key_terms_per_clue; ++t) {
        const std::string key = pick_key();
        sentence += " " + key;
        question_keys.push_back(key);
        all_keys.insert(key);
      }
      const std::size_t len = in_range(rng, spec.min_sentence_words, spec.max_sentence_words);
      const std::size_t used = 2 + spec.key_terms_per_clue;
      sentence += filler(len > used ? len - used : 0) + ". ";
      clue_sentences.push_back(std::move(sentence));
    }

    auto distractor_sentence = [&]() {
      const std::size_t len = in_range(rng, spec.min_sentence_words, spec.max_sentence_words);
      std::string s = capitalize(distractors[zipf.sample(rng)]) + filler(len - 1);
      if (rng.bernoulli(0.3)) {
        std::string name = names[rng.uniform_index(names.size())];
        if (name != answer) s += " " + name;
      }
      return s + ". ";
    };

    // Distinct passages for the clues.
    std::vector<std::size_t> slots(spec.passages_per_question);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    rng.shuffle(slots);

    DatasetRecord rec;
    rec.id = "synth-" + std::to_string(q);
    rec.question = kQuestionHead;
    for (std::size_t i = 0; i < question_keys.size(); ++i)
      rec.question += (i == 0 ? " " : (i + 1 == question_keys.size() ? " and " : " ")) +
                      question_keys[i];
    rec.question += "?";
    rec.answers = {answer};

    for (std::size_t p = 0; p < spec.passages_per_question; ++p) {
      const std::size_t n = in_range(rng, spec.min_sentences, spec.max_sentences);
      std::vector<std::string> sentences;
      std::vector<int> labels(n, 0);
      for (std::size_t k = 0; k < n; ++k) sentences.push_back(distractor_sentence());
      for (std::size_t c = 0; c < n_clues; ++c) {
        if (slots[c] != p) continue;
        const std::size_t at = rng.uniform_index(n);
        sentences[at] = clue_sentences[c];
        labels[at] = 1;
      }
      // Last sentence of a passage carries no trailing space.
      std::string& last = sentences.back();
      while (!last.empty() && last.back() == ' ') last.pop_back();
      rec.passages.push_back(passage_from_sentences(
          "q" + std::to_string(q) + "-d" + std::to_string(p), std::move(sentences),
          std::move(labels)));
    }
    out.records.push_back(std::move(rec));
  }
  out.clue_terms.assign(all_keys.begin(), all_keys.end());
  return out;
}

}  // namespace looprune
