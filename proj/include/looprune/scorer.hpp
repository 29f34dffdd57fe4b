#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace looprune {

// The context variant handed to a clue-richness scorer. Views must outlive
// the call. An empty sentence list is the full-removal variant of a
// one-sentence passage.
struct ScorerInput {
  std::string_view query;
  std::vector<std::string_view> sentences;
};

// ---------------------------------------------------------------------------
// Tokenization

inline constexpr std::uint32_t kSeparatorId = 0;
inline constexpr std::uint32_t kDefaultBucketCount = 1u << 16;

struct TokenSequence {
  std::vector<std::uint32_t> ids;
  std::vector<std::uint8_t> is_padding;  // aligned with ids

  std::size_t size() const { return ids.size(); }
};

// FNV-1a 64 of the token, folded into [1, bucket_count). Bucket 0 is the
// separator.
std::uint32_t hash_bucket(std::string_view token, std::uint32_t bucket_count);

// Bucket ids of the lowercased words of `text`.
std::vector<std::uint32_t> tokenize_text(std::string_view text,
                                         std::uint32_t bucket_count);

// Query tokens, the separator, then each sentence's tokens in order. Words
// never span sentence boundaries.
TokenSequence tokenize(std::string_view query,
                       std::span<const std::string_view> sentences,
                       std::uint32_t bucket_count = kDefaultBucketCount);

// Appends padding positions (id = separator, is_padding = 1).
void pad_to(TokenSequence& seq, std::size_t length);

// ---------------------------------------------------------------------------
// Neural scorer parameters

struct ScorerDims {
  std::uint32_t dim = 64;
  std::uint32_t heads = 8;
  std::uint32_t bucket_count = kDefaultBucketCount;
  bool operator==(const ScorerDims&) const = default;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Attention-pooling scorer parameters, field order as serialized.
struct ScorerParams {
  ScorerDims dims;
  std::vector<double> embedding_table;    // bucket_count x dim
  std::vector<double> pooling_queries;    // heads x dim
  std::vector<double> output_projection;  // (heads * dim) x dim
  std::vector<double> head_weights;       // dim
  double bias = 0.0;

  static ScorerParams zeros(ScorerDims dims);

  // Gaussian initialization in field order from one Rng stream: embeddings
  // and pooling queries with std `scale`, the projection with
  // scale / sqrt(heads * dim), head weights with scale / sqrt(dim). Bias 0.
  static ScorerParams random(ScorerDims dims, std::uint64_t seed,
                             double scale = 1.0);

  // Throws std::invalid_argument on shape mismatch, dim % heads != 0, or a
  // non-finite entry.
  void validate() const;

  std::size_t parameter_count() const;
};

// Binary checkpoint: "LOOP1", dim, heads, bucket_count as little-endian
// uint32, then little-endian float64 values in field order.
void write_params(std::ostream& out, const ScorerParams& params);
ScorerParams read_params(std::istream& in);
void save_params(const ScorerParams& params, const std::string& path);
ScorerParams load_params(const std::string& path);

// Gradient with respect to ScorerParams. Embedding rows are sparse since a
// step touches only the buckets present in its token sequences.
struct ScorerGradient {
  ScorerDims dims;
  std::unordered_map<std::uint32_t, std::vector<double>> embedding_rows;
  std::vector<double> pooling_queries;
  std::vector<double> output_projection;
  std::vector<double> head_weights;
  double bias = 0.0;

  explicit ScorerGradient(ScorerDims d);

  std::vector<double>& embedding_row(std::uint32_t id);
  void add(const ScorerGradient& other, double weight = 1.0);
  void scale(double factor);
  // Throws NumericalError naming the first non-finite parameter block.
  void check_finite() const;
};

// Intermediate values of one forward pass, consumed by neural_backward.
struct ForwardCache {
  std::vector<std::uint32_t> ids;   // non-padding ids, sorted
  std::vector<double> attention;    // heads x T
  std::vector<double> pooled;       // heads * dim (concatenated summaries)
  std::vector<double> projected;    // dim
  double score = 0.0;
};

// Forward pass. Each pooling query attends over the non-padding token
// embeddings with scaled dot-product softmax (padding contributes nothing);
// the H summaries are concatenated, projected to dim and mapped to a scalar
// logit by the final linear unit. Dropout is the identity at inference.
// Tokens are processed in sorted id order, so the score depends only on the
// token multiset. Throws NumericalError("numerical overflow") on non-finite
// intermediates.
double neural_forward(const ScorerParams& params, const TokenSequence& seq,
                      ForwardCache* cache = nullptr);

// The same pass accumulated in long double, for finite-difference checks.
long double neural_forward_extended(const ScorerParams& params, const TokenSequence& seq);

// Accumulates upstream * d(score)/d(params) into grad.
void neural_backward(const ScorerParams& params, const ForwardCache& cache,
                     double upstream, ScorerGradient& grad);

double score_neural(const ScorerParams& params, const ScorerInput& input);

// ---------------------------------------------------------------------------
// Lexical baseline

// term -> log(1 + N / df(term)).
class IdfTable {
 public:
  IdfTable() = default;
  explicit IdfTable(std::map<std::string, double> weights)
      : weights_(std::move(weights)) {}

  // Each document is one unit for document frequency.
  static IdfTable build(std::span<const std::string> documents);

  // UTF-8 lines "term<TAB>weight".
  static IdfTable load(const std::string& path);
  void save(const std::string& path) const;

  // Unknown terms weigh 0.
  double weight(std::string_view term) const;
  const std::map<std::string, double>& weights() const { return weights_; }

 private:
  std::map<std::string, double> weights_;
};

// Sum of weights of distinct query terms present anywhere in the context.
double score_lexical(const IdfTable& idf, const ScorerInput& input);

// ---------------------------------------------------------------------------
// Scorer interface

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double score(const ScorerInput& input) const = 0;
  virtual std::string name() const = 0;
};

class NeuralScorer final : public Scorer {
 public:
  explicit NeuralScorer(ScorerParams params);
  double score(const ScorerInput& input) const override;
  std::string name() const override { return "neural"; }
  const ScorerParams& params() const { return params_; }

 private:
  ScorerParams params_;
};

class LexicalScorer final : public Scorer {
 public:
  explicit LexicalScorer(IdfTable idf) : idf_(std::move(idf)) {}
  double score(const ScorerInput& input) const override {
    return score_lexical(idf_, input);
  }
  std::string name() const override { return "lexical"; }
  const IdfTable& idf() const { return idf_; }

 private:
  IdfTable idf_;
};

class ScoringError : public std::runtime_error {
 public:
  ScoringError(std::size_t index, const std::string& what)
      : std::runtime_error("input " + std::to_string(index) + ": " + what),
        index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

// Element i is scorer.score(inputs[i]). Results do not depend on
// parallelism. The failure with the smallest index is rethrown as a
// ScoringError.
std::vector<double> score_batch(const Scorer& scorer,
                                std::span<const ScorerInput> inputs,
                                unsigned parallelism = 1);

}  // namespace looprune
