#include "looprune/scorer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <type_traits>
#include <unordered_set>

#include "looprune/parallel.hpp"
#include "looprune/rng.hpp"
#include "looprune/text.hpp"

namespace looprune {
namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
constexpr char kMagic[5] = {'L', 'O', 'O', 'P', '1'};

void check_finite(double v) {
  if (!std::isfinite(v)) throw NumericalError("numerical overflow");
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("truncated scorer params header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void get_f64s(std::istream& in, std::vector<double>& dst) {
  std::vector<unsigned char> buf(dst.size() * 8);
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size())))
    throw std::runtime_error("truncated scorer params body");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(buf[i * 8 + k]) << (8 * k);
    dst[i] = std::bit_cast<double>(bits);
  }
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::uint32_t hash_bucket(std::string_view token, std::uint32_t bucket_count) {
  std::uint64_t h = kFnvOffset;
  for (unsigned char c : token) {
    h ^= c;
    h *= kFnvPrime;
  }
  return 1 + static_cast<std::uint32_t>(h % (bucket_count - 1));
}

std::vector<std::uint32_t> tokenize_text(std::string_view text,
                                         std::uint32_t bucket_count) {
  std::vector<std::uint32_t> ids;
  for (const auto& w : split_words(text)) ids.push_back(hash_bucket(w, bucket_count));
  return ids;
}

TokenSequence tokenize(std::string_view query,
                       std::span<const std::string_view> sentences,
                       std::uint32_t bucket_count) {
  TokenSequence seq;
  seq.ids = tokenize_text(query, bucket_count);
  seq.ids.push_back(kSeparatorId);
  for (auto s : sentences) {
    auto ids = tokenize_text(s, bucket_count);
    seq.ids.insert(seq.ids.end(), ids.begin(), ids.end());
  }
  seq.is_padding.assign(seq.ids.size(), 0);
  return seq;
}

void pad_to(TokenSequence& seq, std::size_t length) {
  while (seq.ids.size() < length) {
    seq.ids.push_back(kSeparatorId);
    seq.is_padding.push_back(1);
  }
}

// ---------------------------------------------------------------------------

ScorerParams ScorerParams::zeros(ScorerDims dims) {
  ScorerParams p;
  p.dims = dims;
  const std::size_t d = dims.dim;
  p.embedding_table.assign(static_cast<std::size_t>(dims.bucket_count) * d, 0.0);
  p.pooling_queries.assign(static_cast<std::size_t>(dims.heads) * d, 0.0);
  p.output_projection.assign(static_cast<std::size_t>(dims.heads) * d * d, 0.0);
  p.head_weights.assign(d, 0.0);
  return p;
}

ScorerParams ScorerParams::random(ScorerDims dims, std::uint64_t seed,
                                  double scale) {
  ScorerParams p = zeros(dims);
  Rng rng(seed);
  const double d = dims.dim;
  for (double& x : p.embedding_table) x = scale * rng.normal();
  for (double& x : p.pooling_queries) x = scale * rng.normal();
  const double proj_std = scale / std::sqrt(dims.heads * d);
  for (double& x : p.output_projection) x = proj_std * rng.normal();
  const double head_std = scale / std::sqrt(d);
  for (double& x : p.head_weights) x = head_std * rng.normal();
  return p;
}

void ScorerParams::validate() const {
  if (dims.dim == 0 || dims.heads == 0)
    throw std::invalid_argument("dim and heads must be positive");
  if (dims.dim % dims.heads != 0)
    throw std::invalid_argument("dim must be divisible by heads");
  if (dims.bucket_count < 2)
    throw std::invalid_argument("bucket_count must be at least 2");
  const std::size_t d = dims.dim;
  if (embedding_table.size() != static_cast<std::size_t>(dims.bucket_count) * d ||
      pooling_queries.size() != static_cast<std::size_t>(dims.heads) * d ||
      output_projection.size() != static_cast<std::size_t>(dims.heads) * d * d ||
      head_weights.size() != d)
    throw std::invalid_argument("scorer params shape mismatch");
  if (!all_finite(embedding_table) || !all_finite(pooling_queries) ||
      !all_finite(output_projection) || !all_finite(head_weights) ||
      !std::isfinite(bias))
    throw std::invalid_argument("scorer params contain non-finite values");
}

std::size_t ScorerParams::parameter_count() const {
  return embedding_table.size() + pooling_queries.size() +
         output_projection.size() + head_weights.size() + 1;
}

void write_params(std::ostream& out, const ScorerParams& params) {
  params.validate();
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, params.dims.dim);
  put_u32(out, params.dims.heads);
  put_u32(out, params.dims.bucket_count);
  for (double v : params.embedding_table) put_f64(out, v);
  for (double v : params.pooling_queries) put_f64(out, v);
  for (double v : params.output_projection) put_f64(out, v);
  for (double v : params.head_weights) put_f64(out, v);
  put_f64(out, params.bias);
  if (!out) throw std::runtime_error("failed to write scorer params");
}

ScorerParams read_params(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a scorer params file (bad magic)");
  ScorerDims dims;
  dims.dim = get_u32(in);
  dims.heads = get_u32(in);
  dims.bucket_count = get_u32(in);
  if (dims.dim == 0 || dims.heads == 0 || dims.bucket_count < 2 ||
      dims.dim > 4096 || dims.heads > 4096)
    throw std::runtime_error("implausible scorer dims in params file");
  ScorerParams p = ScorerParams::zeros(dims);
  get_f64s(in, p.embedding_table);
  get_f64s(in, p.pooling_queries);
  get_f64s(in, p.output_projection);
  get_f64s(in, p.head_weights);
  std::vector<double> bias(1);
  get_f64s(in, bias);
  p.bias = bias[0];
  p.validate();
  return p;
}

void save_params(const ScorerParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_params(out, params);
}

ScorerParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read scorer params: " + path);
  return read_params(in);
}

// ---------------------------------------------------------------------------

ScorerGradient::ScorerGradient(ScorerDims d) : dims(d) {
  pooling_queries.assign(static_cast<std::size_t>(d.heads) * d.dim, 0.0);
  output_projection.assign(static_cast<std::size_t>(d.heads) * d.dim * d.dim, 0.0);
  head_weights.assign(d.dim, 0.0);
}

std::vector<double>& ScorerGradient::embedding_row(std::uint32_t id) {
  auto [it, inserted] = embedding_rows.try_emplace(id);
  if (inserted) it->second.assign(dims.dim, 0.0);
  return it->second;
}

void ScorerGradient::add(const ScorerGradient& other, double weight) {
  for (const auto& [id, row] : other.embedding_rows) {
    auto& dst = embedding_row(id);
    for (std::size_t j = 0; j < row.size(); ++j) dst[j] += weight * row[j];
  }
  for (std::size_t i = 0; i < pooling_queries.size(); ++i)
    pooling_queries[i] += weight * other.pooling_queries[i];
  for (std::size_t i = 0; i < output_projection.size(); ++i)
    output_projection[i] += weight * other.output_projection[i];
  for (std::size_t i = 0; i < head_weights.size(); ++i)
    head_weights[i] += weight * other.head_weights[i];
  bias += weight * other.bias;
}

void ScorerGradient::scale(double factor) {
  for (auto& [id, row] : embedding_rows)
    for (double& v : row) v *= factor;
  for (double& v : pooling_queries) v *= factor;
  for (double& v : output_projection) v *= factor;
  for (double& v : head_weights) v *= factor;
  bias *= factor;
}

void ScorerGradient::check_finite() const {
  for (const auto& [id, row] : embedding_rows)
    if (!all_finite(row))
      throw NumericalError("non-finite gradient in embedding_table row " +
                           std::to_string(id));
  if (!all_finite(pooling_queries))
    throw NumericalError("non-finite gradient in pooling_queries");
  if (!all_finite(output_projection))
    throw NumericalError("non-finite gradient in output_projection");
  if (!all_finite(head_weights))
    throw NumericalError("non-finite gradient in head_weights");
  if (!std::isfinite(bias)) throw NumericalError("non-finite gradient in bias");
}

// ---------------------------------------------------------------------------

namespace {

// Shared by the double and extended-precision entry points. Only the double
// instantiation fills a cache.
template <class T>
T forward_pass(const ScorerParams& params, const TokenSequence& seq, ForwardCache* cache) {
  const std::size_t d = params.dims.dim;
  const std::size_t heads = params.dims.heads;

  std::vector<std::uint32_t> ids;
  ids.reserve(seq.ids.size());
  for (std::size_t t = 0; t < seq.ids.size(); ++t) {
    if (seq.is_padding.empty() || !seq.is_padding[t]) {
      if (seq.ids[t] >= params.dims.bucket_count)
        throw std::out_of_range("token id outside embedding table");
      ids.push_back(seq.ids[t]);
    }
  }
  std::sort(ids.begin(), ids.end());
  const std::size_t T_len = ids.size();
  if (T_len == 0) throw std::invalid_argument("token sequence has no real tokens");

  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<T> attention(heads * T_len);
  std::vector<T> pooled(heads * d, T(0));
  std::vector<T> logits(T_len);

  for (std::size_t h = 0; h < heads; ++h) {
    const double* q = &params.pooling_queries[h * d];
    T max_logit = -std::numeric_limits<T>::infinity();
    for (std::size_t t = 0; t < T_len; ++t) {
      const double* e = &params.embedding_table[ids[t] * d];
      T dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += static_cast<T>(q[j]) * e[j];
      logits[t] = dot * inv_sqrt_d;
      check_finite(static_cast<double>(logits[t]));
      max_logit = std::max(max_logit, logits[t]);
    }
    T norm = 0;
    T* a = &attention[h * T_len];
    for (std::size_t t = 0; t < T_len; ++t) {
      a[t] = std::exp(logits[t] - max_logit);
      norm += a[t];
    }
    T* u = &pooled[h * d];
    for (std::size_t t = 0; t < T_len; ++t) {
      a[t] /= norm;
      const double* e = &params.embedding_table[ids[t] * d];
      for (std::size_t j = 0; j < d; ++j) u[j] += a[t] * e[j];
    }
  }

  std::vector<T> projected(d, T(0));
  for (std::size_t i = 0; i < heads * d; ++i) {
    const T ui = pooled[i];
    const double* row = &params.output_projection[i * d];
    for (std::size_t j = 0; j < d; ++j) projected[j] += ui * row[j];
  }
  T score = params.bias;
  for (std::size_t j = 0; j < d; ++j) score += static_cast<T>(params.head_weights[j]) * projected[j];
  check_finite(static_cast<double>(score));

  if constexpr (std::is_same_v<T, double>) {
    if (cache) {
      cache->ids = std::move(ids);
      cache->attention = std::move(attention);
      cache->pooled = std::move(pooled);
      cache->projected = std::move(projected);
      cache->score = score;
    }
  }
  return score;
}

}  // namespace

double neural_forward(const ScorerParams& params, const TokenSequence& seq,
                      ForwardCache* cache) {
  return forward_pass<double>(params, seq, cache);
}

long double neural_forward_extended(const ScorerParams& params, const TokenSequence& seq) {
  return forward_pass<long double>(params, seq, nullptr);
}

void neural_backward(const ScorerParams& params, const ForwardCache& cache,
                     double upstream, ScorerGradient& grad) {
  const std::size_t d = params.dims.dim;
  const std::size_t heads = params.dims.heads;
  const std::size_t T = cache.ids.size();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  grad.bias += upstream;
  std::vector<double> d_proj(d);
  for (std::size_t j = 0; j < d; ++j) {
    grad.head_weights[j] += upstream * cache.projected[j];
    d_proj[j] = upstream * params.head_weights[j];
  }

  std::vector<double> d_pooled(heads * d, 0.0);
  for (std::size_t i = 0; i < heads * d; ++i) {
    const double ui = cache.pooled[i];
    const double* row = &params.output_projection[i * d];
    double* grow = &grad.output_projection[i * d];
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      grow[j] += ui * d_proj[j];
      acc += row[j] * d_proj[j];
    }
    d_pooled[i] = acc;
  }

  std::vector<double> d_attn(T);
  for (std::size_t h = 0; h < heads; ++h) {
    const double* du = &d_pooled[h * d];
    const double* a = &cache.attention[h * T];
    const double* q = &params.pooling_queries[h * d];
    double* dq = &grad.pooling_queries[h * d];

    double weighted = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double* e = &params.embedding_table[cache.ids[t] * d];
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += du[j] * e[j];
      d_attn[t] = dot;
      weighted += a[t] * dot;
    }
    for (std::size_t t = 0; t < T; ++t) {
      const double d_logit = a[t] * (d_attn[t] - weighted) * inv_sqrt_d;
      const double* e = &params.embedding_table[cache.ids[t] * d];
      auto& de = grad.embedding_row(cache.ids[t]);
      for (std::size_t j = 0; j < d; ++j) {
        dq[j] += d_logit * e[j];
        de[j] += a[t] * du[j] + d_logit * q[j];
      }
    }
  }
}

double score_neural(const ScorerParams& params, const ScorerInput& input) {
  const TokenSequence seq =
      tokenize(input.query, input.sentences, params.dims.bucket_count);
  return neural_forward(params, seq);
}

NeuralScorer::NeuralScorer(ScorerParams params) : params_(std::move(params)) {
  params_.validate();
}

double NeuralScorer::score(const ScorerInput& input) const {
  return score_neural(params_, input);
}

// ---------------------------------------------------------------------------

IdfTable IdfTable::build(std::span<const std::string> documents) {
  std::map<std::string, std::size_t> df;
  for (const auto& doc : documents) {
    auto words = split_words(doc);
    std::set<std::string> unique(words.begin(), words.end());
    for (const auto& w : unique) ++df[w];
  }
  const double n = static_cast<double>(documents.size());
  std::map<std::string, double> weights;
  for (const auto& [term, count] : df)
    weights.emplace(term, std::log(1.0 + n / static_cast<double>(count)));
  return IdfTable(std::move(weights));
}

IdfTable IdfTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read idf table: " + path);
  std::map<std::string, double> weights;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected term<TAB>weight");
    try {
      std::size_t used = 0;
      const std::string num = line.substr(tab + 1);
      const double w = std::stod(num, &used);
      if (used != num.size() || !std::isfinite(w)) throw std::invalid_argument("");
      weights[line.substr(0, tab)] = w;
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed weight");
    }
  }
  return IdfTable(std::move(weights));
}

void IdfTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  char buf[64];
  for (const auto& [term, w] : weights_) {
    std::snprintf(buf, sizeof(buf), "%.17g", w);
    out << term << '\t' << buf << '\n';
  }
}

double IdfTable::weight(std::string_view term) const {
  auto it = weights_.find(std::string(term));
  return it == weights_.end() ? 0.0 : it->second;
}

double score_lexical(const IdfTable& idf, const ScorerInput& input) {
  const auto query_words = split_words(input.query);
  const std::set<std::string> query_terms(query_words.begin(), query_words.end());
  std::unordered_set<std::string> context;
  for (auto s : input.sentences)
    for (auto& w : split_words(s)) context.insert(std::move(w));
  double total = 0.0;
  for (const auto& t : query_terms)
    if (context.count(t)) total += idf.weight(t);
  return total;
}

std::vector<double> score_batch(const Scorer& scorer,
                                std::span<const ScorerInput> inputs,
                                unsigned parallelism) {
  std::vector<double> out(inputs.size());
  parallel_for(inputs.size(), parallelism, [&](std::size_t i) {
    try {
      out[i] = scorer.score(inputs[i]);
    } catch (const ScoringError&) {
      throw;
    } catch (const std::exception& e) {
      throw ScoringError(i, e.what());
    }
  });
  return out;
}

}  // namespace looprune
