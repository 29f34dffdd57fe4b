#include "looprune/segmenter.hpp"

#include <fstream>
#include <stdexcept>

namespace looprune {
namespace {

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

// Length of a closing quote or bracket starting at pos, 0 if none.
std::size_t closing_len(std::string_view s, std::size_t pos) {
  const char c = s[pos];
  if (c == '"' || c == '\'' || c == ')' || c == ']' || c == '}') return 1;
  if (s.substr(pos, 3) == "\xE2\x80\x9D" || s.substr(pos, 3) == "\xE2\x80\x99")
    return 3;
  if (s.substr(pos, 2) == "\xC2\xBB") return 2;
  return 0;
}

bool starts_sentence(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

// The whitespace-delimited word ending at `last` (inclusive), with leading
// opening brackets and quotes removed.
std::string_view word_ending_at(std::string_view s, std::size_t last) {
  std::size_t begin = last;
  while (begin > 0 && !is_ascii_space(s[begin - 1])) --begin;
  std::string_view w = s.substr(begin, last - begin + 1);
  while (!w.empty() && (w.front() == '(' || w.front() == '[' ||
                        w.front() == '"' || w.front() == '\'')) {
    w.remove_prefix(1);
  }
  return w;
}

void reindex(Passage& p, const TokenCounter& counter) {
  std::size_t offset = 0;
  for (std::size_t i = 0; i < p.sentences.size(); ++i) {
    Sentence& s = p.sentences[i];
    s.index = i;
    s.span = {offset, offset + s.text.size()};
    s.token_count = counter.count(s.text);
    offset = s.span.end;
  }
}

void append_passage(Passage& into, Passage&& from, std::size_t skip) {
  const bool keep_labels = into.labels.has_value() && from.labels.has_value();
  if (keep_labels) {
    for (std::size_t k = 0; k < skip; ++k) {
      int& dst = (*into.labels)[into.size() - skip + k];
      dst = dst | (*from.labels)[k];
    }
    into.labels->insert(into.labels->end(), from.labels->begin() + skip,
                        from.labels->end());
  } else {
    into.labels.reset();
  }
  for (std::size_t k = skip; k < from.sentences.size(); ++k)
    into.sentences.push_back(std::move(from.sentences[k]));
}

// Largest k >= 1 such that the last k sentences of a equal the first k of b
// (trailing whitespace ignored), or 0.
std::size_t sentence_overlap(const Passage& a, const Passage& b) {
  const std::size_t max_k = std::min(a.size(), b.size());
  for (std::size_t k = max_k; k >= 1; --k) {
    bool match = true;
    for (std::size_t i = 0; i < k && match; ++i) {
      match = rtrim(a.sentences[a.size() - k + i].text) ==
              rtrim(b.sentences[i].text);
    }
    if (match) return k;
  }
  return 0;
}

}  // namespace

std::string Passage::text() const {
  std::string out;
  for (const auto& s : sentences) out += s.text;
  return out;
}

AbbreviationList::AbbreviationList(std::vector<std::string> entries)
    : entries_(entries.begin(), entries.end()) {}

AbbreviationList AbbreviationList::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read abbreviation list: " + path);
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    entries.emplace_back(t);
  }
  return AbbreviationList(std::move(entries));
}

const AbbreviationList& AbbreviationList::builtin() {
  // Mirrors data/abbreviations.txt.
  static const AbbreviationList list({
      "Mr.",   "Mrs.",  "Ms.",  "Dr.",   "Prof.", "Sr.",   "Jr.",  "St.",
      "Mt.",   "Gen.",  "Col.", "Lt.",   "Sgt.",  "Capt.", "Gov.", "Sen.",
      "Rep.",  "Rev.",  "Inc.", "Ltd.",  "Co.",   "Corp.", "vs.",  "etc.",
      "e.g.",  "i.e.",  "U.S.", "U.K.",  "No.",   "Fig.",  "approx.",
      "Jan.",  "Feb.",  "Aug.", "Sept.", "Oct.",  "Nov.",  "Dec.",
  });
  return list;
}

bool AbbreviationList::contains(std::string_view word) const {
  return entries_.count(std::string(word)) > 0;
}

std::vector<std::string> AbbreviationList::entries() const {
  return {entries_.begin(), entries_.end()};
}

Passage segment(std::string_view chunk, const AbbreviationList& abbreviations,
                const TokenCounter& counter) {
  if (chunk.empty()) throw std::invalid_argument("empty chunk");

  std::vector<std::size_t> cuts;
  const std::size_t n = chunk.size();
  std::size_t i = 0;
  while (i < n) {
    if (!is_terminal(chunk[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && is_terminal(chunk[j])) ++j;
    const std::size_t last_terminal = j - 1;
    while (j < n) {
      const std::size_t len = closing_len(chunk, j);
      if (len == 0) break;
      j += len;
    }
    std::size_t k = j;
    while (k < n && is_ascii_space(chunk[k])) ++k;
    const bool boundary = k > j && k < n && starts_sentence(chunk[k]);
    if (boundary) {
      const bool guarded =
          chunk[last_terminal] == '.' &&
          abbreviations.contains(word_ending_at(chunk, last_terminal));
      if (!guarded) cuts.push_back(k);
    }
    i = j;
  }

  Passage p;
  std::size_t begin = 0;
  cuts.push_back(n);
  for (std::size_t cut : cuts) {
    Sentence s;
    s.text = std::string(chunk.substr(begin, cut - begin));
    p.sentences.push_back(std::move(s));
    begin = cut;
  }
  reindex(p, counter);
  return p;
}

Passage passage_from_sentences(std::string doc_id,
                               std::vector<std::string> sentences,
                               std::optional<std::vector<int>> labels,
                               const TokenCounter& counter) {
  if (sentences.empty())
    throw std::invalid_argument("passage must contain at least one sentence");
  if (labels && labels->size() != sentences.size())
    throw std::invalid_argument("labels length does not match sentence count");
  Passage p;
  p.doc_id = std::move(doc_id);
  p.labels = std::move(labels);
  for (auto& text : sentences) {
    Sentence s;
    s.text = std::move(text);
    p.sentences.push_back(std::move(s));
  }
  reindex(p, counter);
  return p;
}

std::vector<Passage> merge_passages(std::vector<Passage> passages) {
  // Rule 1: same-document overlap.
  std::vector<Passage> stage;
  for (auto& p : passages) {
    std::size_t target = stage.size();
    for (std::size_t j = stage.size(); j-- > 0;) {
      if (stage[j].doc_id == p.doc_id) {
        target = j;
        break;
      }
    }
    if (target < stage.size()) {
      const std::size_t k = sentence_overlap(stage[target], p);
      if (k > 0 && stage[target].size() + p.size() - k <= kOverlapMergeCap) {
        append_passage(stage[target], std::move(p), k);
        continue;
      }
    }
    stage.push_back(std::move(p));
  }

  // Rule 2: short passages.
  std::vector<Passage> out;
  for (auto& p : stage) {
    if (!out.empty()) {
      Passage& prev = out.back();
      const bool short_pair = prev.size() < kShortPassageThreshold ||
                              p.size() < kShortPassageThreshold;
      if (short_pair && prev.size() + p.size() <= kShortMergeCap) {
        if (prev.doc_id != p.doc_id) prev.doc_id += "+" + p.doc_id;
        append_passage(prev, std::move(p), 0);
        continue;
      }
    }
    out.push_back(std::move(p));
  }

  for (auto& p : out) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < p.sentences.size(); ++i) {
      Sentence& s = p.sentences[i];
      s.index = i;
      s.span = {offset, offset + s.text.size()};
      offset = s.span.end;
    }
  }
  return out;
}

std::vector<Passage> merge_chunks(
    const std::vector<std::pair<std::string, std::string>>& chunks,
    const AbbreviationList& abbreviations, const TokenCounter& counter) {
  std::vector<Passage> passages;
  passages.reserve(chunks.size());
  for (const auto& [doc_id, text] : chunks) {
    Passage p = segment(text, abbreviations, counter);
    p.doc_id = doc_id;
    passages.push_back(std::move(p));
  }
  return merge_passages(std::move(passages));
}

}  // namespace looprune
