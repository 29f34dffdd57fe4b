#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace looprune {

// Lowercased word pieces: maximal runs of ASCII alphanumerics or non-ASCII
// bytes. Everything else (whitespace, ASCII punctuation) separates words.
std::vector<std::string> split_words(std::string_view text);

std::string ascii_lower(std::string_view text);

bool is_ascii_space(char c);

// Strips trailing ASCII whitespace.
std::string_view rtrim(std::string_view text);
std::string_view trim(std::string_view text);

// Pluggable length measure used for compression ratios and Sentence
// token counts.
class TokenCounter {
 public:
  virtual ~TokenCounter() = default;
  virtual std::size_t count(std::string_view text) const = 0;
  virtual std::string name() const = 0;
};

// Counts whitespace-separated tokens.
class WhitespaceTokenCounter final : public TokenCounter {
 public:
  std::size_t count(std::string_view text) const override;
  std::string name() const override { return "whitespace"; }
};

const TokenCounter& default_token_counter();

}  // namespace looprune
