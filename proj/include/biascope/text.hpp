#pragma once

#include <algorithm>
#include <iterator>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace biascope::text {

// Standard English stop-word list shipped with the library so that keyword
// extraction is reproducible. Sorted for binary search.
inline constexpr std::string_view kStopWords[] = {
    "a",       "about",   "above",  "after",  "again",  "against", "all",     "am",     "an",
    "and",     "any",     "are",    "as",     "at",     "be",      "because", "been",   "before",
    "being",   "below",   "between", "both",  "but",    "by",      "can",     "could",  "did",
    "do",      "does",    "doing",  "down",   "during", "each",    "few",     "for",    "from",
    "further", "had",     "has",    "have",   "having", "he",      "her",     "here",   "hers",
    "herself", "him",     "himself", "his",   "how",    "i",       "if",      "in",     "into",
    "is",      "it",      "its",    "itself", "just",   "me",      "more",    "most",   "my",
    "myself",  "no",      "nor",    "not",    "now",    "of",      "off",     "on",     "once",
    "only",    "or",      "other",  "our",    "ours",   "ourselves", "out",   "over",   "own",
    "same",    "she",     "should", "so",     "some",   "such",    "than",    "that",   "the",
    "their",   "theirs",  "them",   "themselves", "then", "there", "these",   "they",   "this",
    "those",   "through", "to",     "too",    "under",  "until",   "up",      "very",   "was",
    "we",      "were",    "what",   "when",   "where",  "which",   "while",   "who",    "whom",
    "why",     "will",    "with",   "would",  "you",    "your",    "yours",   "yourself", "yourselves",
    "s",
};

inline bool is_stop_word(std::string_view token) {
  static const std::vector<std::string_view> sorted = [] {
    std::vector<std::string_view> v(std::begin(kStopWords), std::end(kStopWords));
    std::sort(v.begin(), v.end());
    return v;
  }();
  return std::binary_search(sorted.begin(), sorted.end(), token);
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

inline bool is_word_byte(unsigned char ch) { return std::isalnum(ch) || ch >= 0x80; }

/// Lowercases and splits on ASCII non-alphanumerics. Non-ASCII bytes are kept
/// inside tokens so UTF-8 words survive intact.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char raw : s) {
    const auto ch = static_cast<unsigned char>(raw);
    if (is_word_byte(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

inline std::vector<std::string> content_tokens(std::string_view s) {
  std::vector<std::string> out;
  for (auto& t : tokenize(s)) {
    if (!is_stop_word(t)) out.push_back(std::move(t));
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace biascope::text
