#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "biascope/dataset.hpp"
#include "biascope/embedding_provider.hpp"
#include "biascope/error.hpp"
#include "biascope/json_io.hpp"
#include "biascope/rng.hpp"
#include "biascope/text.hpp"

namespace biascope {

// ---------------------------------------------------------------------------
// Candidate extraction
// ---------------------------------------------------------------------------

using CaptionsByClass = std::vector<std::vector<std::string>>;
using CandidateLists = std::vector<std::vector<std::string>>;

/// Training captions grouped by class label, in sample order.
inline CaptionsByClass captions_by_class(const Dataset& ds) {
  CaptionsByClass out(ds.num_classes());
  for (const Sample& s : ds.samples) {
    if (s.split == Split::Train && s.caption) out[static_cast<std::size_t>(s.label)].push_back(*s.caption);
  }
  return out;
}

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string send(std::string_view system_prompt, std::string_view user_text) = 0;
};

inline constexpr std::string_view kKeywordSystemPrompt =
    "You will be provided with a block of text, and your task is to extract a list of predominant "
    "keywords from it.";

inline constexpr std::size_t kMaxPhraseTokens = 5;

namespace detail {

inline std::string strip_list_marker(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  std::size_t j = i;
  while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
  if (j > i && j < line.size() && (line[j] == '.' || line[j] == ')')) return text::trim(line.substr(j + 1));
  if (i < line.size() && (line[i] == '-' || line[i] == '*')) return text::trim(line.substr(i + 1));
  if (line.substr(i).starts_with("\xe2\x80\xa2")) return text::trim(line.substr(i + 3));  // bullet
  return text::trim(line.substr(i));
}

// Lowercase, trim quotes and trailing punctuation, collapse inner whitespace.
inline std::string clean_phrase(std::string_view raw) {
  std::string s = text::trim(raw);
  const std::string_view strip = "\"'`.;:!?()[]{}";
  while (!s.empty() && strip.find(s.front()) != std::string_view::npos) s.erase(s.begin());
  while (!s.empty() && strip.find(s.back()) != std::string_view::npos) s.pop_back();
  std::string out;
  bool space = false;
  for (char ch : text::to_lower(s)) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(ch);
  }
  return out;
}

inline std::size_t word_count(std::string_view phrase) {
  std::size_t n = 0;
  bool in_word = false;
  for (char ch : phrase) {
    const bool ws = std::isspace(static_cast<unsigned char>(ch));
    if (!ws && !in_word) ++n;
    in_word = !ws;
  }
  return n;
}

inline std::vector<std::string> split_any(std::string_view s, std::string_view seps) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || seps.find(s[i]) != std::string_view::npos) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace detail

/// Parses an LLM reply in comma-separated, newline-separated or numbered-list
/// form into distinct lowercase phrases (first occurrence wins).
inline std::vector<std::string> parse_keyword_reply(std::string_view reply, std::size_t max_candidates) {
  if (text::trim(reply).empty()) throw Error(ErrorCode::EmptyResponse, "empty reply");
  std::vector<std::string> lines;
  for (auto& l : detail::split_any(reply, "\n")) {
    std::string t = text::trim(l);
    if (!t.empty()) lines.push_back(std::move(t));
  }
  std::vector<std::string> items;
  if (lines.size() > 1) {
    for (const auto& l : lines) {
      if (l.back() == ':') continue;  // preamble such as "Here are the keywords:"
      for (auto& part : detail::split_any(detail::strip_list_marker(l), ",")) items.push_back(std::move(part));
    }
  } else {
    std::string line = detail::strip_list_marker(lines.front());
    const auto colon = line.find(':');
    if (colon != std::string::npos && detail::word_count(line.substr(0, colon)) <= 3) {
      line = line.substr(colon + 1);
    }
    items = detail::split_any(line, ",;");
  }

  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& item : items) {
    std::string phrase = detail::clean_phrase(item);
    const std::size_t words = detail::word_count(phrase);
    if (words == 0 || words > kMaxPhraseTokens) continue;
    if (seen.insert(phrase).second) out.push_back(std::move(phrase));
    if (out.size() == max_candidates) break;
  }
  if (out.empty()) throw Error(ErrorCode::ParseError, "no keyword list found in reply");
  return out;
}

/// Newline-joined captions; over budget, a seeded uniform subset of whole
/// captions is kept (original order preserved).
inline std::string build_caption_block(const std::vector<std::string>& captions, std::size_t char_budget,
                                       std::uint64_t seed) {
  std::size_t total = 0;
  for (const auto& c : captions) total += c.size() + 1;
  if (total <= char_budget + 1) return text::join(captions, "\n");
  std::vector<std::size_t> order(captions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> keep;
  std::size_t used = 0;
  for (std::size_t idx : order) {
    const std::size_t cost = captions[idx].size() + (keep.empty() ? 0 : 1);
    if (used + cost > char_budget) continue;
    used += cost;
    keep.push_back(idx);
  }
  std::sort(keep.begin(), keep.end());
  std::vector<std::string> kept;
  for (std::size_t idx : keep) kept.push_back(captions[idx]);
  return text::join(kept, "\n");
}

struct LlmExtractOptions {
  std::size_t max_candidates = 10;
  std::size_t char_budget = 60000;
  std::uint64_t seed = 0;
};

/// One chat request per class with the keyword-extraction system prompt.
inline CandidateLists extract_keywords_llm(const CaptionsByClass& captions, ChatClient& client,
                                           const LlmExtractOptions& opts) {
  if (opts.max_candidates < 1) throw Error(ErrorCode::ConfigError, "max_candidates must be >= 1");
  CandidateLists out;
  for (std::size_t c = 0; c < captions.size(); ++c) {
    const std::string where = "class " + std::to_string(c);
    if (captions[c].empty()) throw Error(ErrorCode::NoCandidates, where + " has no captions");
    const std::string block = build_caption_block(captions[c], opts.char_budget, opts.seed + c);
    std::string reply;
    try {
      reply = client.send(kKeywordSystemPrompt, block);
    } catch (const Error& e) {
      throw Error(e.code() == ErrorCode::ClientError ? ErrorCode::ClientError : e.code(),
                  where + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ClientError, where + ": " + e.what());
    }
    try {
      out.push_back(parse_keyword_reply(reply, opts.max_candidates));
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    }
  }
  return out;
}

struct FreqExtractOptions {
  int min_count = 5;
  std::size_t max_candidates = 10;
  // Phrases containing any of these tokens are never candidates (the class
  // names themselves).
  std::vector<std::string> excluded_tokens;
};

inline constexpr double kFreqSmoothing = 1e-6;

/// Deterministic extractor: unigrams and bigrams of stop-word-filtered
/// tokens scored by f(t|c) * log((f(t|c) + d) / (mean_{c' != c} f(t|c') + d)),
/// where f is occurrences per caption.
inline CandidateLists extract_keywords_freq(const CaptionsByClass& captions, const FreqExtractOptions& opts) {
  if (opts.min_count < 1) throw Error(ErrorCode::ConfigError, "min_count must be >= 1");
  if (opts.max_candidates < 1) throw Error(ErrorCode::ConfigError, "max_candidates must be >= 1");
  const std::size_t C = captions.size();
  const std::set<std::string, std::less<>> excluded(opts.excluded_tokens.begin(), opts.excluded_tokens.end());

  std::vector<std::map<std::string, long long>> counts(C);
  for (std::size_t c = 0; c < C; ++c) {
    for (const auto& cap : captions[c]) {
      const auto toks = text::content_tokens(cap);
      for (std::size_t i = 0; i < toks.size(); ++i) {
        ++counts[c][toks[i]];
        if (i + 1 < toks.size()) ++counts[c][toks[i] + " " + toks[i + 1]];
      }
    }
  }
  auto freq = [&](std::size_t c, const std::string& term) {
    if (captions[c].empty()) return 0.0;
    auto it = counts[c].find(term);
    const long long n = it == counts[c].end() ? 0 : it->second;
    return static_cast<double>(n) / static_cast<double>(captions[c].size());
  };
  auto is_excluded = [&](const std::string& term) {
    for (const auto& t : text::tokenize(term)) {
      if (excluded.count(t)) return true;
    }
    return false;
  };

  CandidateLists out(C);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& [term, n] : counts[c]) {
      if (n < opts.min_count || is_excluded(term)) continue;
      const double f = freq(c, term);
      double other = 0.0;
      for (std::size_t o = 0; o < C; ++o) {
        if (o != c) other += freq(o, term);
      }
      other /= static_cast<double>(C > 1 ? C - 1 : 1);
      scored.emplace_back(f * std::log((f + kFreqSmoothing) / (other + kFreqSmoothing)), term);
    }
    if (scored.empty()) {
      throw Error(ErrorCode::NoCandidates, "class " + std::to_string(c) + ": no term reaches min_count " +
                                               std::to_string(opts.min_count));
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t i = 0; i < scored.size() && i < opts.max_candidates; ++i) out[c].push_back(scored[i].second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Mean inner product between a keyword embedding and a set of image
/// embeddings (all unit norm).
template <typename ImageRange>
double s_clip(std::span<const double> keyword, const ImageRange& images) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : images) {
    sum += dot(keyword, x);
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::EmptySubset, "S_CLIP over an empty image set");
  return sum / static_cast<double>(n);
}

/// Class-specificity from precomputed per-class S_CLIP values: the score for
/// class c minus the mean over the other classes.
inline double s_specific_from_scores(std::span<const double> s_clip_per_class, std::size_t c) {
  const std::size_t C = s_clip_per_class.size();
  if (C < 2) throw Error(ErrorCode::SingleClass, "class specificity needs at least 2 classes");
  double others = 0.0;
  for (std::size_t o = 0; o < C; ++o) {
    if (o != c) others += s_clip_per_class[o];
  }
  return s_clip_per_class[c] - others / static_cast<double>(C - 1);
}

template <typename SubsetRange>
double s_specific(std::span<const double> keyword, const SubsetRange& class_subsets, std::size_t c) {
  std::vector<double> scores;
  for (const auto& subset : class_subsets) scores.push_back(s_clip(keyword, subset));
  return s_specific_from_scores(scores, c);
}

struct KeywordCandidate {
  std::string text;
  int source_class = 0;
  std::vector<double> s_clip_per_class;
  double s_specific = 0.0;
};

using ScoredCandidates = std::vector<std::vector<KeywordCandidate>>;

/// Embeds each candidate phrase (bare, no prompt wrapper) and scores it
/// against the training images of every class.
inline ScoredCandidates score_candidates(const CandidateLists& candidates, const Dataset& ds,
                                         const EmbeddingProvider& provider) {
  const std::size_t C = ds.num_classes();
  if (C < 2) throw Error(ErrorCode::SingleClass, "class specificity needs at least 2 classes");
  if (candidates.size() != C) throw Error(ErrorCode::SchemaError, "candidate lists do not match class count");
  if (provider.dim() != ds.dim) {
    throw Error(ErrorCode::DimensionMismatch, "text embeddings have dimension " + std::to_string(provider.dim()) +
                                                  ", images " + std::to_string(ds.dim));
  }
  std::vector<std::string> texts;
  for (const auto& list : candidates) texts.insert(texts.end(), list.begin(), list.end());
  provider.require_all(texts);

  std::vector<std::vector<std::span<const double>>> subsets(C);
  for (const Sample& s : ds.samples) {
    if (s.split == Split::Train) subsets[static_cast<std::size_t>(s.label)].emplace_back(s.embedding);
  }
  ScoredCandidates out(C);
  for (std::size_t c = 0; c < C; ++c) {
    for (const auto& phrase : candidates[c]) {
      KeywordCandidate kc;
      kc.text = phrase;
      kc.source_class = static_cast<int>(c);
      const Vector w = provider.embed(phrase);
      for (std::size_t o = 0; o < C; ++o) kc.s_clip_per_class.push_back(s_clip(w, subsets[o]));
      kc.s_specific = s_specific_from_scores(kc.s_clip_per_class, c);
      out[c].push_back(std::move(kc));
    }
  }
  return out;
}

/// Per class, the k highest-scoring candidates with strictly positive
/// specificity, descending; ties by text.
inline ScoredCandidates select_bias_keywords(const ScoredCandidates& scored, std::size_t k) {
  if (k < 1) throw Error(ErrorCode::ConfigError, "k must be >= 1");
  ScoredCandidates out(scored.size());
  for (std::size_t c = 0; c < scored.size(); ++c) {
    std::vector<KeywordCandidate> pool;
    for (const auto& kc : scored[c]) {
      if (kc.s_specific > 0.0) pool.push_back(kc);
    }
    std::stable_sort(pool.begin(), pool.end(), [](const KeywordCandidate& a, const KeywordCandidate& b) {
      if (a.s_specific != b.s_specific) return a.s_specific > b.s_specific;
      return a.text < b.text;
    });
    if (pool.size() > k) pool.resize(k);
    out[c] = std::move(pool);
  }
  return out;
}

// keywords.json

inline Json keywords_to_json(const ScoredCandidates& selected) {
  Json classes = Json::array();
  for (std::size_t c = 0; c < selected.size(); ++c) {
    Json kws = Json::array();
    for (const auto& kc : selected[c]) {
      kws.push_back({{"text", kc.text}, {"s_specific", kc.s_specific}, {"s_clip", kc.s_clip_per_class}});
    }
    classes.push_back({{"class", c}, {"keywords", kws}});
  }
  return Json{{"classes", classes}};
}

inline ScoredCandidates keywords_from_json(const Json& j, const std::string& where = "keywords.json") {
  io::require_only(j, {"classes"}, where);
  const Json& classes = io::require(j, "classes", where);
  if (!classes.is_array()) throw Error(ErrorCode::SchemaError, where + ": classes must be an array");
  ScoredCandidates out(classes.size());
  for (const Json& cls : classes) {
    io::require_only(cls, {"class", "keywords"}, where);
    const long long c = io::require_int(cls, "class", where);
    if (c < 0 || static_cast<std::size_t>(c) >= out.size()) {
      throw Error(ErrorCode::SchemaError, where + ": class index out of range");
    }
    const Json& kws = io::require(cls, "keywords", where);
    if (!kws.is_array()) throw Error(ErrorCode::SchemaError, where + ": keywords must be an array");
    for (const Json& kw : kws) {
      io::require_only(kw, {"text", "s_specific", "s_clip"}, where);
      KeywordCandidate kc;
      kc.text = io::require_string(kw, "text", where);
      kc.source_class = static_cast<int>(c);
      const Json& spec = io::require(kw, "s_specific", where);
      if (!spec.is_number()) throw Error(ErrorCode::SchemaError, where + ": s_specific must be a number");
      kc.s_specific = spec.get<double>();
      kc.s_clip_per_class = io::require_floats(kw, "s_clip", where);
      if (kc.s_clip_per_class.size() != out.size()) {
        throw Error(ErrorCode::SchemaError, where + ": s_clip must have one value per class");
      }
      out[static_cast<std::size_t>(c)].push_back(std::move(kc));
    }
  }
  return out;
}

}  // namespace biascope
