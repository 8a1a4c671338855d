#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "biascope/detection.hpp"
#include "biascope/rng.hpp"
#include "biascope/synth.hpp"
#include "test_util.hpp"

using namespace biascope;

namespace {

class FixedReplyClient final : public ChatClient {
 public:
  explicit FixedReplyClient(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string send(std::string_view system_prompt, std::string_view user_text) override {
    systems.emplace_back(system_prompt);
    users.emplace_back(user_text);
    return replies_.at(std::min(systems.size() - 1, replies_.size() - 1));
  }
  std::vector<std::string> systems, users;

 private:
  std::vector<std::string> replies_;
};

class ThrowingClient final : public ChatClient {
 public:
  std::string send(std::string_view, std::string_view) override {
    throw Error(ErrorCode::ClientError, "connection refused");
  }
};

Vector random_unit(Rng& rng, std::size_t d) {
  Vector v(d);
  for (double& x : v) x = rng.normal();
  return normalize_embedding(v);
}

// Fixed phrase -> vector table.
class TableProvider final : public EmbeddingProvider {
 public:
  TableProvider(std::size_t dim, std::map<std::string, Vector, std::less<>> t) : dim_(dim), t_(std::move(t)) {}
  std::size_t dim() const override { return dim_; }
  bool contains(std::string_view text) const override { return t_.find(text) != t_.end(); }
  Vector embed(std::string_view text) const override { return t_.find(text)->second; }

 private:
  std::size_t dim_;
  std::map<std::string, Vector, std::less<>> t_;
};

Dataset two_class_axis_dataset() {
  Dataset ds;
  ds.class_names = {"a", "b"};
  ds.dim = 2;
  ds.samples.push_back({"a0", Split::Train, 0, {1, 0}, std::nullopt, std::nullopt, false});
  ds.samples.push_back({"a1", Split::Train, 0, {1, 0}, std::nullopt, std::nullopt, false});
  ds.samples.push_back({"b0", Split::Train, 1, {0, 1}, std::nullopt, std::nullopt, false});
  ds.samples.push_back({"bt", Split::Test, 1, {1, 0}, std::nullopt, std::nullopt, false});
  return ds;
}

}  // namespace

TEST(KeywordReply, CommaSeparated) {
  FixedReplyClient client({"beach, lake, water"});
  const auto out = extract_keywords_llm({{"a bird on a beach"}}, client, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (std::vector<std::string>{"beach", "lake", "water"}));
  ASSERT_EQ(client.systems.size(), 1u);
  EXPECT_EQ(client.systems[0],
            "You will be provided with a block of text, and your task is to extract a list of predominant keywords "
            "from it.");
  EXPECT_EQ(client.users[0], "a bird on a beach");
}

TEST(KeywordReply, NumberedLines) {
  EXPECT_EQ(parse_keyword_reply("1. forest\n2. woods", 10), (std::vector<std::string>{"forest", "woods"}));
}

TEST(KeywordReply, CaseFoldDedup) {
  EXPECT_EQ(parse_keyword_reply("water, Water, water", 10), (std::vector<std::string>{"water"}));
}

TEST(KeywordReply, OtherShapes) {
  EXPECT_EQ(parse_keyword_reply("Keywords: Beach; Ocean.", 10), (std::vector<std::string>{"beach", "ocean"}));
  EXPECT_EQ(parse_keyword_reply("Here are the keywords:\n- bamboo forest\n- \"trees\"\n", 10),
            (std::vector<std::string>{"bamboo forest", "trees"}));
  EXPECT_EQ(parse_keyword_reply("a, b, c, d", 2), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(parse_keyword_reply("one two three four five six, ok", 10), (std::vector<std::string>{"ok"}));
}

TEST(KeywordReply, Failures) {
  EXPECT_BIASCOPE_ERROR(parse_keyword_reply("   \n ", 10), ErrorCode::EmptyResponse);
  EXPECT_BIASCOPE_ERROR(parse_keyword_reply(", , ;", 10), ErrorCode::ParseError);
  FixedReplyClient empty({""});
  EXPECT_BIASCOPE_ERROR(extract_keywords_llm({{"x"}}, empty, {}), ErrorCode::EmptyResponse);
  ThrowingClient down;
  EXPECT_BIASCOPE_ERROR(extract_keywords_llm({{"x"}}, down, {}), ErrorCode::ClientError);
  FixedReplyClient ok({"x"});
  EXPECT_BIASCOPE_ERROR(extract_keywords_llm({{"x"}, {}}, ok, {}), ErrorCode::NoCandidates);
}

TEST(CaptionBlock, BudgetedSubsetIsSeededAndOrdered) {
  std::vector<std::string> caps;
  for (int i = 0; i < 100; ++i) caps.push_back("caption number " + std::to_string(i));
  EXPECT_EQ(build_caption_block({"a", "b"}, 100, 0), "a\nb");
  const std::string block = build_caption_block(caps, 200, 5);
  EXPECT_LE(block.size(), 200u);
  EXPECT_EQ(block, build_caption_block(caps, 200, 5));
  EXPECT_NE(block, build_caption_block(caps, 200, 6));
  std::vector<int> seen;
  for (const auto& line : detail::split_any(block, "\n")) seen.push_back(std::stoi(line.substr(15)));
  EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
}

TEST(FreqExtractor, ExclusiveTermRanksFirst) {
  CaptionsByClass caps(2);
  for (int i = 0; i < 6; ++i) {
    caps[0].push_back("a red car");
    caps[1].push_back("a blue car");
  }
  const auto out = extract_keywords_freq(caps, {});
  EXPECT_EQ(out[0].front(), "red");
  EXPECT_EQ(out[1].front(), "blue");
}

TEST(FreqExtractor, SharedTermScoresZeroAndRanksLast) {
  CaptionsByClass caps(2);
  for (int i = 0; i < 6; ++i) {
    caps[0].push_back("red car");
    caps[1].push_back("blue car");
  }
  const auto out = extract_keywords_freq(caps, {});
  EXPECT_EQ(out[0], (std::vector<std::string>{"red", "red car", "car"}));
  EXPECT_EQ(out[1], (std::vector<std::string>{"blue", "blue car", "car"}));
}

TEST(FreqExtractor, MinCountAndExclusionAndPurity) {
  CaptionsByClass caps(2);
  for (int i = 0; i < 5; ++i) caps[0].push_back("waterbird beach");
  for (int i = 0; i < 4; ++i) caps[1].push_back("landbird forest");
  FreqExtractOptions opts;
  opts.excluded_tokens = {"waterbird", "landbird"};
  EXPECT_BIASCOPE_ERROR(extract_keywords_freq(caps, opts), ErrorCode::NoCandidates);
  caps[1].push_back("landbird forest");
  const auto out = extract_keywords_freq(caps, opts);
  EXPECT_EQ(out[0], (std::vector<std::string>{"beach"}));
  EXPECT_EQ(out[1], (std::vector<std::string>{"forest"}));
  EXPECT_EQ(out, extract_keywords_freq(caps, opts));
  EXPECT_BIASCOPE_ERROR(extract_keywords_freq(CaptionsByClass(2), {}), ErrorCode::NoCandidates);
}

TEST(FreqExtractor, SyntheticTopCandidateIsPlantedToken) {
  const SynthSpec spec;  // seed 7
  const Dataset ds = synth_dataset(spec);
  FreqExtractOptions opts;
  opts.excluded_tokens = {"waterbird", "landbird"};
  const auto out = extract_keywords_freq(captions_by_class(ds), opts);
  EXPECT_EQ(out[0].front(), "beach");
  EXPECT_EQ(out[1].front(), "forest");
}

TEST(SClip, SelfSimilarityAndOrthogonality) {
  const std::vector<Vector> same{{0.6, 0.8}, {0.6, 0.8}};
  EXPECT_DOUBLE_EQ(s_clip(std::vector<double>{0.6, 0.8}, same), 1.0);
  const std::vector<Vector> ortho{{0, 1}, {0, -1}};
  EXPECT_DOUBLE_EQ(s_clip(std::vector<double>{1, 0}, ortho), 0.0);
  const std::vector<Vector> three{{1, 0}, {0, 1}, {-1, 0}};
  EXPECT_DOUBLE_EQ(s_clip(std::vector<double>{1, 0}, three), 0.0);
  EXPECT_BIASCOPE_ERROR(s_clip(std::vector<double>{1, 0}, std::vector<Vector>{}), ErrorCode::EmptySubset);
}

TEST(SClip, PermutationAndScaleInvariance) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng.below(10), n = 1 + rng.below(30);
    const Vector w = random_unit(rng, d);
    std::vector<Vector> raw;
    for (std::size_t i = 0; i < n; ++i) {
      Vector v(d);
      for (double& x : v) x = rng.normal();
      raw.push_back(v);
    }
    std::vector<Vector> unit, scaled;
    for (const auto& v : raw) {
      unit.push_back(normalize_embedding(v));
      Vector s = v;
      const double k = 0.01 + 100 * rng.uniform();
      for (double& x : s) x *= k;
      scaled.push_back(normalize_embedding(s));
    }
    const double base = s_clip(w, unit);
    EXPECT_NEAR(s_clip(w, scaled), base, 1e-12);
    rng.shuffle(unit);
    EXPECT_NEAR(s_clip(w, unit), base, 1e-12);
  }
}

TEST(SSpecific, HandValues) {
  EXPECT_DOUBLE_EQ(s_specific_from_scores(std::vector<double>{0.4, 0.4, 0.4}, 1), 0.0);
  EXPECT_NEAR(s_specific_from_scores(std::vector<double>{0.8, 0.2}, 0), 0.6, 1e-15);
  EXPECT_NEAR(s_specific_from_scores(std::vector<double>{0.8, 0.2}, 1), -0.6, 1e-15);
  EXPECT_NEAR(s_specific_from_scores(std::vector<double>{0.9, 0.1, 0.2}, 0), 0.9 - (0.1 + 0.2) / 2, 1e-15);
  EXPECT_NEAR(s_specific_from_scores(std::vector<double>{0.9, 0.1, 0.2}, 0), 0.75, 1e-15);
  EXPECT_BIASCOPE_ERROR(s_specific_from_scores(std::vector<double>{0.9}, 0), ErrorCode::SingleClass);
}

TEST(SSpecific, ZeroSumAndTwoClassAntisymmetry) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 2 + rng.below(4), d = 2 + rng.below(8);
    const Vector w = random_unit(rng, d);
    std::vector<std::vector<Vector>> subsets(C);
    for (auto& s : subsets) {
      for (std::size_t i = 0, n = 1 + rng.below(12); i < n; ++i) s.push_back(random_unit(rng, d));
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += s_specific(w, subsets, c);
    ASSERT_LE(std::abs(sum), 1e-9);
    if (C == 2) {
      EXPECT_EQ(s_specific(w, subsets, 0), -s_specific(w, subsets, 1));
    }
  }
}

TEST(ScoreCandidates, UsesTrainImagesOnlyAndRequiresEmbeddings) {
  const Dataset ds = two_class_axis_dataset();
  TableProvider provider(2, {{"x", {1, 0}}, {"y", {0, 1}}});
  const auto scored = score_candidates({{"x"}, {"y"}}, ds, provider);
  EXPECT_EQ(scored[0][0].s_clip_per_class, (std::vector<double>{1.0, 0.0}));
  EXPECT_DOUBLE_EQ(scored[0][0].s_specific, 1.0);
  EXPECT_DOUBLE_EQ(scored[1][0].s_specific, 1.0);
  EXPECT_BIASCOPE_ERROR(score_candidates({{"x"}, {"zzz"}}, ds, provider), ErrorCode::MissingTextEmbedding);
  TableProvider wrong(3, {});
  EXPECT_BIASCOPE_ERROR(score_candidates({{"x"}, {"y"}}, ds, wrong), ErrorCode::DimensionMismatch);
}

TEST(SelectBiasKeywords, TopKPositiveOnly) {
  auto cand = [](std::string t, double s) { return KeywordCandidate{std::move(t), 0, {}, s}; };
  ScoredCandidates scored{{cand("weak", 0.2), cand("strong", 0.6)}};
  auto sel = select_bias_keywords(scored, 1);
  ASSERT_EQ(sel[0].size(), 1u);
  EXPECT_EQ(sel[0][0].text, "strong");

  ScoredCandidates mixed{{cand("a", 0.3), cand("b", -0.1), cand("c", 0.0), cand("d", 0.1), cand("e", 0.2)}};
  sel = select_bias_keywords(mixed, 5);
  ASSERT_EQ(sel[0].size(), 3u);
  EXPECT_EQ(sel[0][0].text, "a");
  EXPECT_EQ(sel[0][1].text, "e");
  EXPECT_EQ(sel[0][2].text, "d");
  EXPECT_BIASCOPE_ERROR(select_bias_keywords(mixed, 0), ErrorCode::ConfigError);
}

TEST(SelectBiasKeywords, RaisingAScoreNeverDropsIt) {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<KeywordCandidate> list;
    for (int i = 0, n = 1 + static_cast<int>(rng.below(10)); i < n; ++i) {
      list.push_back({"t" + std::to_string(i), 0, {}, rng.uniform() * 2 - 0.5});
    }
    const std::size_t k = 1 + rng.below(5);
    const auto before = select_bias_keywords({list}, k)[0];
    for (const auto& kc : before) {
      auto raised = list;
      for (auto& r : raised) {
        if (r.text == kc.text) r.s_specific += rng.uniform();
      }
      const auto after = select_bias_keywords({raised}, k)[0];
      EXPECT_TRUE(std::any_of(after.begin(), after.end(), [&](const auto& a) { return a.text == kc.text; }));
    }
  }
}

TEST(Detection, SyntheticWorldSelectsPlantedTokenAndRejectsFiller) {
  const SynthSpec spec;  // seed 7
  const Dataset ds = synth_dataset(spec);
  const SyntheticEmbeddingProvider provider{SyntheticWorld(spec)};
  FreqExtractOptions opts;
  opts.excluded_tokens = {"waterbird", "landbird"};
  CandidateLists cands = extract_keywords_freq(captions_by_class(ds), opts);
  for (auto& l : cands) l.push_back("photo");
  const auto scored = score_candidates(cands, ds, provider);
  const auto sel = select_bias_keywords(scored, 1);
  EXPECT_EQ(sel[0].at(0).text, "beach");
  EXPECT_EQ(sel[1].at(0).text, "forest");
  for (std::size_t c = 0; c < 2; ++c) {
    const auto& photo = scored[c].back();
    ASSERT_EQ(photo.text, "photo");
    EXPECT_LT(std::abs(photo.s_specific), 0.02);
    EXPECT_LT(photo.s_specific, sel[c][0].s_specific - 0.2);
  }
}

TEST(KeywordsJson, RoundTrip) {
  ScoredCandidates sel(2);
  sel[0].push_back({"beach", 0, {0.31, -0.03}, 0.34});
  sel[1].push_back({"forest", 1, {0.01, 0.35}, 0.1 + 0.2});
  const Json j = keywords_to_json(sel);
  const auto back = keywords_from_json(Json::parse(j.dump()));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1][0].text, "forest");
  EXPECT_EQ(back[1][0].s_specific, 0.1 + 0.2);
  EXPECT_EQ(back[0][0].s_clip_per_class, sel[0][0].s_clip_per_class);
  EXPECT_BIASCOPE_ERROR(keywords_from_json(Json{{"classes", {{{"class", 0}, {"keywords", {{{"text", "x"}}}}}}}}),
                        ErrorCode::SchemaError);
}
