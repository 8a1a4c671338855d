#include <gtest/gtest.h>

#include <algorithm>

#include "biascope/evaluation.hpp"
#include "biascope/rng.hpp"
#include "test_util.hpp"

using namespace biascope;

namespace {

const std::vector<GroupKey> kFourGroups{{0, 0}, {0, 1}, {1, 0}, {1, 1}};

// Test split with `per_group` rows in each (class, attribute) cell; class c
// rows sit on axis c so an identity model is perfect.
Dataset axis_split(int per_group) {
  Dataset ds;
  ds.class_names = {"a", "b"};
  ds.dim = 2;
  int i = 0;
  for (int c = 0; c < 2; ++c) {
    for (int b = 0; b < 2; ++b) {
      for (int k = 0; k < per_group; ++k) {
        Vector e{c == 0 ? 1.0 : 0.0, c == 1 ? 1.0 : 0.0};
        ds.samples.push_back({"t" + std::to_string(i++), Split::Test, c, e, std::nullopt, b, false});
      }
    }
  }
  return ds;
}

LinearModel identity2() {
  LinearModel m(2, 2);
  m.weights = {1, 0, 0, 1};
  return m;
}

GroupAccuracies random_accuracies(Rng& rng, std::size_t G, bool equal_sizes) {
  std::vector<int> preds, targets, labels;
  std::vector<GroupKey> keys;
  const std::size_t shared = 1 + rng.below(40);
  for (std::size_t g = 0; g < G; ++g) {
    keys.push_back({static_cast<int>(g), 0});
    const std::size_t n = equal_sizes ? shared : 1 + rng.below(40);
    const double p = rng.uniform();
    for (std::size_t k = 0; k < n; ++k) {
      targets.push_back(0);
      preds.push_back(rng.uniform() < p ? 0 : 1);
      labels.push_back(static_cast<int>(g));
    }
  }
  return group_accuracies(preds, targets, labels, keys);
}

}  // namespace

TEST(Metrics, UnbiasedAccuracyExamples) {
  EXPECT_DOUBLE_EQ(unbiased_accuracy({1, 1, 0, 0}), 0.5);
  EXPECT_DOUBLE_EQ(unbiased_accuracy({0.7}), 0.7);
  EXPECT_DOUBLE_EQ(unbiased_accuracy({0.9, 0.8, 0.7, 0.2}), 0.65);
  EXPECT_BIASCOPE_ERROR(unbiased_accuracy({}), ErrorCode::EmptyGroup);
}

TEST(Metrics, BiasConflictExamples) {
  EXPECT_EQ(bias_conflict({1, 1, 1, 1}), 1.0);
  EXPECT_EQ(bias_conflict({0.9, 0.8, 0.7, 0.2}), 0.2);
  EXPECT_EQ(bias_conflict({0.35}), 0.35);
  EXPECT_BIASCOPE_ERROR(bias_conflict({}), ErrorCode::EmptyGroup);
}

TEST(GroupAccuracy, PerfectModel) {
  const GroupMetrics m = evaluate_model(identity2(), axis_split(3), Split::Test);
  EXPECT_EQ(m.groups.accuracy, (std::vector<double>{1, 1, 1, 1}));
  EXPECT_EQ(m.groups.sizes, (std::vector<std::size_t>{3, 3, 3, 3}));
  EXPECT_EQ(m.ua, 1.0);
  EXPECT_EQ(m.bc, 1.0);
  EXPECT_EQ(m.overall, 1.0);
  EXPECT_EQ(m.source, GroupSource::Truth);
}

TEST(GroupAccuracy, ConstantPredictor) {
  const GroupMetrics m = evaluate_model(LinearModel(2, 2), axis_split(5), Split::Test);
  EXPECT_EQ(m.groups.accuracy, (std::vector<double>{1, 1, 0, 0}));
  EXPECT_EQ(m.ua, 0.5);
  EXPECT_EQ(m.bc, 0.0);
}

TEST(GroupAccuracy, HandBuiltEightSamples) {
  //            g0 g0 g1 g1 g1 g2 g3 g3
  const std::vector<int> targets{0, 0, 0, 0, 0, 1, 1, 1};
  const std::vector<int> preds{0, 1, 0, 0, 1, 1, 0, 0};
  const std::vector<int> labels{0, 0, 1, 1, 1, 2, 3, 3};
  const GroupAccuracies acc = group_accuracies(preds, targets, labels, kFourGroups);
  EXPECT_EQ(acc.correct, (std::vector<std::size_t>{1, 2, 1, 0}));
  EXPECT_EQ(acc.sizes, (std::vector<std::size_t>{2, 3, 1, 2}));
  EXPECT_EQ(acc.accuracy[0], 0.5);
  EXPECT_EQ(acc.accuracy[1], 2.0 / 3.0);
  EXPECT_EQ(acc.accuracy[2], 1.0);
  EXPECT_EQ(acc.accuracy[3], 0.0);
  const GroupMetrics m = summarize(acc, GroupSource::Truth);
  // (1/2 + 2/3 + 1 + 0) / 4 = 13/24
  EXPECT_EQ(m.ua, 13.0 / 24.0);
  EXPECT_EQ(m.bc, 0.0);
  EXPECT_EQ(m.overall, 4.0 / 8.0);
}

TEST(GroupAccuracy, ErrorsAndSkippedRows) {
  EXPECT_BIASCOPE_ERROR(group_accuracies({0, 0}, {0, 0}, {0, 1}, kFourGroups), ErrorCode::EmptyGroup);
  EXPECT_BIASCOPE_ERROR(group_accuracies({0}, {0, 0}, {0, 1}, kFourGroups), ErrorCode::SchemaError);
  EXPECT_BIASCOPE_ERROR(group_accuracies({0}, {0}, {4}, kFourGroups), ErrorCode::InvalidGroupId);
  const GroupAccuracies acc = group_accuracies({0, 1, 1}, {0, 0, 0}, {0, -1, 0}, {{0, 0}});
  EXPECT_EQ(acc.sizes[0], 2u);
  EXPECT_EQ(acc.accuracy[0], 0.5);

  Dataset ds = axis_split(1);
  ds.samples.pop_back();
  EXPECT_BIASCOPE_ERROR(evaluate_model(identity2(), ds, Split::Test), ErrorCode::EmptyGroup);
  EXPECT_BIASCOPE_ERROR(evaluate_model(identity2(), ds, Split::Val), ErrorCode::EmptyGroup);
}

TEST(GroupAccuracy, PseudoGroupsWithoutTruth) {
  Dataset ds = axis_split(2);
  Annotation ann;
  ann.class_names = ds.class_names;
  ann.attribute_names = {"x", "y"};
  for (auto& s : ds.samples) {
    const int b = *s.bias_truth;
    s.bias_truth.reset();
    ann.assignments.push_back({s.id, s.label, b, s.label * 2 + b});
  }
  EXPECT_BIASCOPE_ERROR(evaluate_model(identity2(), ds, Split::Test), ErrorCode::MissingArtifact);
  const GroupMetrics m = evaluate_model(identity2(), ds, Split::Test, &ann);
  EXPECT_EQ(m.source, GroupSource::Pseudo);
  EXPECT_EQ(m.groups.sizes, (std::vector<std::size_t>{2, 2, 2, 2}));
  EXPECT_EQ(metrics_to_json(m).at("group_source"), "pseudo");
}

TEST(MetricProperties, BiasConflictNeverExceedsUnbiasedAccuracy) {
  Rng rng(1);
  for (int trial = 0; trial < 20000; ++trial) {
    const std::size_t G = 1 + rng.below(12);
    std::vector<double> v(G);
    const double base = rng.uniform();
    for (double& x : v) x = rng.below(3) == 0 ? base : rng.uniform();
    if (trial % 4 == 0) std::fill(v.begin(), v.end(), static_cast<double>(rng.below(7)) / 7.0);
    const double ua = unbiased_accuracy(v), bc = bias_conflict(v);
    ASSERT_LE(bc, ua) << "trial " << trial;
    ASSERT_LE(ua, *std::max_element(v.begin(), v.end()));
    const GroupMetrics m = summarize(random_accuracies(rng, G, false), GroupSource::Truth);
    ASSERT_LE(m.bc, m.ua);
    ASSERT_LE(m.ua, *std::max_element(m.groups.accuracy.begin(), m.groups.accuracy.end()));
  }
}

TEST(MetricProperties, ReorderingAndDuplication) {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const GroupAccuracies acc = random_accuracies(rng, 2 + rng.below(8), false);
    const GroupMetrics m = summarize(acc, GroupSource::Truth);
    std::vector<std::size_t> order(acc.sizes.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    GroupAccuracies shuffled;
    for (std::size_t g : order) {
      shuffled.groups.push_back(acc.groups[g]);
      shuffled.correct.push_back(acc.correct[g]);
      shuffled.sizes.push_back(acc.sizes[g]);
      shuffled.accuracy.push_back(acc.accuracy[g]);
    }
    const GroupMetrics s = summarize(shuffled, GroupSource::Truth);
    EXPECT_EQ(s.ua, m.ua);
    EXPECT_EQ(s.bc, m.bc);
    std::vector<double> dup = acc.accuracy;
    dup.push_back(acc.accuracy[rng.below(dup.size())]);
    EXPECT_EQ(bias_conflict(dup), m.bc);
  }
}

TEST(MetricProperties, EqualSizeGroupsMakeUnbiasedEqualOverall) {
  Rng rng(3);
  for (int trial = 0; trial < 5000; ++trial) {
    const GroupMetrics m = summarize(random_accuracies(rng, 1 + rng.below(10), true), GroupSource::Truth);
    ASSERT_EQ(m.ua, m.overall) << "trial " << trial;
  }
  const GroupMetrics real = evaluate_model(LinearModel(2, 2), axis_split(7), Split::Test);
  EXPECT_EQ(real.ua, real.overall);
}

TEST(MetricsFile, Schema) {
  const GroupMetrics m = evaluate_model(LinearModel(2, 2), axis_split(2), Split::Test);
  const Json j = metrics_to_json(m);
  EXPECT_EQ(j.at("ua"), 0.5);
  EXPECT_EQ(j.at("bc"), 0.0);
  EXPECT_EQ(j.at("overall"), 0.5);
  EXPECT_EQ(j.at("group_source"), "truth");
  ASSERT_EQ(j.at("groups").size(), 4u);
  EXPECT_EQ(j.at("groups")[2], (Json{{"class", 1}, {"attribute", 0}, {"n", 2}, {"acc", 0.0}}));
}
