#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "biascope/annotation.hpp"
#include "biascope/dataset.hpp"
#include "biascope/error.hpp"
#include "biascope/json_io.hpp"
#include "biascope/training.hpp"

namespace biascope {

struct GroupKey {
  int class_label = 0;
  int attribute = 0;
  bool operator==(const GroupKey&) const = default;
};

struct GroupAccuracies {
  std::vector<GroupKey> groups;
  std::vector<std::size_t> correct;
  std::vector<std::size_t> sizes;
  std::vector<double> accuracy;
};

/// Accuracy per listed group over the labelled rows. `labels[i]` indexes into
/// `groups` (or is -1 to skip the row). A listed group with no rows is an
/// error rather than silently dropped.
inline GroupAccuracies group_accuracies(const std::vector<int>& predictions, const std::vector<int>& targets,
                                        const std::vector<int>& labels, const std::vector<GroupKey>& groups) {
  if (predictions.size() != targets.size() || targets.size() != labels.size()) {
    throw Error(ErrorCode::SchemaError, "predictions, targets and group labels differ in length");
  }
  GroupAccuracies out;
  out.groups = groups;
  out.correct.assign(groups.size(), 0);
  out.sizes.assign(groups.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto g = static_cast<std::size_t>(labels[i]);
    if (g >= groups.size()) throw Error(ErrorCode::InvalidGroupId, "group label out of range");
    ++out.sizes[g];
    out.correct[g] += predictions[i] == targets[i];
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (out.sizes[g] == 0) {
      throw Error(ErrorCode::EmptyGroup, "group (class " + std::to_string(groups[g].class_label) + ", attribute " +
                                             std::to_string(groups[g].attribute) + ") has no evaluation samples");
    }
    out.accuracy.push_back(static_cast<double>(out.correct[g]) / static_cast<double>(out.sizes[g]));
  }
  return out;
}

/// UA: unweighted mean of the per-group accuracies, clamped to the range of
/// its inputs so rounding never puts it below the minimum or above the maximum.
inline double unbiased_accuracy(const std::vector<double>& per_group) {
  if (per_group.empty()) throw Error(ErrorCode::EmptyGroup, "UA of zero groups");
  const double mean = std::accumulate(per_group.begin(), per_group.end(), 0.0) / static_cast<double>(per_group.size());
  const auto [lo, hi] = std::minmax_element(per_group.begin(), per_group.end());
  return std::clamp(mean, *lo, *hi);
}

/// BC: worst-group accuracy.
inline double bias_conflict(const std::vector<double>& per_group) {
  if (per_group.empty()) throw Error(ErrorCode::EmptyGroup, "BC of zero groups");
  return *std::min_element(per_group.begin(), per_group.end());
}

enum class GroupSource { Truth, Pseudo };

inline std::string_view to_string(GroupSource s) { return s == GroupSource::Truth ? "truth" : "pseudo"; }

struct GroupMetrics {
  GroupAccuracies groups;
  double ua = 0.0;
  double bc = 0.0;
  double overall = 0.0;
  GroupSource source = GroupSource::Truth;
};

namespace detail {

inline unsigned long long gcd_u(unsigned long long a, unsigned long long b) {
  while (b) {
    a %= b;
    std::swap(a, b);
  }
  return a;
}

// mean_g(correct_g / size_g) as one rounded division when the lcm fits.
inline double exact_group_mean(const std::vector<std::size_t>& correct, const std::vector<std::size_t>& sizes) {
  unsigned long long l = 1;
  for (std::size_t n : sizes) {
    const unsigned long long g = gcd_u(l, n);
    if (l / g > (1ULL << 40) / n) {
      std::vector<double> acc;
      for (std::size_t i = 0; i < sizes.size(); ++i) acc.push_back(static_cast<double>(correct[i]) / static_cast<double>(sizes[i]));
      return unbiased_accuracy(acc);
    }
    l = l / g * n;
  }
  unsigned long long num = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) num += correct[i] * (l / sizes[i]);
  return static_cast<double>(num) / (static_cast<double>(l) * static_cast<double>(sizes.size()));
}

}  // namespace detail

inline GroupMetrics summarize(GroupAccuracies acc, GroupSource source) {
  GroupMetrics m;
  m.ua = detail::exact_group_mean(acc.correct, acc.sizes);
  m.bc = bias_conflict(acc.accuracy);
  const auto total = std::accumulate(acc.sizes.begin(), acc.sizes.end(), std::size_t{0});
  const auto right = std::accumulate(acc.correct.begin(), acc.correct.end(), std::size_t{0});
  m.overall = static_cast<double>(right) / static_cast<double>(total);
  m.groups = std::move(acc);
  m.source = source;
  return m;
}

/// Scores `model` on one split. Groups are (class, bias_truth) when every row
/// of the split carries bias_truth, otherwise the pseudo-groups in `ann`.
inline GroupMetrics evaluate_model(const LinearModel& model, const Dataset& ds, Split split,
                                   const Annotation* ann = nullptr) {
  std::vector<std::size_t> rows = ds.indices(split);
  if (rows.empty()) throw Error(ErrorCode::EmptyGroup, std::string("split '") + std::string(to_string(split)) + "' is empty");
  const bool truth = std::all_of(rows.begin(), rows.end(), [&](std::size_t i) { return ds.samples[i].bias_truth.has_value(); });
  const std::size_t C = ds.num_classes();
  std::size_t B = 0;
  std::vector<int> attr_of(rows.size(), -1);
  if (truth) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      attr_of[r] = *ds.samples[rows[r]].bias_truth;
      B = std::max(B, static_cast<std::size_t>(attr_of[r] + 1));
    }
  } else {
    if (ann == nullptr) {
      throw Error(ErrorCode::MissingArtifact, "split has no bias_truth and no pseudo-groups were supplied");
    }
    B = ann->num_attributes();
    const auto ids = group_ids_for(*ann, ds);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const int g = ids[rows[r]];
      attr_of[r] = g < 0 ? -1 : g % static_cast<int>(B);
    }
  }
  std::vector<GroupKey> keys;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t b = 0; b < B; ++b) keys.push_back({static_cast<int>(c), static_cast<int>(b)});
  }
  std::vector<int> preds, targets, labels;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Sample& s = ds.samples[rows[r]];
    preds.push_back(predict(model, s.embedding).label);
    targets.push_back(s.label);
    labels.push_back(attr_of[r] < 0 ? -1 : s.label * static_cast<int>(B) + attr_of[r]);
  }
  return summarize(group_accuracies(preds, targets, labels, keys), truth ? GroupSource::Truth : GroupSource::Pseudo);
}

inline Json metrics_to_json(const GroupMetrics& m) {
  Json groups = Json::array();
  for (std::size_t g = 0; g < m.groups.groups.size(); ++g) {
    groups.push_back({{"class", m.groups.groups[g].class_label},
                      {"attribute", m.groups.groups[g].attribute},
                      {"n", m.groups.sizes[g]},
                      {"acc", m.groups.accuracy[g]}});
  }
  return Json{{"ua", m.ua}, {"bc", m.bc}, {"overall", m.overall}, {"groups", groups},
              {"group_source", std::string(to_string(m.source))}};
}

}  // namespace biascope
