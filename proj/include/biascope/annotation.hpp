#pragma once

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "biascope/count_table.hpp"
#include "biascope/dataset.hpp"
#include "biascope/detection.hpp"
#include "biascope/embedding_provider.hpp"
#include "biascope/error.hpp"
#include "biascope/json_io.hpp"

namespace biascope {

/// Prompt pattern with {Class} and/or {Attribute} placeholders.
struct PromptTemplate {
  std::string pattern;

  bool has_class() const { return pattern.find("{Class}") != std::string::npos; }
  bool has_attribute() const { return pattern.find("{Attribute}") != std::string::npos; }

  std::string instantiate(std::string_view class_name, std::string_view attribute_name) const {
    std::string out;
    out.reserve(pattern.size() + class_name.size() + attribute_name.size());
    std::size_t i = 0;
    while (i < pattern.size()) {
      if (pattern.compare(i, 7, "{Class}") == 0) {
        out += class_name;
        i += 7;
      } else if (pattern.compare(i, 11, "{Attribute}") == 0) {
        out += attribute_name;
        i += 11;
      } else {
        out.push_back(pattern[i++]);
      }
    }
    return out;
  }
};

/// Zero-shot annotation template sets. "waterbirds" is also the default.
inline std::vector<PromptTemplate> annotation_template_preset(std::string_view name) {
  if (name == "cmnist") {
    return {{"a photo of a {Attribute} number {Class}"},
            {"a painting of a {Attribute} number {Class}"},
            {"a pixelated photo of a {Attribute} number {Class}"},
            {"a dark photo of a {Attribute} number {Class}"}};
  }
  if (name == "celeba") {
    return {{"a photo of a {Attribute} with {Class} hair"},
            {"a sketch of a {Attribute} with {Class} hair"},
            {"a blurry photo of a {Attribute} with {Class} hair"},
            {"a black and white photo of a {Attribute} with {Class} hair"}};
  }
  if (name == "waterbirds") {
    return {{"a photo of a {Class} in {Attribute}"},
            {"a painting of a {Class} in {Attribute}"},
            {"a close-up photo of a {Class} in {Attribute}"},
            {"a photo of a small {Class} in {Attribute}"}};
  }
  throw Error(ErrorCode::ConfigError, "unknown template preset '" + std::string(name) + "'");
}

inline std::vector<std::string> expand_templates(const std::vector<PromptTemplate>& templates,
                                                 std::string_view class_name, std::string_view attribute_name) {
  if (templates.empty()) throw Error(ErrorCode::ConfigError, "no prompt templates");
  std::vector<std::string> out;
  out.reserve(templates.size());
  for (const auto& t : templates) {
    if (!t.has_class() && !t.has_attribute()) {
      throw Error(ErrorCode::MissingPlaceholder, "template '" + t.pattern + "' has no placeholder");
    }
    out.push_back(t.instantiate(class_name, attribute_name));
  }
  return out;
}

/// Ensemble text embedding: normalize(mean of the prompts' embeddings).
inline Vector group_text_embedding(const std::vector<std::string>& prompts, const EmbeddingProvider& provider) {
  if (prompts.empty()) throw Error(ErrorCode::ConfigError, "group embedding needs at least one prompt");
  Vector mean(provider.dim(), 0.0);
  for (const auto& p : prompts) axpy(1.0 / static_cast<double>(prompts.size()), provider.embed(p), mean);
  return normalize_embedding(mean);
}

/// Union of the selected keywords, taken rank-major across classes
/// (every class's best keyword first), deduplicated, capped at b_max.
inline std::vector<std::string> build_attribute_vocabulary(const ScoredCandidates& selected, std::size_t b_max) {
  std::vector<std::string> vocab;
  std::size_t depth = 0;
  for (const auto& list : selected) depth = std::max(depth, list.size());
  for (std::size_t r = 0; r < depth && vocab.size() < b_max; ++r) {
    for (const auto& list : selected) {
      if (r >= list.size() || vocab.size() >= b_max) continue;
      if (std::find(vocab.begin(), vocab.end(), list[r].text) == vocab.end()) vocab.push_back(list[r].text);
    }
  }
  if (vocab.empty()) throw Error(ErrorCode::NoCandidates, "no bias keywords were selected for any class");
  return vocab;
}

/// Every prompt the annotation stage will embed, in request order.
inline std::vector<std::string> annotation_prompts(const std::vector<std::string>& class_names,
                                                   const std::vector<std::string>& attribute_names,
                                                   const std::vector<PromptTemplate>& templates) {
  std::vector<std::string> out;
  for (const auto& cls : class_names) {
    for (const auto& attr : attribute_names) {
      auto ps = expand_templates(templates, cls, attr);
      out.insert(out.end(), ps.begin(), ps.end());
    }
  }
  return out;
}

/// Row-major C x B ensemble embeddings, index c * B + b.
inline std::vector<Vector> compute_group_embeddings(const std::vector<std::string>& class_names,
                                                    const std::vector<std::string>& attribute_names,
                                                    const std::vector<PromptTemplate>& templates,
                                                    const EmbeddingProvider& provider) {
  provider.require_all(annotation_prompts(class_names, attribute_names, templates));
  std::vector<Vector> out;
  for (const auto& cls : class_names) {
    for (const auto& attr : attribute_names) {
      out.push_back(group_text_embedding(expand_templates(templates, cls, attr), provider));
    }
  }
  return out;
}

struct GroupAssignment {
  std::string sample_id;
  int class_label = 0;
  int attribute = 0;
  int group_id = 0;

  bool operator==(const GroupAssignment&) const = default;
};

struct GroupTable {
  CountTable counts;
  std::vector<std::string> attribute_names;

  bool operator==(const GroupTable&) const = default;
};

struct Annotation {
  std::vector<std::string> class_names;
  std::vector<std::string> attribute_names;
  // One entry per dataset sample, in dataset order (all splits).
  std::vector<GroupAssignment> assignments;

  std::size_t num_attributes() const { return attribute_names.size(); }
  std::size_t num_groups() const { return class_names.size() * attribute_names.size(); }
};

/// Zero-shot pseudo-attribute per sample: argmax over the sample's own class
/// row of <image, group embedding>, lowest attribute index on ties.
inline Annotation assign_groups(const Dataset& ds, const std::vector<Vector>& group_embeddings,
                                const std::vector<std::string>& attribute_names) {
  const std::size_t C = ds.num_classes();
  const std::size_t B = attribute_names.size();
  if (B == 0) throw Error(ErrorCode::ConfigError, "no attributes to assign");
  if (group_embeddings.size() != C * B) {
    throw Error(ErrorCode::SchemaError, "expected " + std::to_string(C * B) + " group embeddings, got " +
                                            std::to_string(group_embeddings.size()));
  }
  for (const auto& g : group_embeddings) {
    if (g.size() != ds.dim) throw Error(ErrorCode::DimensionMismatch, "group embedding dimension differs from dataset");
  }
  Annotation ann;
  ann.class_names = ds.class_names;
  ann.attribute_names = attribute_names;
  ann.assignments.reserve(ds.samples.size());
  for (const Sample& s : ds.samples) {
    const auto c = static_cast<std::size_t>(s.label);
    std::size_t best = 0;
    double best_score = dot(s.embedding, group_embeddings[c * B]);
    for (std::size_t b = 1; b < B; ++b) {
      const double score = dot(s.embedding, group_embeddings[c * B + b]);
      if (score > best_score) {
        best_score = score;
        best = b;
      }
    }
    ann.assignments.push_back({s.id, s.label, static_cast<int>(best), static_cast<int>(c * B + best)});
  }
  return ann;
}

/// Tally of assignments over one split.
inline GroupTable group_table(const Annotation& ann, const Dataset& ds, Split split = Split::Train) {
  GroupTable t{CountTable(ann.class_names.size(), ann.num_attributes()), ann.attribute_names};
  std::unordered_map<std::string_view, const GroupAssignment*> by_id;
  for (const auto& a : ann.assignments) by_id.emplace(a.sample_id, &a);
  for (const Sample& s : ds.samples) {
    if (s.split != split) continue;
    auto it = by_id.find(s.id);
    if (it == by_id.end()) continue;
    ++t.counts.at(static_cast<std::size_t>(it->second->class_label), static_cast<std::size_t>(it->second->attribute));
  }
  return t;
}

/// Per-sample group ids aligned with ds.samples; -1 where a sample has no
/// assignment.
inline std::vector<int> group_ids_for(const Annotation& ann, const Dataset& ds) {
  std::unordered_map<std::string_view, int> by_id;
  for (const auto& a : ann.assignments) by_id.emplace(a.sample_id, a.group_id);
  std::vector<int> out;
  out.reserve(ds.samples.size());
  for (const Sample& s : ds.samples) {
    auto it = by_id.find(s.id);
    out.push_back(it == by_id.end() ? -1 : it->second);
  }
  return out;
}

/// Agreement between pseudo attributes and bias_truth under the best
/// relabeling (exhaustive over label permutations, up to 10 labels).
inline double annotation_accuracy(const std::vector<GroupAssignment>& assignments, const Dataset& ds) {
  std::unordered_map<std::string_view, const Sample*> by_id;
  for (const Sample& s : ds.samples) by_id.emplace(s.id, &s);
  std::vector<std::pair<int, int>> pairs;
  int labels = 0;
  for (const auto& a : assignments) {
    auto it = by_id.find(a.sample_id);
    if (it == by_id.end() || !it->second->bias_truth) {
      throw Error(ErrorCode::MissingTruth, "sample '" + a.sample_id + "' has no bias_truth");
    }
    const int truth = *it->second->bias_truth;
    pairs.emplace_back(a.attribute, truth);
    labels = std::max({labels, a.attribute + 1, truth + 1});
  }
  if (pairs.empty()) throw Error(ErrorCode::MissingTruth, "no assignments to score");
  if (labels > 10) throw Error(ErrorCode::ConfigError, "annotation_accuracy supports at most 10 labels");
  const auto L = static_cast<std::size_t>(labels);
  std::vector<long long> confusion(L * L, 0);
  for (auto [p, t] : pairs) ++confusion[static_cast<std::size_t>(p) * L + static_cast<std::size_t>(t)];
  std::vector<std::size_t> perm(L);
  std::iota(perm.begin(), perm.end(), 0);
  long long best = 0;
  do {
    long long agree = 0;
    for (std::size_t p = 0; p < L; ++p) agree += confusion[p * L + perm[p]];
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pairs.size());
}

// groups.jsonl

inline std::string serialize_groups(const Annotation& ann) {
  std::ostringstream out;
  out << Json{{"kind", "header"}, {"class_names", ann.class_names}, {"attribute_names", ann.attribute_names}}.dump()
      << '\n';
  for (const auto& a : ann.assignments) {
    out << Json{{"id", a.sample_id}, {"class", a.class_label}, {"attribute", a.attribute}, {"group", a.group_id}}.dump()
        << '\n';
  }
  return out.str();
}

inline Annotation parse_groups(std::istream& in, const std::string& where) {
  Annotation ann;
  bool header = false;
  io::for_each_jsonl(in, where, [&](const Json& row, std::size_t lineno) {
    const std::string at = where + ":" + std::to_string(lineno);
    if (!header) {
      io::require_only(row, {"kind", "class_names", "attribute_names"}, at);
      if (io::require_string(row, "kind", at) != "header") throw Error(ErrorCode::SchemaError, at + ": missing header");
      try {
        ann.class_names = io::require(row, "class_names", at).get<std::vector<std::string>>();
        ann.attribute_names = io::require(row, "attribute_names", at).get<std::vector<std::string>>();
      } catch (const Json::exception&) {
        throw Error(ErrorCode::SchemaError, at + ": names must be string arrays");
      }
      header = true;
      return;
    }
    io::require_only(row, {"id", "class", "attribute", "group"}, at);
    GroupAssignment a;
    a.sample_id = io::require_string(row, "id", at);
    a.class_label = static_cast<int>(io::require_int(row, "class", at));
    a.attribute = static_cast<int>(io::require_int(row, "attribute", at));
    a.group_id = static_cast<int>(io::require_int(row, "group", at));
    const auto C = static_cast<int>(ann.class_names.size());
    const auto B = static_cast<int>(ann.attribute_names.size());
    if (a.class_label < 0 || a.class_label >= C || a.attribute < 0 || a.attribute >= B ||
        a.group_id != a.class_label * B + a.attribute) {
      throw Error(ErrorCode::SchemaError, at + ": inconsistent class/attribute/group");
    }
    ann.assignments.push_back(std::move(a));
  });
  if (!header) throw Error(ErrorCode::SchemaError, where + ": missing header");
  return ann;
}

inline Annotation load_groups(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifact, "cannot open " + path.string());
  return parse_groups(in, path.string());
}

}  // namespace biascope
