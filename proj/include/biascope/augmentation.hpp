#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "biascope/annotation.hpp"
#include "biascope/count_table.hpp"
#include "biascope/dataset.hpp"
#include "biascope/detection.hpp"
#include "biascope/embedding_provider.hpp"
#include "biascope/error.hpp"
#include "biascope/json_io.hpp"
#include "biascope/log.hpp"
#include "biascope/synth.hpp"

namespace biascope {

// ---------------------------------------------------------------------------
// Prompts and thresholds
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDefaultGenerationTemplate = "a photo of a {Class} in a {Attribute}";

inline PromptTemplate generation_template_preset(std::string_view name) {
  if (name == "waterbirds") return {std::string(kDefaultGenerationTemplate)};
  if (name == "celeba") return {"a photo of a {Attribute} with {Class} hair"};
  if (name == "cmnist") return {"a {Attribute} number {Class} on black background"};
  throw Error(ErrorCode::ConfigError, "unknown generation template preset '" + std::string(name) + "'");
}

/// Generation prompt for one minority group; the template must name both the
/// class and the attribute.
inline std::string build_minority_prompt(std::string_view class_name, std::string_view attribute_keyword,
                                         const PromptTemplate& tmpl) {
  if (!tmpl.has_class() || !tmpl.has_attribute()) {
    throw Error(ErrorCode::MissingPlaceholder,
                "generation template '" + tmpl.pattern + "' needs both {Class} and {Attribute}");
  }
  if (text::trim(attribute_keyword).empty()) {
    log::warn("empty attribute keyword in generation prompt for class '", class_name, "'");
  }
  return tmpl.instantiate(class_name, attribute_keyword);
}

/// Acceptance threshold: mean prompt-image similarity over the group's real
/// images.
template <typename ImageRange>
double minority_threshold(std::span<const double> prompt_embedding, const ImageRange& minority_images) {
  if (std::begin(minority_images) == std::end(minority_images)) {
    throw Error(ErrorCode::EmptyMinority, "minority group has no real images");
  }
  return s_clip(prompt_embedding, minority_images);
}

// ---------------------------------------------------------------------------
// Balancing arithmetic
// ---------------------------------------------------------------------------

enum class BalanceMode { UniformWithinClass, MatchReferenceClass };

inline std::string_view to_string(BalanceMode m) {
  return m == BalanceMode::UniformWithinClass ? "uniform-within-class" : "match-reference-class";
}

inline BalanceMode parse_balance_mode(std::string_view s) {
  if (s == "uniform-within-class") return BalanceMode::UniformWithinClass;
  if (s == "match-reference-class") return BalanceMode::MatchReferenceClass;
  throw Error(ErrorCode::ConfigError, "unknown balance mode '" + std::string(s) + "'");
}

struct BalancePlan {
  BalanceMode mode = BalanceMode::UniformWithinClass;
  CountTable deltas;
  std::optional<int> reference_class;

  std::int64_t total() const { return deltas.total(); }
};

/// How many images each (class, attribute) cell needs so that the attribute
/// distribution no longer depends on the class.
///
/// uniform-within-class raises every cell to its row maximum. match-reference-
/// class scales each non-reference row to the reference row's proportions,
/// anchored on the row's largest count/reference ratio so no cell shrinks;
/// targets are the ceiling of the exact rational, computed in integers.
inline BalancePlan generation_targets(const CountTable& counts, BalanceMode mode,
                                      std::optional<int> reference_override = std::nullopt) {
  const std::size_t C = counts.rows();
  const std::size_t B = counts.cols();
  if (C == 0 || B == 0 || counts.total() == 0) throw Error(ErrorCode::DegenerateTable, "count table is empty");
  for (std::size_t c = 0; c < C; ++c) {
    if (counts.row_total(c) == 0) {
      throw Error(ErrorCode::DegenerateTable, "class " + std::to_string(c) + " has no samples");
    }
  }
  BalancePlan plan{mode, CountTable(C, B), std::nullopt};
  if (mode == BalanceMode::UniformWithinClass) {
    for (std::size_t c = 0; c < C; ++c) {
      std::int64_t top = 0;
      for (std::size_t b = 0; b < B; ++b) top = std::max(top, counts.at(c, b));
      for (std::size_t b = 0; b < B; ++b) plan.deltas.at(c, b) = top - counts.at(c, b);
    }
    return plan;
  }

  std::size_t ref = 0;
  if (reference_override) {
    if (*reference_override < 0 || static_cast<std::size_t>(*reference_override) >= C) {
      throw Error(ErrorCode::ConfigError, "reference class out of range");
    }
    ref = static_cast<std::size_t>(*reference_override);
  } else {
    for (std::size_t c = 1; c < C; ++c) {
      if (counts.row_total(c) > counts.row_total(ref)) ref = c;
    }
  }
  plan.reference_class = static_cast<int>(ref);
  using Wide = __int128;
  for (std::size_t c = 0; c < C; ++c) {
    if (c == ref) continue;
    // Anchor cell m maximizes counts[c][b] / ref[b].
    std::size_t m = B;
    for (std::size_t b = 0; b < B; ++b) {
      const std::int64_t r = counts.at(ref, b);
      if (r == 0) {
        if (counts.at(c, b) > 0) {
          throw Error(ErrorCode::DegenerateTable, "reference class has no samples in a cell class " +
                                                      std::to_string(c) + " occupies");
        }
        continue;
      }
      if (m == B || Wide(counts.at(c, b)) * counts.at(ref, m) > Wide(counts.at(c, m)) * r) m = b;
    }
    for (std::size_t b = 0; b < B; ++b) {
      const std::int64_t r = counts.at(ref, b);
      if (r == 0) continue;
      const Wide num = Wide(counts.at(c, m)) * r;
      const Wide den = counts.at(ref, m);
      const auto target = static_cast<std::int64_t>((num + den - 1) / den);
      plan.deltas.at(c, b) = target - counts.at(c, b);
    }
  }
  return plan;
}

inline CountTable apply_plan(const CountTable& counts, const BalancePlan& plan) {
  CountTable out = counts;
  for (std::size_t c = 0; c < counts.rows(); ++c) {
    for (std::size_t b = 0; b < counts.cols(); ++b) out.at(c, b) += plan.deltas.at(c, b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generator seam
// ---------------------------------------------------------------------------

struct GenRequest {
  std::string prompt;
  std::uint64_t seed = 0;
  int class_label = 0;
  int attribute = 0;
};

struct GenResult {
  Vector embedding;
  std::optional<std::string> artifact_ref;
  GenRequest request;
};

class Generator {
 public:
  virtual ~Generator() = default;
  /// Throws Error(GeneratorError) on transport failure.
  virtual GenResult generate(const GenRequest& request) = 0;
};

/// Centroid-plus-noise stand-in for an image generator over a synthetic
/// world: the class and attribute are read back from the prompt's tokens.
class MockCentroidGenerator final : public Generator {
 public:
  explicit MockCentroidGenerator(SyntheticWorld world, std::optional<double> sigma = std::nullopt)
      : world_(std::move(world)), sigma_(sigma) {}

  Vector sample_for(std::string_view prompt, std::uint64_t seed) const {
    int c = -1, a = -1;
    for (const auto& tok : text::tokenize(prompt)) {
      if (c < 0) c = world_.class_of_token(tok);
      if (a < 0) a = world_.attribute_of_token(tok);
    }
    if (c < 0 || a < 0) {
      throw Error(ErrorCode::GeneratorError, "prompt '" + std::string(prompt) + "' names no known class/attribute");
    }
    Rng rng(seed * 0x9e3779b97f4a7c15ULL ^ world_.spec().seed ^ 0x6e6e6e6eULL);
    return world_.sample(c, a, rng, sigma_);
  }

  GenResult generate(const GenRequest& request) override {
    return {sample_for(request.prompt, request.seed), std::nullopt, request};
  }

 private:
  SyntheticWorld world_;
  std::optional<double> sigma_;
};

/// Serves the stdio generator protocol with a mock generator: one
/// {"prompt","seed"} request per line in, one {"embedding","artifact_ref"} out.
inline void serve_generator(const MockCentroidGenerator& gen, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    Json req = Json::parse(line, nullptr, false);
    if (req.is_discarded() || !req.is_object() || !req.contains("prompt") || !req.contains("seed")) {
      out << Json{{"error", "bad request"}}.dump() << std::endl;
      continue;
    }
    try {
      const Vector v = gen.sample_for(req.at("prompt").get<std::string>(), req.at("seed").get<std::uint64_t>());
      out << Json{{"embedding", v}, {"artifact_ref", nullptr}}.dump() << std::endl;
    } catch (const std::exception& e) {
      out << Json{{"error", e.what()}}.dump() << std::endl;
    }
  }
}

// ---------------------------------------------------------------------------
// Generate-filter-add loop
// ---------------------------------------------------------------------------

struct AugmentConfig {
  int max_attempt_factor = 20;
  PromptTemplate prompt_template{std::string(kDefaultGenerationTemplate)};
  std::uint64_t seed = 0;
  int max_retries = 3;
};

enum class GroupStatus { Complete, AttemptBudgetExceeded, GeneratorFailed };

inline std::string_view to_string(GroupStatus s) {
  switch (s) {
    case GroupStatus::Complete: return "complete";
    case GroupStatus::AttemptBudgetExceeded: return "attempt_budget_exceeded";
    case GroupStatus::GeneratorFailed: return "generator_error";
  }
  return "complete";
}

struct GroupAugmentReport {
  int class_label = 0;
  int attribute = 0;
  std::string prompt;
  double s_minor = 0.0;
  bool s_minor_from_class = false;  // empty-minority fallback was used
  std::int64_t requested = 0;
  std::int64_t accepted = 0;
  std::int64_t attempts = 0;
  GroupStatus status = GroupStatus::Complete;
  std::string error;

  double acceptance_rate() const {
    return attempts ? static_cast<double>(accepted) / static_cast<double>(attempts) : 0.0;
  }
};

struct AugmentReport {
  BalanceMode mode = BalanceMode::UniformWithinClass;
  std::optional<int> reference_class;
  std::vector<GroupAugmentReport> groups;
  CountTable initial_counts;
  CountTable final_counts;
  std::vector<std::string> attribute_names;
  double independence_gap = 0.0;

  bool shortfall() const {
    return std::any_of(groups.begin(), groups.end(), [](const auto& g) { return g.status != GroupStatus::Complete; });
  }
};

struct AugmentResult {
  Dataset dataset;
  Annotation annotation;
  AugmentReport report;
};

/// Texts the augmentation stage will embed, one prompt per planned group.
inline std::vector<std::string> augmentation_prompts(const Annotation& ann, const BalancePlan& plan,
                                                     const PromptTemplate& tmpl) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < plan.deltas.rows(); ++c) {
    for (std::size_t b = 0; b < plan.deltas.cols(); ++b) {
      if (plan.deltas.at(c, b) > 0) out.push_back(build_minority_prompt(ann.class_names[c], ann.attribute_names[b], tmpl));
    }
  }
  return out;
}

/// Lg-Augmentation. For each cell with a positive delta: threshold from the
/// cell's original images, then generate with consecutive seeds and keep a
/// result iff its prompt similarity strictly exceeds the threshold. Stops at
/// the delta or after max_attempt_factor * delta requests. Original samples
/// are never touched; generated ones carry the target group's labels.
inline AugmentResult augment_minorities(const Dataset& ds, const Annotation& ann, const BalancePlan& plan,
                                        Generator& generator, const EmbeddingProvider& provider,
                                        const AugmentConfig& config) {
  const std::size_t C = ds.num_classes();
  const std::size_t B = ann.num_attributes();
  if (plan.deltas.rows() != C || plan.deltas.cols() != B) {
    throw Error(ErrorCode::SchemaError, "balance plan shape does not match the group table");
  }
  if (config.max_attempt_factor < 1) throw Error(ErrorCode::ConfigError, "max_attempt_factor must be >= 1");
  provider.require_all(augmentation_prompts(ann, plan, config.prompt_template));

  AugmentResult result{ds, ann, {}};
  AugmentReport& report = result.report;
  report.mode = plan.mode;
  report.reference_class = plan.reference_class;
  report.attribute_names = ann.attribute_names;
  report.initial_counts = group_table(ann, ds).counts;

  const std::vector<int> ids = group_ids_for(ann, ds);
  std::unordered_set<std::string> taken;
  for (const Sample& s : ds.samples) taken.insert(s.id);

  std::uint64_t next_seed = config.seed;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t b = 0; b < B; ++b) {
      const std::int64_t delta = plan.deltas.at(c, b);
      if (delta <= 0) continue;
      GroupAugmentReport gr;
      gr.class_label = static_cast<int>(c);
      gr.attribute = static_cast<int>(b);
      gr.requested = delta;
      gr.prompt = build_minority_prompt(ann.class_names[c], ann.attribute_names[b], config.prompt_template);
      const Vector p = provider.embed(gr.prompt);

      std::vector<std::span<const double>> minority, whole_class;
      const int gid = static_cast<int>(c * B + b);
      for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        if (s.split != Split::Train || static_cast<std::size_t>(s.label) != c) continue;
        whole_class.emplace_back(s.embedding);
        if (ids[i] == gid) minority.emplace_back(s.embedding);
      }
      try {
        gr.s_minor = minority_threshold(p, minority);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyMinority) throw;
        log::warn("group (", c, ", ", b, ") has no real images; threshold taken over the whole class");
        gr.s_minor = s_clip(p, whole_class);
        gr.s_minor_from_class = true;
      }

      const std::int64_t budget = static_cast<std::int64_t>(config.max_attempt_factor) * delta;
      while (gr.accepted < delta && gr.attempts < budget) {
        GenRequest req{gr.prompt, next_seed++, static_cast<int>(c), static_cast<int>(b)};
        ++gr.attempts;
        std::optional<GenResult> res;
        for (int attempt = 0; attempt <= config.max_retries && !res; ++attempt) {
          try {
            res = generator.generate(req);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::GeneratorError) throw;
            gr.error = e.what();
            log::warn("generator failed for '", gr.prompt, "' (try ", attempt + 1, "): ", e.what());
          }
        }
        if (!res) {
          gr.status = GroupStatus::GeneratorFailed;
          break;
        }
        if (res->embedding.size() != ds.dim) {
          throw Error(ErrorCode::DimensionMismatch, "generated embedding has dimension " +
                                                        std::to_string(res->embedding.size()));
        }
        Vector x = normalize_embedding(res->embedding);
        const double s_gen = dot(p, x);
        if (!(s_gen > gr.s_minor)) continue;
        Sample s;
        s.id = "gen-c" + std::to_string(c) + "-a" + std::to_string(b) + "-" + std::to_string(req.seed);
        if (!taken.insert(s.id).second) throw Error(ErrorCode::DuplicateId, "generated id '" + s.id + "' collides");
        s.split = Split::Train;
        s.label = static_cast<int>(c);
        s.embedding = std::move(x);
        s.generated = true;
        result.annotation.assignments.push_back({s.id, s.label, static_cast<int>(b), gid});
        result.dataset.samples.push_back(std::move(s));
        ++gr.accepted;
      }
      if (gr.status == GroupStatus::Complete && gr.accepted < delta) gr.status = GroupStatus::AttemptBudgetExceeded;
      log::info("group (", c, ", ", b, ") '", gr.prompt, "': accepted ", gr.accepted, "/", delta, " in ", gr.attempts,
                " attempts");
      report.groups.push_back(std::move(gr));
    }
  }
  report.final_counts = group_table(result.annotation, result.dataset).counts;
  report.independence_gap = independence_gap(report.final_counts);
  return result;
}

/// Post-augmentation check; throws when any group fell short or the final
/// table is further from independence than rounding allows.
inline void require_balanced(const AugmentReport& report) {
  for (const auto& g : report.groups) {
    if (g.status == GroupStatus::GeneratorFailed) {
      throw Error(ErrorCode::GeneratorError, "group (" + std::to_string(g.class_label) + ", " +
                                                 std::to_string(g.attribute) + "): " + g.error);
    }
  }
  std::string shortfall;
  for (const auto& g : report.groups) {
    if (g.status == GroupStatus::AttemptBudgetExceeded) {
      shortfall += " (" + std::to_string(g.class_label) + "," + std::to_string(g.attribute) + "): " +
                   std::to_string(g.accepted) + "/" + std::to_string(g.requested);
    }
  }
  if (!shortfall.empty()) {
    throw Error(ErrorCode::AttemptBudgetExceeded, "augmentation fell short; class/attribute independence not "
                                                  "reached, gap " + std::to_string(report.independence_gap) + ";" + shortfall);
  }
  std::int64_t min_total = INT64_MAX;
  for (std::size_t c = 0; c < report.final_counts.rows(); ++c) {
    min_total = std::min(min_total, report.final_counts.row_total(c));
  }
  const double tol = min_total > 0 ? 1.0 / static_cast<double>(min_total) : 0.0;
  if (report.independence_gap > tol + 1e-12) {
    throw Error(ErrorCode::AttemptBudgetExceeded,
                "final table gap " + std::to_string(report.independence_gap) + " exceeds " + std::to_string(tol));
  }
}

inline Json augment_report_to_json(const AugmentReport& r) {
  Json groups = Json::array();
  for (const auto& g : r.groups) {
    groups.push_back({{"class", g.class_label},
                      {"attribute", g.attribute},
                      {"prompt", g.prompt},
                      {"s_minor", g.s_minor},
                      {"s_minor_source", g.s_minor_from_class ? "class" : "minority"},
                      {"requested", g.requested},
                      {"accepted", g.accepted},
                      {"attempts", g.attempts},
                      {"acceptance_rate", g.acceptance_rate()},
                      {"status", std::string(to_string(g.status))}});
  }
  return Json{{"mode", std::string(to_string(r.mode))},
              {"reference_class", r.reference_class ? Json(*r.reference_class) : Json(nullptr)},
              {"attribute_names", r.attribute_names},
              {"groups", groups},
              {"initial_counts", r.initial_counts.to_rows()},
              {"final_counts", r.final_counts.to_rows()},
              {"independence_gap", r.independence_gap}};
}

}  // namespace biascope
