#pragma once

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "biascope/annotation.hpp"
#include "biascope/augmentation.hpp"
#include "biascope/dataset.hpp"
#include "biascope/detection.hpp"
#include "biascope/embedding_provider.hpp"
#include "biascope/error.hpp"
#include "biascope/evaluation.hpp"
#include "biascope/json_io.hpp"
#include "biascope/log.hpp"
#include "biascope/subprocess.hpp"
#include "biascope/synth.hpp"
#include "biascope/training.hpp"

namespace biascope {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct PathsConfig {
  fs::path embeddings;
  std::optional<fs::path> captions;
  std::optional<fs::path> text_embeddings;
  std::optional<fs::path> world;  // synthetic-oracle text encoder
  fs::path output_dir = "out";
};

struct DetectionConfig {
  std::string extractor = "freq";
  std::size_t k = 5;
  std::size_t max_candidates = 10;
  int min_count = 5;
  bool exclude_class_names = true;
  std::optional<std::string> chat_command;
  std::size_t char_budget = 60000;
};

struct AnnotationConfig {
  std::string preset = "waterbirds";
  std::vector<std::string> templates;  // overrides the preset when non-empty
  std::size_t b_max = 6;

  std::vector<PromptTemplate> resolved_templates() const {
    if (templates.empty()) return annotation_template_preset(preset);
    std::vector<PromptTemplate> out;
    for (const auto& t : templates) out.push_back({t});
    return out;
  }
};

struct AugmentationConfig {
  BalanceMode mode = BalanceMode::UniformWithinClass;
  std::string prompt_template{kDefaultGenerationTemplate};
  int max_attempt_factor = 20;
  std::optional<std::string> generator_command;
  std::optional<int> reference_class;
};

struct PipelineConfig {
  PathsConfig paths;
  DetectionConfig detection;
  AnnotationConfig annotation;
  TrainConfig dro;
  TrainConfig erm;
  AugmentationConfig augmentation;
  Split eval_split = Split::Test;
  std::uint64_t seed = 0;

  fs::path out(const fs::path& rel) const { return paths.output_dir / rel; }

  /// Checks values and that every referenced input exists.
  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
    if (paths.embeddings.empty()) fail("paths.embeddings is required");
    if (!fs::exists(paths.embeddings)) fail("paths.embeddings: " + paths.embeddings.string() + " does not exist");
    if (paths.captions && !fs::exists(*paths.captions)) fail("paths.captions: " + paths.captions->string() + " does not exist");
    if (paths.text_embeddings.has_value() == paths.world.has_value()) {
      fail("exactly one of paths.text_embeddings and paths.world must be set");
    }
    if (paths.text_embeddings && !fs::exists(*paths.text_embeddings)) {
      fail("paths.text_embeddings: " + paths.text_embeddings->string() + " does not exist");
    }
    if (paths.world && !fs::exists(*paths.world)) fail("paths.world: " + paths.world->string() + " does not exist");
    if (detection.extractor != "freq" && detection.extractor != "llm") fail("detection.extractor must be freq or llm");
    if (detection.extractor == "llm" && !detection.chat_command) fail("detection.chat_command is required for llm");
    if (detection.k < 1) fail("detection.k must be >= 1");
    if (detection.max_candidates < 1) fail("detection.max_candidates must be >= 1");
    if (detection.min_count < 1) fail("detection.min_count must be >= 1");
    if (annotation.b_max < 1) fail("annotation.b_max must be >= 1");
    if (augmentation.max_attempt_factor < 1) fail("augmentation.max_attempt_factor must be >= 1");
    dro.validate();
    erm.validate();
  }

  Json to_json() const {
    auto opt_path = [](const std::optional<fs::path>& p) { return p ? Json(p->string()) : Json(nullptr); };
    auto opt_str = [](const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); };
    return Json{
        {"paths",
         {{"embeddings", paths.embeddings.string()},
          {"captions", opt_path(paths.captions)},
          {"text_embeddings", opt_path(paths.text_embeddings)},
          {"world", opt_path(paths.world)},
          {"output_dir", paths.output_dir.string()}}},
        {"detection",
         {{"extractor", detection.extractor},
          {"k", detection.k},
          {"max_candidates", detection.max_candidates},
          {"min_count", detection.min_count},
          {"exclude_class_names", detection.exclude_class_names},
          {"chat_command", opt_str(detection.chat_command)},
          {"char_budget", detection.char_budget}}},
        {"annotation", {{"preset", annotation.preset}, {"templates", annotation.templates}, {"b_max", annotation.b_max}}},
        {"training", {{"dro", dro.to_json()}, {"erm", erm.to_json()}}},
        {"augmentation",
         {{"mode", std::string(to_string(augmentation.mode))},
          {"template", augmentation.prompt_template},
          {"max_attempt_factor", augmentation.max_attempt_factor},
          {"generator_command", opt_str(augmentation.generator_command)},
          {"reference_class", augmentation.reference_class ? Json(*augmentation.reference_class) : Json(nullptr)}}},
        {"evaluation", {{"split", std::string(to_string(eval_split))}}},
        {"seed", seed}};
  }

  /// Relative paths are resolved against `base_dir`. Training seeds default
  /// to the top-level seed.
  static PipelineConfig from_json(const Json& j, const fs::path& base_dir = {}) {
    const std::string where = "config";
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
    PipelineConfig cfg;
    try {
      io::require_only(j, {"paths", "detection", "annotation", "training", "augmentation", "evaluation", "seed"}, where);
      if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
      auto resolve = [&](const std::string& p) {
        fs::path path(p);
        return path.is_relative() && !base_dir.empty() ? (base_dir / path).lexically_normal() : path;
      };
      auto opt_path = [&](const Json& sec, const char* key) -> std::optional<fs::path> {
        if (!sec.contains(key) || sec.at(key).is_null()) return std::nullopt;
        return resolve(sec.at(key).get<std::string>());
      };
      auto opt_str = [](const Json& sec, const char* key) -> std::optional<std::string> {
        if (!sec.contains(key) || sec.at(key).is_null()) return std::nullopt;
        return sec.at(key).get<std::string>();
      };

      const Json paths = j.value("paths", Json::object());
      io::require_only(paths, {"embeddings", "captions", "text_embeddings", "world", "output_dir"}, "config.paths");
      if (paths.contains("embeddings")) cfg.paths.embeddings = resolve(paths.at("embeddings").get<std::string>());
      cfg.paths.captions = opt_path(paths, "captions");
      cfg.paths.text_embeddings = opt_path(paths, "text_embeddings");
      cfg.paths.world = opt_path(paths, "world");
      cfg.paths.output_dir = resolve(paths.value("output_dir", std::string("out")));

      const Json det = j.value("detection", Json::object());
      io::require_only(det, {"extractor", "k", "max_candidates", "min_count", "exclude_class_names", "chat_command",
                             "char_budget"},
                       "config.detection");
      cfg.detection.extractor = det.value("extractor", cfg.detection.extractor);
      cfg.detection.k = det.value("k", cfg.detection.k);
      cfg.detection.max_candidates = det.value("max_candidates", cfg.detection.max_candidates);
      cfg.detection.min_count = det.value("min_count", cfg.detection.min_count);
      cfg.detection.exclude_class_names = det.value("exclude_class_names", cfg.detection.exclude_class_names);
      cfg.detection.chat_command = opt_str(det, "chat_command");
      cfg.detection.char_budget = det.value("char_budget", cfg.detection.char_budget);

      const Json ann = j.value("annotation", Json::object());
      io::require_only(ann, {"preset", "templates", "b_max"}, "config.annotation");
      cfg.annotation.preset = ann.value("preset", cfg.annotation.preset);
      cfg.annotation.templates = ann.value("templates", cfg.annotation.templates);
      cfg.annotation.b_max = ann.value("b_max", cfg.annotation.b_max);
      cfg.annotation.resolved_templates();

      const Json tr = j.value("training", Json::object());
      io::require_only(tr, {"dro", "erm"}, "config.training");
      const Json dro = tr.value("dro", Json::object());
      const Json erm = tr.value("erm", Json::object());
      cfg.dro = TrainConfig::from_json(dro);
      cfg.erm = TrainConfig::from_json(erm);
      if (!dro.contains("seed")) cfg.dro.seed = cfg.seed;
      if (!erm.contains("seed")) cfg.erm.seed = cfg.seed;

      const Json aug = j.value("augmentation", Json::object());
      io::require_only(aug, {"mode", "template", "max_attempt_factor", "generator_command", "reference_class"},
                       "config.augmentation");
      if (aug.contains("mode")) cfg.augmentation.mode = parse_balance_mode(aug.at("mode").get<std::string>());
      cfg.augmentation.prompt_template = aug.value("template", cfg.augmentation.prompt_template);
      cfg.augmentation.max_attempt_factor = aug.value("max_attempt_factor", cfg.augmentation.max_attempt_factor);
      cfg.augmentation.generator_command = opt_str(aug, "generator_command");
      if (aug.contains("reference_class") && !aug.at("reference_class").is_null()) {
        cfg.augmentation.reference_class = aug.at("reference_class").get<int>();
      }

      const Json ev = j.value("evaluation", Json::object());
      io::require_only(ev, {"split"}, "config.evaluation");
      if (ev.contains("split")) {
        auto s = parse_split(ev.at("split").get<std::string>());
        if (!s) throw Error(ErrorCode::ConfigError, "evaluation.split must be train|val|test");
        cfg.eval_split = *s;
      }
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::ConfigError, std::string("config: ") + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::SchemaError) throw Error(ErrorCode::ConfigError, e.what());
      throw;
    }
    return cfg;
  }

  static PipelineConfig load(const fs::path& path, const Json& overrides = Json::object()) {
    if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "config file " + path.string() + " does not exist");
    Json j;
    try {
      j = io::read_json(path);
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, e.what());
    }
    j.merge_patch(overrides);
    return from_json(j, fs::absolute(path).parent_path());
  }
};

// ---------------------------------------------------------------------------
// Hashing and the run manifest
// ---------------------------------------------------------------------------

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(io::read_file(path)); }

/// Merges one stage's record into <output_dir>/manifest.json.
inline void record_manifest(const PipelineConfig& cfg, const std::string& stage, const std::vector<fs::path>& inputs,
                            const std::vector<fs::path>& artifacts) {
  const fs::path path = cfg.out("manifest.json");
  Json manifest = fs::exists(path) ? io::read_json(path) : Json::object();
  const Json config = cfg.to_json();
  manifest["config"] = config;
  manifest["config_sha256"] = sha256_hex(config.dump());
  Json rec = {{"inputs", Json::object()}, {"artifacts", Json::object()}};
  for (const auto& p : inputs) rec["inputs"][p.string()] = sha256_file(p);
  for (const auto& p : artifacts) {
    rec["artifacts"][fs::relative(p, cfg.paths.output_dir).generic_string()] = sha256_file(p);
  }
  manifest["stages"][stage] = rec;
  io::write_json(path, manifest);
}

// ---------------------------------------------------------------------------
// Shared loading
// ---------------------------------------------------------------------------

namespace artifacts {
inline constexpr const char* kKeywords = "keywords.json";
inline constexpr const char* kGroups = "groups.jsonl";
inline constexpr const char* kModel = "model.json";
inline constexpr const char* kTrainingLog = "training_log.jsonl";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kAugmentedEmbeddings = "lgaug/augmented_embeddings.jsonl";
inline constexpr const char* kAugmentedGroups = "lgaug/groups.jsonl";
inline constexpr const char* kAugmentReport = "lgaug/augment_report.json";
}  // namespace artifacts

inline std::vector<fs::path> dataset_inputs(const PipelineConfig& cfg) {
  std::vector<fs::path> in{cfg.paths.embeddings};
  if (cfg.paths.captions) in.push_back(*cfg.paths.captions);
  return in;
}

inline std::vector<fs::path> provider_inputs(const PipelineConfig& cfg) {
  return {cfg.paths.text_embeddings ? *cfg.paths.text_embeddings : *cfg.paths.world};
}

inline Dataset load_inputs(const PipelineConfig& cfg) { return load_dataset(cfg.paths.embeddings, cfg.paths.captions); }

inline SynthSpec load_world(const fs::path& path) { return SynthSpec::from_json(io::read_json(path)); }

/// The configured text encoder. Rejects a text table recorded under a
/// different encoder than the image embeddings.
inline std::unique_ptr<EmbeddingProvider> make_provider(const PipelineConfig& cfg, const Dataset& ds) {
  std::unique_ptr<EmbeddingProvider> p;
  std::optional<std::string> model;
  if (cfg.paths.text_embeddings) {
    auto file = std::make_unique<FileEmbeddingProvider>(FileEmbeddingProvider::load(*cfg.paths.text_embeddings));
    model = file->model();
    p = std::move(file);
  } else {
    p = std::make_unique<SyntheticEmbeddingProvider>(SyntheticWorld(load_world(*cfg.paths.world)));
    model = "synthetic-oracle";
  }
  if (model && ds.model && *model != *ds.model) {
    throw Error(ErrorCode::SchemaError, "text embeddings come from '" + *model + "' but image embeddings from '" +
                                            *ds.model + "'");
  }
  if (p->dim() != ds.dim) {
    throw Error(ErrorCode::DimensionMismatch, "text embeddings have dimension " + std::to_string(p->dim()) +
                                                  ", images " + std::to_string(ds.dim));
  }
  return p;
}

inline fs::path require_artifact(const PipelineConfig& cfg, const fs::path& rel, std::string_view producer) {
  fs::path p = cfg.out(rel);
  if (!fs::exists(p)) {
    throw Error(ErrorCode::MissingArtifact,
                p.string() + " not found; run the '" + std::string(producer) + "' stage first");
  }
  return p;
}

inline Annotation load_stage_groups(const PipelineConfig& cfg, const Dataset& ds, const fs::path& rel = artifacts::kGroups,
                                    std::string_view producer = "annotate") {
  Annotation ann = load_groups(require_artifact(cfg, rel, producer));
  if (ann.class_names != ds.class_names) {
    throw Error(ErrorCode::SchemaError, "groups file class names do not match the dataset");
  }
  return ann;
}

inline ScoredCandidates load_stage_keywords(const PipelineConfig& cfg) {
  return keywords_from_json(io::read_json(require_artifact(cfg, artifacts::kKeywords, "detect")));
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline std::vector<std::string> class_name_tokens(const Dataset& ds) {
  std::vector<std::string> out;
  for (const auto& n : ds.class_names) {
    for (auto& t : text::tokenize(n)) out.push_back(std::move(t));
  }
  return out;
}

/// Candidate phrases per class from the configured extractor.
inline CandidateLists detect_candidates(const PipelineConfig& cfg, const Dataset& ds, ChatClient* chat = nullptr) {
  const CaptionsByClass captions = captions_by_class(ds);
  if (cfg.detection.extractor == "freq") {
    FreqExtractOptions opts;
    opts.min_count = cfg.detection.min_count;
    opts.max_candidates = cfg.detection.max_candidates;
    if (cfg.detection.exclude_class_names) opts.excluded_tokens = class_name_tokens(ds);
    return extract_keywords_freq(captions, opts);
  }
  LlmExtractOptions opts{cfg.detection.max_candidates, cfg.detection.char_budget, cfg.seed};
  if (chat != nullptr) return extract_keywords_llm(captions, *chat, opts);
  SubprocessChatClient client(*cfg.detection.chat_command);
  return extract_keywords_llm(captions, client, opts);
}

inline ScoredCandidates run_detect(const PipelineConfig& cfg, ChatClient* chat = nullptr) {
  const Dataset ds = load_inputs(cfg);
  const auto provider = make_provider(cfg, ds);
  const CandidateLists candidates = detect_candidates(cfg, ds, chat);
  const ScoredCandidates selected = select_bias_keywords(score_candidates(candidates, ds, *provider), cfg.detection.k);
  for (std::size_t c = 0; c < selected.size(); ++c) {
    if (selected[c].empty()) log::warn("class '", ds.class_names[c], "': no candidate has positive specificity");
    for (const auto& kc : selected[c]) log::info("class '", ds.class_names[c], "': ", kc.text, " ", kc.s_specific);
  }
  const fs::path out = cfg.out(artifacts::kKeywords);
  io::write_json(out, keywords_to_json(selected));
  auto inputs = dataset_inputs(cfg);
  const auto extra = provider_inputs(cfg);
  inputs.insert(inputs.end(), extra.begin(), extra.end());
  record_manifest(cfg, "detect", inputs, {out});
  return selected;
}

inline Annotation run_annotate(const PipelineConfig& cfg) {
  const Dataset ds = load_inputs(cfg);
  const auto provider = make_provider(cfg, ds);
  const ScoredCandidates selected = load_stage_keywords(cfg);
  if (selected.size() != ds.num_classes()) throw Error(ErrorCode::SchemaError, "keywords.json class count differs");
  const auto vocab = build_attribute_vocabulary(selected, cfg.annotation.b_max);
  const auto templates = cfg.annotation.resolved_templates();
  const auto embeddings = compute_group_embeddings(ds.class_names, vocab, templates, *provider);
  Annotation ann = assign_groups(ds, embeddings, vocab);
  const bool truth = std::all_of(ds.samples.begin(), ds.samples.end(), [](const Sample& s) { return s.bias_truth.has_value(); });
  if (truth) log::info("pseudo-annotation accuracy ", annotation_accuracy(ann.assignments, ds));
  const fs::path out = cfg.out(artifacts::kGroups);
  io::write_atomic(out, serialize_groups(ann));
  auto inputs = dataset_inputs(cfg);
  const auto extra = provider_inputs(cfg);
  inputs.insert(inputs.end(), extra.begin(), extra.end());
  inputs.push_back(cfg.out(artifacts::kKeywords));
  record_manifest(cfg, "annotate", inputs, {out});
  return ann;
}

/// Scores <variant>/model.json on the evaluation split of the original
/// dataset and writes <variant>/metrics.json.
inline GroupMetrics run_evaluate(const PipelineConfig& cfg, const std::string& variant) {
  const Dataset ds = load_inputs(cfg);
  const fs::path model_path = require_artifact(cfg, fs::path(variant) / artifacts::kModel, "train-" + variant);
  const LinearModel model = model_from_json(io::read_json(model_path), model_path.string());
  if (model.dim != ds.dim || model.classes != ds.num_classes()) {
    throw Error(ErrorCode::DimensionMismatch, model_path.string() + " does not match the dataset shape");
  }
  const auto rows = ds.indices(cfg.eval_split);
  const bool truth = std::all_of(rows.begin(), rows.end(), [&](std::size_t i) { return ds.samples[i].bias_truth.has_value(); });
  std::optional<Annotation> ann;
  std::vector<fs::path> inputs = dataset_inputs(cfg);
  inputs.push_back(model_path);
  if (!truth) {
    ann = load_stage_groups(cfg, ds);
    inputs.push_back(cfg.out(artifacts::kGroups));
  }
  const GroupMetrics m = evaluate_model(model, ds, cfg.eval_split, ann ? &*ann : nullptr);
  log::info(variant, ": UA ", m.ua, " BC ", m.bc, " overall ", m.overall, " (", to_string(m.source), " groups)");
  const fs::path out = cfg.out(fs::path(variant) / artifacts::kMetrics);
  io::write_json(out, metrics_to_json(m));
  record_manifest(cfg, "evaluate-" + variant, inputs, {out});
  return m;
}

namespace detail {

inline void write_training(const PipelineConfig& cfg, const std::string& variant, const std::string& stage,
                           const TrainResult& r, const std::vector<fs::path>& inputs) {
  const fs::path model = cfg.out(fs::path(variant) / artifacts::kModel);
  const fs::path log_path = cfg.out(fs::path(variant) / artifacts::kTrainingLog);
  io::write_json(model, model_to_json(r));
  io::write_atomic(log_path, serialize_training_log(r.log));
  record_manifest(cfg, stage, inputs, {model, log_path});
}

}  // namespace detail

/// Lg-DRO: pseudo-group DRO training, then evaluation.
inline GroupMetrics run_train_dro(const PipelineConfig& cfg) {
  const Dataset ds = load_inputs(cfg);
  const Annotation ann = load_stage_groups(cfg, ds);
  const TrainResult r = train_group_dro(ds, ann, cfg.dro);
  log::info("lgdro: selected epoch ", r.selected_epoch);
  auto inputs = dataset_inputs(cfg);
  inputs.push_back(cfg.out(artifacts::kGroups));
  detail::write_training(cfg, "lgdro", "train-dro", r, inputs);
  return run_evaluate(cfg, "lgdro");
}

/// ERM on the original data (`erm/`) or on the augmented data (`lgaug/`).
inline GroupMetrics run_train_erm(const PipelineConfig& cfg, bool augmented) {
  const std::string variant = augmented ? "lgaug" : "erm";
  Dataset ds;
  std::vector<fs::path> inputs;
  if (augmented) {
    const fs::path p = require_artifact(cfg, artifacts::kAugmentedEmbeddings, "augment");
    ds = load_dataset(p);
    inputs.push_back(p);
  } else {
    ds = load_inputs(cfg);
    inputs = dataset_inputs(cfg);
  }
  const TrainResult r = train_erm(ds, cfg.erm);
  log::info(variant, ": selected epoch ", r.selected_epoch);
  detail::write_training(cfg, variant, augmented ? "train-erm-augmented" : "train-erm", r, inputs);
  return run_evaluate(cfg, variant);
}

inline BalancePlan plan_for(const PipelineConfig& cfg, const Dataset& ds, const Annotation& ann) {
  return generation_targets(group_table(ann, ds).counts, cfg.augmentation.mode, cfg.augmentation.reference_class);
}

/// Lg-Augmentation: balances the pseudo-group table with generated train
/// images. Writes the report before enforcing the shortfall check.
inline AugmentReport run_augment(const PipelineConfig& cfg, Generator* generator = nullptr) {
  const Dataset ds = load_inputs(cfg);
  const Annotation ann = load_stage_groups(cfg, ds);
  const BalancePlan plan = plan_for(cfg, ds, ann);
  AugmentConfig acfg;
  acfg.max_attempt_factor = cfg.augmentation.max_attempt_factor;
  acfg.prompt_template = PromptTemplate{cfg.augmentation.prompt_template};
  acfg.seed = cfg.seed;

  AugmentResult result;
  std::vector<fs::path> inputs = dataset_inputs(cfg);
  inputs.push_back(cfg.out(artifacts::kGroups));
  if (plan.total() == 0) {
    log::info("group table already balanced; no generator launched");
    result = AugmentResult{ds, ann, {}};
    result.report.mode = plan.mode;
    result.report.reference_class = plan.reference_class;
    result.report.attribute_names = ann.attribute_names;
    result.report.initial_counts = group_table(ann, ds).counts;
    result.report.final_counts = result.report.initial_counts;
    result.report.independence_gap = independence_gap(result.report.final_counts);
  } else {
    const auto provider = make_provider(cfg, ds);
    const auto extra = provider_inputs(cfg);
    inputs.insert(inputs.end(), extra.begin(), extra.end());
    std::unique_ptr<SubprocessGenerator> owned;
    if (generator == nullptr) {
      if (!cfg.augmentation.generator_command) {
        throw Error(ErrorCode::GeneratorError, "augmentation.generator_command is not set");
      }
      owned = std::make_unique<SubprocessGenerator>(*cfg.augmentation.generator_command);
      owned->start();
      generator = owned.get();
    }
    result = augment_minorities(ds, ann, plan, *generator, *provider, acfg);
  }
  const fs::path emb = cfg.out(artifacts::kAugmentedEmbeddings);
  const fs::path groups = cfg.out(artifacts::kAugmentedGroups);
  const fs::path report = cfg.out(artifacts::kAugmentReport);
  io::write_atomic(emb, serialize_embeddings(result.dataset));
  io::write_atomic(groups, serialize_groups(result.annotation));
  io::write_json(report, augment_report_to_json(result.report));
  record_manifest(cfg, "augment", inputs, {emb, groups, report});
  require_balanced(result.report);
  return result.report;
}

struct PipelineSummary {
  ScoredCandidates keywords;
  std::optional<double> annotation_accuracy;
  GroupMetrics erm;
  GroupMetrics lgdro;
  GroupMetrics lgaug;
  AugmentReport augment;
};

inline Json summary_to_json(const PipelineSummary& s) {
  auto brief = [](const GroupMetrics& m) { return Json{{"ua", m.ua}, {"bc", m.bc}, {"overall", m.overall}}; };
  return Json{{"annotation_accuracy", s.annotation_accuracy ? Json(*s.annotation_accuracy) : Json(nullptr)},
              {"erm", brief(s.erm)},
              {"lgdro", brief(s.lgdro)},
              {"lgaug", brief(s.lgaug)},
              {"independence_gap", s.augment.independence_gap}};
}

/// Every stage in order: detect, annotate, ERM baseline, Lg-DRO, then
/// augmentation and ERM on the augmented data.
inline PipelineSummary run_pipeline(const PipelineConfig& cfg, ChatClient* chat = nullptr,
                                    Generator* generator = nullptr) {
  cfg.validate();
  PipelineSummary s;
  s.keywords = run_detect(cfg, chat);
  const Annotation ann = run_annotate(cfg);
  {
    const Dataset ds = load_inputs(cfg);
    if (std::all_of(ds.samples.begin(), ds.samples.end(), [](const Sample& x) { return x.bias_truth.has_value(); })) {
      s.annotation_accuracy = annotation_accuracy(ann.assignments, ds);
    }
  }
  s.erm = run_train_erm(cfg, false);
  s.lgdro = run_train_dro(cfg);
  s.augment = run_augment(cfg, generator);
  s.lgaug = run_train_erm(cfg, true);
  io::write_json(cfg.out("summary.json"), summary_to_json(s));
  return s;
}

// ---------------------------------------------------------------------------
// Prompt manifests
// ---------------------------------------------------------------------------

/// Texts a stage will ask the text encoder for, in request order.
inline std::vector<std::string> prompts_for_stage(const PipelineConfig& cfg, std::string_view stage,
                                                  ChatClient* chat = nullptr) {
  const Dataset ds = load_inputs(cfg);
  std::vector<std::string> out;
  if (stage == "detect") {
    for (const auto& list : detect_candidates(cfg, ds, chat)) out.insert(out.end(), list.begin(), list.end());
  } else if (stage == "annotate") {
    const auto vocab = build_attribute_vocabulary(load_stage_keywords(cfg), cfg.annotation.b_max);
    out = annotation_prompts(ds.class_names, vocab, cfg.annotation.resolved_templates());
  } else if (stage == "augment") {
    const Annotation ann = load_stage_groups(cfg, ds);
    out = augmentation_prompts(ann, plan_for(cfg, ds, ann), PromptTemplate{cfg.augmentation.prompt_template});
  } else {
    throw Error(ErrorCode::ConfigError, "unknown stage '" + std::string(stage) + "' (detect|annotate|augment)");
  }
  std::vector<std::string> unique;
  std::unordered_set<std::string> seen;
  for (auto& t : out) {
    if (seen.insert(t).second) unique.push_back(std::move(t));
  }
  return unique;
}

}  // namespace biascope
