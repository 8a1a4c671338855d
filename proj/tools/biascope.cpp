// biascope command-line front end.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "biascope/biascope.hpp"

namespace fs = std::filesystem;
using namespace biascope;

namespace {

struct ConfigArgs {
  std::string config;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  bool print_config = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config, "pipeline config JSON")->required();
  cmd->add_option("-o,--output-dir", args.output_dir, "override paths.output_dir");
  cmd->add_option("--seed", args.seed, "override the top-level seed");
  cmd->add_option("--set", args.sets, "override a config field, e.g. detection.k=3 (repeatable)");
  cmd->add_flag("--print-config", args.print_config, "print the resolved config and exit");
}

Json parse_override_value(const std::string& raw) {
  Json v = Json::parse(raw, nullptr, false);
  if (v.is_discarded()) return Json(raw);
  return v;
}

PipelineConfig resolve_config(const ConfigArgs& args) {
  Json patch = Json::object();
  for (const auto& s : args.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::ConfigError, "--set expects key.path=value, got '" + s + "'");
    Json* node = &patch;
    std::string key = s.substr(0, eq);
    std::size_t start = 0;
    for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
      node = &(*node)[key.substr(start, dot - start)];
    }
    (*node)[key.substr(start)] = parse_override_value(s.substr(eq + 1));
  }
  if (args.seed) patch["seed"] = *args.seed;
  if (args.output_dir) patch["paths"]["output_dir"] = fs::absolute(*args.output_dir).string();
  return PipelineConfig::load(args.config, patch);
}

// Returns nullopt when the run should continue.
std::optional<PipelineConfig> prepare(const ConfigArgs& args, bool& printed) {
  PipelineConfig cfg = resolve_config(args);
  if (args.print_config) {
    std::cout << cfg.to_json().dump(2) << '\n';
    printed = true;
    return std::nullopt;
  }
  cfg.validate();
  return cfg;
}

fs::path self_executable(const char* argv0) {
  std::error_code ec;
  fs::path p = fs::read_symlink("/proc/self/exe", ec);
  if (!ec) return p;
  return fs::absolute(argv0);
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char ch : s) {
    if (ch == '\'') {
      out += "'\\''";
    } else {
      out += ch;
    }
  }
  return out + "'";
}

Json synth_pipeline_config(const SynthSpec& spec, const fs::path& exe, const fs::path& world) {
  return Json{
      {"paths",
       {{"embeddings", "embeddings.jsonl"},
        {"captions", "captions.jsonl"},
        {"world", "world.json"},
        {"output_dir", "out"}}},
      {"detection", {{"extractor", "freq"}, {"k", 1}, {"max_candidates", 10}, {"min_count", 5}}},
      {"annotation", {{"preset", "waterbirds"}, {"b_max", spec.num_attributes}}},
      {"training", {{"dro", Json::object()}, {"erm", Json::object()}}},
      {"augmentation",
       {{"mode", "uniform-within-class"},
        {"template", std::string(kDefaultGenerationTemplate)},
        {"max_attempt_factor", 20},
        {"generator_command",
         shell_quote(exe.string()) + " mock-generator --world " + shell_quote(fs::absolute(world).string())}}},
      {"seed", spec.seed}};
}

void write_text_list(const std::vector<std::string>& texts, const std::optional<std::string>& out) {
  std::string body;
  for (const auto& t : texts) body += Json{{"text", t}}.dump() + "\n";
  if (out) {
    io::write_atomic(*out, body);
  } else {
    std::cout << body;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"biascope: language-guided bias detection and mitigation"};
  app.require_subcommand(1);
  int status = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "write a planted-bias synthetic dataset and a matching config");
  std::string synth_out;
  std::optional<std::string> synth_spec_path;
  std::optional<std::uint64_t> synth_seed;
  std::optional<double> synth_rho;
  std::optional<int> synth_n;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--spec", synth_spec_path, "SynthSpec JSON (fields override the defaults)");
  synth->add_option("--seed", synth_seed, "world seed");
  synth->add_option("--correlation", synth_rho, "probability of the class-aligned attribute");
  synth->add_option("--n", synth_n, "training samples per class");

  // pipeline stages
  ConfigArgs detect_args, annotate_args, dro_args, augment_args, erm_args, eval_args, pipe_args, manifest_args;
  auto* detect = app.add_subcommand("detect", "extract and score bias keywords (keywords.json)");
  add_config_options(detect, detect_args);
  auto* annotate = app.add_subcommand("annotate", "assign pseudo bias groups (groups.jsonl)");
  add_config_options(annotate, annotate_args);
  auto* train_dro = app.add_subcommand("train-dro", "Lg-DRO training and evaluation (lgdro/)");
  add_config_options(train_dro, dro_args);
  auto* augment = app.add_subcommand("augment", "generate minority-group images (lgaug/)");
  add_config_options(augment, augment_args);
  auto* train_erm = app.add_subcommand("train-erm", "ERM training and evaluation (erm/, or lgaug/ with --augmented)");
  add_config_options(train_erm, erm_args);
  bool erm_augmented = false;
  train_erm->add_flag("--augmented", erm_augmented, "train on the augmented dataset");
  auto* evaluate = app.add_subcommand("evaluate", "rewrite <variant>/metrics.json from <variant>/model.json");
  add_config_options(evaluate, eval_args);
  std::vector<std::string> eval_variants;
  evaluate->add_option("--variant", eval_variants, "erm, lgdro or lgaug (repeatable; default: every trained one)")
      ->check(CLI::IsMember({"erm", "lgdro", "lgaug"}));
  auto* pipeline = app.add_subcommand("pipeline", "run every stage");
  add_config_options(pipeline, pipe_args);

  auto* prompts = app.add_subcommand("prompts", "prompt utilities");
  prompts->require_subcommand(1);
  auto* manifest = prompts->add_subcommand("manifest", "list the texts a stage will embed, one {\"text\"} per line");
  add_config_options(manifest, manifest_args);
  std::string manifest_stage;
  std::optional<std::string> manifest_out;
  manifest->add_option("--stage", manifest_stage, "detect, annotate or augment")
      ->required()
      ->check(CLI::IsMember({"detect", "annotate", "augment"}));
  manifest->add_option("--out", manifest_out, "write to a file instead of stdout");

  // validate
  auto* validate = app.add_subcommand("validate", "check a file against its schema");
  std::string validate_path;
  std::optional<std::string> validate_kind;
  validate->add_option("file", validate_path, "file to check")->required();
  validate->add_option("--kind", validate_kind,
                       "embeddings|captions|text_embeddings|groups|keywords|model|metrics|prompts");

  // synthetic oracles
  auto* embed_texts = app.add_subcommand("embed-texts", "fill text_embeddings.jsonl from a world's text encoder");
  std::string et_world, et_manifest, et_out;
  embed_texts->add_option("--world", et_world, "world.json")->required();
  embed_texts->add_option("--manifest", et_manifest, "prompt list from `prompts manifest`")->required();
  embed_texts->add_option("--out", et_out, "output text_embeddings.jsonl")->required();

  auto* mock_gen = app.add_subcommand("mock-generator", "serve the generator protocol on stdio from a world");
  std::string mg_world;
  std::optional<double> mg_sigma;
  mock_gen->add_option("--world", mg_world, "world.json")->required();
  mock_gen->add_option("--sigma", mg_sigma, "noise level (default: the world's)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    bool printed = false;
    if (synth->parsed()) {
      SynthSpec spec = synth_spec_path ? SynthSpec::from_json(io::read_json(*synth_spec_path)) : SynthSpec{};
      if (synth_seed) spec.seed = *synth_seed;
      if (synth_rho) spec.correlation = *synth_rho;
      if (synth_n) spec.samples_per_class = *synth_n;
      spec.validate();
      const fs::path dir = synth_out;
      const Dataset ds = synth_dataset(spec);
      save_dataset(ds, dir / "embeddings.jsonl", dir / "captions.jsonl");
      io::write_json(dir / "world.json", spec.to_json());
      io::write_json(dir / "config.json", synth_pipeline_config(spec, self_executable(argv[0]), dir / "world.json"));
      log::info("wrote ", ds.samples.size(), " samples to ", dir.string());
    } else if (detect->parsed()) {
      if (auto cfg = prepare(detect_args, printed)) run_detect(*cfg);
    } else if (annotate->parsed()) {
      if (auto cfg = prepare(annotate_args, printed)) run_annotate(*cfg);
    } else if (train_dro->parsed()) {
      if (auto cfg = prepare(dro_args, printed)) run_train_dro(*cfg);
    } else if (augment->parsed()) {
      if (auto cfg = prepare(augment_args, printed)) run_augment(*cfg);
    } else if (train_erm->parsed()) {
      if (auto cfg = prepare(erm_args, printed)) run_train_erm(*cfg, erm_augmented);
    } else if (evaluate->parsed()) {
      if (auto cfg = prepare(eval_args, printed)) {
        std::vector<std::string> variants = eval_variants;
        if (variants.empty()) {
          for (const char* v : {"erm", "lgdro", "lgaug"}) {
            if (fs::exists(cfg->out(fs::path(v) / artifacts::kModel))) variants.emplace_back(v);
          }
          if (variants.empty()) throw Error(ErrorCode::MissingArtifact, "no trained model under " + cfg->paths.output_dir.string());
        }
        for (const auto& v : variants) run_evaluate(*cfg, v);
      }
    } else if (pipeline->parsed()) {
      if (auto cfg = prepare(pipe_args, printed)) {
        const PipelineSummary s = run_pipeline(*cfg);
        std::cout << summary_to_json(s).dump(2) << '\n';
      }
    } else if (manifest->parsed()) {
      if (auto cfg = prepare(manifest_args, printed)) write_text_list(prompts_for_stage(*cfg, manifest_stage), manifest_out);
    } else if (validate->parsed()) {
      std::optional<FileKind> kind;
      if (validate_kind) {
        kind = parse_file_kind(*validate_kind);
        if (!kind) throw Error(ErrorCode::ConfigError, "unknown --kind '" + *validate_kind + "'");
      }
      std::cout << validate_file(validate_path, kind) << '\n';
    } else if (embed_texts->parsed()) {
      const SyntheticWorld world(SynthSpec::from_json(io::read_json(et_world)));
      std::vector<std::pair<std::string, Vector>> rows;
      io::for_each_jsonl(fs::path(et_manifest), [&](const Json& row, std::size_t lineno) {
        const std::string text = io::require_string(row, "text", et_manifest + ":" + std::to_string(lineno));
        rows.emplace_back(text, world.embed_text(text));
      });
      const Json header = {{"kind", "header"}, {"dim", world.spec().dim}, {"model", "synthetic-oracle"}};
      io::write_atomic(et_out, header.dump() + "\n" + serialize_text_embeddings(rows));
    } else if (mock_gen->parsed()) {
      const MockCentroidGenerator gen(SyntheticWorld(SynthSpec::from_json(io::read_json(mg_world))), mg_sigma);
      serve_generator(gen, std::cin, std::cout);
    }
  } catch (const Error& e) {
    log::error(e.what());
    status = exit_code_for(e.code());
  } catch (const std::exception& e) {
    log::error(e.what());
    status = 2;
  }
  return status;
}
