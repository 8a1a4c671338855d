#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>

#include "biascope/annotation.hpp"
#include "biascope/dataset.hpp"
#include "biascope/detection.hpp"
#include "biascope/embedding_provider.hpp"
#include "biascope/error.hpp"
#include "biascope/json_io.hpp"
#include "biascope/training.hpp"

namespace biascope {

enum class FileKind { Embeddings, Captions, TextEmbeddings, Groups, Keywords, Model, Metrics, PromptList };

inline constexpr double kAdapterNormTolerance = 1e-4;

inline std::string_view to_string(FileKind k) {
  switch (k) {
    case FileKind::Embeddings: return "embeddings";
    case FileKind::Captions: return "captions";
    case FileKind::TextEmbeddings: return "text_embeddings";
    case FileKind::Groups: return "groups";
    case FileKind::Keywords: return "keywords";
    case FileKind::Model: return "model";
    case FileKind::Metrics: return "metrics";
    case FileKind::PromptList: return "prompts";
  }
  return "embeddings";
}

inline std::optional<FileKind> parse_file_kind(std::string_view s) {
  for (auto k : {FileKind::Embeddings, FileKind::Captions, FileKind::TextEmbeddings, FileKind::Groups,
                 FileKind::Keywords, FileKind::Model, FileKind::Metrics, FileKind::PromptList}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

/// Guesses the schema from the first record.
inline FileKind detect_file_kind(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  const Json whole = Json::parse(text, nullptr, false);
  if (!whole.is_discarded() && whole.is_object()) {
    if (whole.contains("weights")) return FileKind::Model;
    if (whole.contains("ua")) return FileKind::Metrics;
    if (whole.contains("classes")) return FileKind::Keywords;
  }
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const Json row = io::parse_json(line, path.string() + ":1");
    if (!row.is_object()) break;
    if (row.value("kind", "") == "header") {
      if (row.contains("attribute_names")) return FileKind::Groups;
      if (row.contains("class_names")) return FileKind::Embeddings;
      return FileKind::TextEmbeddings;
    }
    if (row.contains("caption")) return FileKind::Captions;
    if (row.contains("text")) return row.contains("embedding") ? FileKind::TextEmbeddings : FileKind::PromptList;
    if (row.contains("group")) return FileKind::Groups;
    break;
  }
  throw Error(ErrorCode::SchemaError, path.string() + ": cannot tell which schema this file follows");
}

namespace detail {

inline void check_raw_norms(const std::filesystem::path& path) {
  io::for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
    if (!row.is_object() || !row.contains("embedding")) return;
    const Vector v = io::require_floats(row, "embedding", path.string() + ":" + std::to_string(lineno));
    const double n = l2_norm(v);
    if (std::abs(n - 1.0) > kAdapterNormTolerance) {
      throw Error(ErrorCode::SchemaError, path.string() + ":" + std::to_string(lineno) + ": embedding norm " +
                                              std::to_string(n) + " is not 1");
    }
  });
}

}  // namespace detail

/// Validates one file against its schema; returns a one-line summary.
inline std::string validate_file(const std::filesystem::path& path, std::optional<FileKind> kind = std::nullopt) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, path.string() + " does not exist");
  const FileKind k = kind ? *kind : detect_file_kind(path);
  const std::string where = path.string();
  std::string summary;
  switch (k) {
    case FileKind::Embeddings: {
      detail::check_raw_norms(path);
      const Dataset ds = load_dataset(path);
      summary = std::to_string(ds.samples.size()) + " samples, " + std::to_string(ds.num_classes()) + " classes, dim " +
               std::to_string(ds.dim);
      break;
    }
    case FileKind::Captions: {
      std::unordered_set<std::string> ids;
      std::size_t n = 0;
      io::for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
        const std::string at = where + ":" + std::to_string(lineno);
        io::require_only(row, {"id", "caption"}, at);
        io::require_string(row, "caption", at);
        if (!ids.insert(io::require_string(row, "id", at)).second) {
          throw Error(ErrorCode::DuplicateId, at + ": duplicate caption id");
        }
        ++n;
      });
      summary = std::to_string(n) + " captions";
      break;
    }
    case FileKind::TextEmbeddings: {
      detail::check_raw_norms(path);
      const auto p = FileEmbeddingProvider::load(path);
      summary = std::to_string(p.size()) + " texts, dim " + std::to_string(p.dim());
      break;
    }
    case FileKind::Groups: {
      const Annotation ann = load_groups(path);
      summary = std::to_string(ann.assignments.size()) + " assignments, " + std::to_string(ann.num_groups()) + " groups";
      break;
    }
    case FileKind::Keywords: {
      const auto kw = keywords_from_json(io::read_json(path), where);
      std::size_t n = 0;
      for (const auto& l : kw) n += l.size();
      summary = std::to_string(n) + " keywords over " + std::to_string(kw.size()) + " classes";
      break;
    }
    case FileKind::Model: {
      const LinearModel m = model_from_json(io::read_json(path), where);
      summary = std::to_string(m.classes) + " classes, dim " + std::to_string(m.dim);
      break;
    }
    case FileKind::Metrics: {
      const Json j = io::read_json(path);
      io::require_only(j, {"ua", "bc", "overall", "groups", "group_source"}, where);
      for (const char* key : {"ua", "bc", "overall"}) {
        if (!io::require(j, key, where).is_number()) throw Error(ErrorCode::SchemaError, where + ": " + key + " must be a number");
      }
      const std::string src = io::require_string(j, "group_source", where);
      if (src != "truth" && src != "pseudo") throw Error(ErrorCode::SchemaError, where + ": bad group_source");
      const Json& groups = io::require(j, "groups", where);
      if (!groups.is_array()) throw Error(ErrorCode::SchemaError, where + ": groups must be an array");
      for (const Json& g : groups) {
        io::require_only(g, {"class", "attribute", "n", "acc"}, where);
        io::require_int(g, "class", where);
        io::require_int(g, "attribute", where);
        io::require_int(g, "n", where);
        if (!io::require(g, "acc", where).is_number()) throw Error(ErrorCode::SchemaError, where + ": acc must be a number");
      }
      summary = std::to_string(groups.size()) + " groups";
      break;
    }
    case FileKind::PromptList: {
      std::size_t n = 0;
      io::for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
        const std::string at = where + ":" + std::to_string(lineno);
        io::require_only(row, {"text"}, at);
        io::require_string(row, "text", at);
        ++n;
      });
      summary = std::to_string(n) + " texts";
      break;
    }
  }
  return where + ": valid " + std::string(to_string(k)) + " (" + summary + ")";
}

}  // namespace biascope
