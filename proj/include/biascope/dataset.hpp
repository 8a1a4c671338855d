#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "biascope/error.hpp"
#include "biascope/json_io.hpp"
#include "biascope/vector_ops.hpp"

namespace biascope {

enum class Split { Train, Val, Test };

inline std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

inline std::optional<Split> parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  return std::nullopt;
}

/// One image record. `bias_truth` is for evaluation and diagnostics only;
/// detection, annotation and training never read it.
struct Sample {
  std::string id;
  Split split = Split::Train;
  int label = 0;
  Vector embedding;
  std::optional<std::string> caption;
  std::optional<int> bias_truth;
  bool generated = false;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::size_t dim = 0;
  std::vector<Sample> samples;
  // Encoder identifier from the file header, when the producer recorded one.
  std::optional<std::string> model;

  std::size_t num_classes() const { return class_names.size(); }

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].split == split) out.push_back(i);
    }
    return out;
  }

  bool operator==(const Dataset&) const = default;
};

constexpr double kUnitNormTolerance = 1e-6;

/// Checks the structural invariants: C >= 2, labels in range, consistent
/// dimension, unit norm, unique ids, every class present in train.
inline void validate_dataset(const Dataset& ds) {
  if (ds.class_names.size() < 2) {
    throw Error(ErrorCode::SchemaError, "dataset needs at least 2 classes");
  }
  std::unordered_set<std::string> ids;
  std::vector<std::size_t> train_per_class(ds.num_classes(), 0);
  for (const Sample& s : ds.samples) {
    if (!ids.insert(s.id).second) throw Error(ErrorCode::DuplicateId, "duplicate sample id '" + s.id + "'");
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= ds.num_classes()) {
      throw Error(ErrorCode::SchemaError, "sample '" + s.id + "' has label out of range");
    }
    if (s.embedding.size() != ds.dim) {
      throw Error(ErrorCode::DimensionMismatch,
                  "sample '" + s.id + "' has dimension " + std::to_string(s.embedding.size()) +
                      ", dataset dim is " + std::to_string(ds.dim));
    }
    if (std::abs(l2_norm(s.embedding) - 1.0) > kUnitNormTolerance) {
      throw Error(ErrorCode::SchemaError, "sample '" + s.id + "' is not unit norm");
    }
    if (s.split == Split::Train) ++train_per_class[static_cast<std::size_t>(s.label)];
  }
  for (std::size_t c = 0; c < train_per_class.size(); ++c) {
    if (train_per_class[c] == 0) {
      throw Error(ErrorCode::SchemaError, "class '" + ds.class_names[c] + "' has no training samples");
    }
  }
}

namespace detail {

inline Dataset parse_embeddings(std::istream& in, const std::string& where) {
  Dataset ds;
  bool have_header = false;
  std::unordered_set<std::string> ids;
  io::for_each_jsonl(in, where, [&](const Json& row, std::size_t lineno) {
    const std::string at = where + ":" + std::to_string(lineno);
    if (!have_header) {
      io::require_only(row, {"kind", "class_names", "dim", "model"}, at);
      if (io::require_string(row, "kind", at) != "header") {
        throw Error(ErrorCode::SchemaError, at + ": first line must be the header");
      }
      const Json& names = io::require(row, "class_names", at);
      if (!names.is_array()) throw Error(ErrorCode::SchemaError, at + ": class_names must be an array");
      for (const Json& n : names) {
        if (!n.is_string()) throw Error(ErrorCode::SchemaError, at + ": class_names must be strings");
        ds.class_names.push_back(n.get<std::string>());
      }
      const long long dim = io::require_int(row, "dim", at);
      if (dim <= 0) throw Error(ErrorCode::SchemaError, at + ": dim must be positive");
      ds.dim = static_cast<std::size_t>(dim);
      if (row.contains("model")) ds.model = io::require_string(row, "model", at);
      have_header = true;
      return;
    }
    io::require_only(row, {"id", "split", "label", "embedding", "bias_truth", "provenance"}, at);
    Sample s;
    s.id = io::require_string(row, "id", at);
    if (!ids.insert(s.id).second) throw Error(ErrorCode::DuplicateId, at + ": duplicate id '" + s.id + "'");
    auto split = parse_split(io::require_string(row, "split", at));
    if (!split) throw Error(ErrorCode::SchemaError, at + ": split must be train|val|test");
    s.split = *split;
    const long long label = io::require_int(row, "label", at);
    if (label < 0 || static_cast<std::size_t>(label) >= ds.class_names.size()) {
      throw Error(ErrorCode::SchemaError, at + ": label out of range");
    }
    s.label = static_cast<int>(label);
    Vector raw = io::require_floats(row, "embedding", at);
    if (raw.size() != ds.dim) {
      throw Error(ErrorCode::DimensionMismatch, at + ": embedding has length " + std::to_string(raw.size()) +
                                                    ", header dim is " + std::to_string(ds.dim));
    }
    s.embedding = ensure_unit(raw);
    const Json& truth = io::require(row, "bias_truth", at);
    if (truth.is_number_integer()) {
      s.bias_truth = truth.get<int>();
    } else if (!truth.is_null()) {
      throw Error(ErrorCode::SchemaError, at + ": bias_truth must be an integer or null");
    }
    if (row.contains("provenance")) {
      const std::string prov = io::require_string(row, "provenance", at);
      if (prov != "generated" && prov != "original") {
        throw Error(ErrorCode::SchemaError, at + ": provenance must be 'generated' or 'original'");
      }
      s.generated = prov == "generated";
    }
    ds.samples.push_back(std::move(s));
  });
  if (!have_header) throw Error(ErrorCode::SchemaError, where + ": missing header line");
  return ds;
}

inline void join_captions(Dataset& ds, std::istream& in, const std::string& where) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) by_id.emplace(ds.samples[i].id, i);
  io::for_each_jsonl(in, where, [&](const Json& row, std::size_t lineno) {
    const std::string at = where + ":" + std::to_string(lineno);
    io::require_only(row, {"id", "caption"}, at);
    const std::string id = io::require_string(row, "id", at);
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::UnknownCaptionId, at + ": no sample with id '" + id + "'");
    Sample& s = ds.samples[it->second];
    if (s.caption) throw Error(ErrorCode::DuplicateId, at + ": second caption for id '" + id + "'");
    s.caption = io::require_string(row, "caption", at);
  });
}

}  // namespace detail

inline Dataset parse_dataset(std::istream& embeddings, std::istream* captions = nullptr,
                             const std::string& where = "<stream>") {
  Dataset ds = detail::parse_embeddings(embeddings, where);
  if (captions != nullptr) detail::join_captions(ds, *captions, where + " captions");
  validate_dataset(ds);
  return ds;
}

/// Reads embeddings.jsonl (and optionally captions.jsonl), normalizing every
/// embedding on the way in.
inline Dataset load_dataset(const std::filesystem::path& embeddings_path,
                            const std::optional<std::filesystem::path>& captions_path = std::nullopt) {
  std::ifstream emb(embeddings_path, std::ios::binary);
  if (!emb) throw Error(ErrorCode::IoError, "cannot open " + embeddings_path.string());
  Dataset ds = detail::parse_embeddings(emb, embeddings_path.string());
  if (captions_path) {
    std::ifstream cap(*captions_path, std::ios::binary);
    if (!cap) throw Error(ErrorCode::IoError, "cannot open " + captions_path->string());
    detail::join_captions(ds, cap, captions_path->string());
  }
  validate_dataset(ds);
  return ds;
}

inline std::string serialize_embeddings(const Dataset& ds) {
  std::ostringstream out;
  Json header = {{"kind", "header"}, {"class_names", ds.class_names}, {"dim", ds.dim}};
  if (ds.model) header["model"] = *ds.model;
  out << header.dump() << '\n';
  for (const Sample& s : ds.samples) {
    Json row = {{"id", s.id},
                {"split", std::string(to_string(s.split))},
                {"label", s.label},
                {"embedding", s.embedding},
                {"bias_truth", s.bias_truth ? Json(*s.bias_truth) : Json(nullptr)}};
    if (s.generated) row["provenance"] = "generated";
    out << row.dump() << '\n';
  }
  return out.str();
}

inline std::string serialize_captions(const Dataset& ds) {
  std::ostringstream out;
  for (const Sample& s : ds.samples) {
    if (s.caption) out << Json{{"id", s.id}, {"caption", *s.caption}}.dump() << '\n';
  }
  return out.str();
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& embeddings_path,
                         const std::optional<std::filesystem::path>& captions_path = std::nullopt) {
  io::write_atomic(embeddings_path, serialize_embeddings(ds));
  if (captions_path) io::write_atomic(*captions_path, serialize_captions(ds));
}

}  // namespace biascope
