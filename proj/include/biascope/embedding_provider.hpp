#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biascope/error.hpp"
#include "biascope/json_io.hpp"
#include "biascope/vector_ops.hpp"

namespace biascope {

/// Text encoder seam. Implementations must be deterministic per text and
/// return unit vectors of the dataset's dimension.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual bool contains(std::string_view text) const = 0;
  virtual Vector embed(std::string_view text) const = 0;

  std::vector<std::string> missing(const std::vector<std::string>& texts) const {
    std::vector<std::string> out;
    for (const auto& t : texts) {
      if (!contains(t)) out.push_back(t);
    }
    return out;
  }

  // Fails with the full list of misses so an adapter can fill them in one go.
  void require_all(const std::vector<std::string>& texts) const {
    auto miss = missing(texts);
    if (miss.empty()) return;
    std::string msg = std::to_string(miss.size()) + " text(s) have no embedding:";
    for (const auto& t : miss) msg += "\n  " + t;
    throw Error(ErrorCode::MissingTextEmbedding, msg);
  }
};

/// Exact-string lookup over text_embeddings.jsonl. A miss is an error.
class FileEmbeddingProvider final : public EmbeddingProvider {
 public:
  FileEmbeddingProvider(std::size_t dim, std::map<std::string, Vector, std::less<>> table,
                        std::optional<std::string> model = std::nullopt)
      : dim_(dim), table_(std::move(table)), model_(std::move(model)) {}

  static FileEmbeddingProvider load(const std::filesystem::path& path) {
    std::map<std::string, Vector, std::less<>> table;
    std::optional<std::string> model;
    std::size_t dim = 0;
    io::for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
      const std::string at = path.string() + ":" + std::to_string(lineno);
      if (row.contains("kind")) {
        io::require_only(row, {"kind", "dim", "model"}, at);
        if (io::require_string(row, "kind", at) != "header") {
          throw Error(ErrorCode::SchemaError, at + ": unknown kind");
        }
        if (row.contains("model")) model = io::require_string(row, "model", at);
        if (row.contains("dim")) dim = static_cast<std::size_t>(io::require_int(row, "dim", at));
        return;
      }
      io::require_only(row, {"text", "embedding"}, at);
      std::string text = io::require_string(row, "text", at);
      Vector v = io::require_floats(row, "embedding", at);
      if (dim == 0) dim = v.size();
      if (v.size() != dim) {
        throw Error(ErrorCode::DimensionMismatch, at + ": embedding length " + std::to_string(v.size()) +
                                                      " differs from " + std::to_string(dim));
      }
      if (table.count(text)) throw Error(ErrorCode::DuplicateId, at + ": duplicate text '" + text + "'");
      table.emplace(std::move(text), ensure_unit(v));
    });
    return FileEmbeddingProvider(dim, std::move(table), std::move(model));
  }

  std::size_t dim() const override { return dim_; }
  bool contains(std::string_view text) const override { return table_.find(text) != table_.end(); }
  Vector embed(std::string_view text) const override {
    auto it = table_.find(text);
    if (it == table_.end()) {
      throw Error(ErrorCode::MissingTextEmbedding, "no embedding for text '" + std::string(text) + "'");
    }
    return it->second;
  }
  const std::optional<std::string>& model() const { return model_; }
  std::size_t size() const { return table_.size(); }

 private:
  std::size_t dim_;
  std::map<std::string, Vector, std::less<>> table_;
  std::optional<std::string> model_;
};

inline std::string serialize_text_embeddings(const std::vector<std::pair<std::string, Vector>>& rows) {
  std::string out;
  for (const auto& [text, v] : rows) out += Json{{"text", text}, {"embedding", v}}.dump() + "\n";
  return out;
}

}  // namespace biascope
