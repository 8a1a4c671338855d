#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "biascope/error.hpp"

namespace biascope {

using Json = nlohmann::json;

namespace io {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream oss;
  oss << in.rdbuf();
  return oss.str();
}

inline Json parse_json(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, where + ": invalid JSON (" + e.what() + ")");
  }
}

inline Json read_json(const std::filesystem::path& path) {
  return parse_json(read_file(path), path.string());
}

/// Calls `fn(json, line_number)` for every non-blank line.
inline void for_each_jsonl(std::istream& in, const std::string& where,
                           const std::function<void(const Json&, std::size_t)>& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    fn(parse_json(line, where + ":" + std::to_string(lineno)), lineno);
  }
}

inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  for_each_jsonl(in, path.string(), fn);
}

// Writes to a sibling temp file and renames it over the target, so readers
// never observe a half-written artifact.
inline void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out << contents;
    if (!out.flush()) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json(const std::filesystem::path& path, const Json& value) {
  write_atomic(path, value.dump(2) + "\n");
}

// Schema helpers.

inline const Json& require(const Json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorCode::SchemaError, where + ": missing field '" + key + "'");
  return *it;
}

inline void require_only(const Json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::SchemaError, where + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* key : allowed) ok = ok || it.key() == key;
    if (!ok) throw Error(ErrorCode::SchemaError, where + ": unexpected field '" + it.key() + "'");
  }
}

inline std::string require_string(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_string()) throw Error(ErrorCode::SchemaError, where + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

inline long long require_int(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_number_integer()) {
    throw Error(ErrorCode::SchemaError, where + ": '" + key + "' must be an integer");
  }
  return v.get<long long>();
}

inline std::vector<double> require_floats(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_array()) throw Error(ErrorCode::SchemaError, where + ": '" + key + "' must be an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const Json& x : v) {
    if (!x.is_number()) {
      throw Error(ErrorCode::SchemaError, where + ": '" + key + "' must contain numbers");
    }
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace io
}  // namespace biascope
