#pragma once

// Shared helpers for the versioned JSON artifact files.

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "qolab/catalog.hpp"
#include "qolab/errors.hpp"

namespace qolab::detail {

using nlohmann::json;

inline json read_versioned_json(const std::string& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::MissingFile, kind + " file not found: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buffer.str());
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::Malformed, kind + " file is malformed: " + path + " (" + e.what() + ")");
  }
  if (!doc.is_object() || !doc.contains("format_version") || !doc["format_version"].is_number_integer())
    throw IoError(IoErrorKind::Malformed, kind + " file lacks an integer format_version: " + path);
  const int version = doc["format_version"].get<int>();
  if (version != kFormatVersion)
    throw IoError(IoErrorKind::VersionMismatch,
                  kind + " file has format_version " + std::to_string(version) + ", expected " +
                      std::to_string(kFormatVersion));
  return doc;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorKind::MissingFile, "cannot open for writing: " + path);
  out << text;
}

// Field access that turns nlohmann type errors into Malformed IoErrors.
template <typename Fn>
auto guarded_parse(const std::string& kind, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::Malformed, kind + " content is malformed: " + e.what());
  }
}

}  // namespace qolab::detail
