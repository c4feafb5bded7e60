#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "citegraph/error.hpp"

namespace citegraph {

struct Paper {
  std::string id;
  std::string title;
  std::string abstract;
  std::optional<std::string> related_work;
  std::optional<std::string> category;

  bool operator==(const Paper&) const = default;
};

/// A directed citation: `source` cites `target` in `sentence`.
struct CitationEdge {
  std::string source;
  std::string target;
  std::string sentence;
  std::optional<std::string> preceding;
  std::optional<std::string> following;
  bool in_related_work = false;

  bool operator==(const CitationEdge&) const = default;
};

namespace detail {

inline nlohmann::json optional_to_json(const std::optional<std::string>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<std::string> optional_from_json(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace detail

inline nlohmann::json to_json(const Paper& p) {
  return {{"id", p.id},
          {"title", p.title},
          {"abstract", p.abstract},
          {"related_work", detail::optional_to_json(p.related_work)},
          {"category", detail::optional_to_json(p.category)}};
}

inline nlohmann::json to_json(const CitationEdge& e) {
  return {{"source", e.source},
          {"target", e.target},
          {"sentence", e.sentence},
          {"preceding", detail::optional_to_json(e.preceding)},
          {"following", detail::optional_to_json(e.following)},
          {"in_related_work", e.in_related_work}};
}

inline Paper paper_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("node record is not a JSON object");
  if (!j.contains("id") || !j.contains("title")) throw FormatError("node record needs \"id\" and \"title\"");
  Paper p;
  p.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  p.title = j.at("title").get<std::string>();
  p.abstract = j.value("abstract", std::string{});
  p.related_work = detail::optional_from_json(j, "related_work");
  p.category = detail::optional_from_json(j, "category");
  return p;
}

inline CitationEdge edge_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("edge record is not a JSON object");
  if (!j.contains("source") || !j.contains("target")) {
    throw FormatError("edge record needs \"source\" and \"target\"");
  }
  CitationEdge e;
  e.source = j.at("source").get<std::string>();
  e.target = j.at("target").get<std::string>();
  e.sentence = j.value("sentence", std::string{});
  e.preceding = detail::optional_from_json(j, "preceding");
  e.following = detail::optional_from_json(j, "following");
  e.in_related_work = j.value("in_related_work", false);
  return e;
}

/// Reads one JSON object per non-blank line; errors carry the line number.
template <class Parse>
auto read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open " + path.string());
  std::vector<decltype(parse(nlohmann::json{}))> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <class T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& item : items) out << to_json(item).dump() << '\n';
}

inline std::vector<Paper> load_nodes(const std::filesystem::path& path) {
  return read_jsonl(path, paper_from_json);
}

inline std::vector<CitationEdge> load_edges(const std::filesystem::path& path) {
  return read_jsonl(path, edge_from_json);
}

}  // namespace citegraph
