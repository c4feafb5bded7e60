#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "citegraph/error.hpp"
#include "citegraph/latex.hpp"
#include "citegraph/paper.hpp"

namespace citegraph {

/// One input document. For `interchange` documents `source_text` holds the
/// node record as a JSON object and is passed through unchanged.
struct RawDocument {
  enum class Kind { latex, interchange };

  std::string doc_id;
  std::string source_text;
  std::optional<std::string> bib_text;
  latex::BibFormat bib_kind = latex::BibFormat::bib;
  Kind kind = Kind::latex;
  std::map<std::string, std::string> includes;  // \input targets, keyed by path
  std::optional<std::string> category;
};

struct CorpusStats {
  std::size_t documents = 0;
  std::size_t mentions = 0;
  std::size_t resolved_mentions = 0;    // bibliography gave an external id
  std::size_t unresolved_mentions = 0;  // key missing or no id in the entry
  std::size_t dropped_mentions = 0;     // resolved, but the target is not in the batch
  std::size_t edges = 0;
  std::vector<std::string> warnings;
};

struct Corpus {
  std::vector<Paper> papers;
  std::vector<CitationEdge> edges;
  CorpusStats stats;
};

inline nlohmann::json to_json(const CorpusStats& s) {
  return {{"documents", s.documents},
          {"mentions", s.mentions},
          {"resolved_mentions", s.resolved_mentions},
          {"unresolved_mentions", s.unresolved_mentions},
          {"dropped_mentions", s.dropped_mentions},
          {"edges", s.edges},
          {"warnings", s.warnings}};
}

/// Result of extracting one LaTeX document on its own.
struct ExtractedDocument {
  Paper paper;
  std::vector<latex::CitationMention> mentions;
  std::vector<std::string> warnings;
};

inline ExtractedDocument extract_document(const RawDocument& raw) {
  if (raw.kind != RawDocument::Kind::latex) throw InvalidArgument("extract_document expects a LaTeX document");
  ExtractedDocument out;
  Diagnostics diag;
  std::string cleaned = latex::clean_latex(raw.source_text, raw.includes, &diag);

  latex::BibliographyMap bib;
  try {
    if (raw.bib_text) {
      bib = latex::parse_bibliography(*raw.bib_text, raw.bib_kind);
    } else if (raw.source_text.find("\\begin{thebibliography}") != std::string::npos) {
      bib = latex::parse_bibliography(raw.source_text, latex::BibFormat::inline_env);
    } else {
      diag.warn("no bibliography found");
    }
  } catch (const FormatError& e) {
    diag.warn(e.what());
  }

  latex::DocumentStructure doc = latex::parse_structure(cleaned);
  out.paper.id = raw.doc_id;
  out.paper.title = doc.title().value_or("");
  if (out.paper.title.empty()) {
    diag.warn("no \\title found, using the document id");
    out.paper.title = raw.doc_id;
  }
  out.paper.abstract = doc.abstract_text().value_or("");
  if (auto rw = latex::extract_related_work(cleaned)) out.paper.related_work = rw->text;
  out.paper.category = raw.category;
  out.mentions = latex::extract_citations(cleaned, bib);
  for (auto& w : diag.warnings) out.warnings.push_back(raw.doc_id + ": " + w);
  return out;
}

inline Corpus build_corpus(const std::vector<RawDocument>& raws) {
  Corpus corpus;
  std::set<std::string> ids;
  for (const auto& raw : raws) {
    if (raw.doc_id.empty()) throw InvalidArgument("document with empty id");
    if (!ids.insert(raw.doc_id).second) throw InvalidArgument("duplicate document id: " + raw.doc_id);
  }
  corpus.stats.documents = raws.size();

  std::vector<ExtractedDocument> extracted;
  for (const auto& raw : raws) {
    if (raw.kind == RawDocument::Kind::interchange) {
      Paper p = paper_from_json(nlohmann::json::parse(raw.source_text));
      if (p.id != raw.doc_id) throw FormatError("interchange record id " + p.id + " does not match " + raw.doc_id);
      corpus.papers.push_back(std::move(p));
      continue;
    }
    ExtractedDocument doc = extract_document(raw);
    corpus.papers.push_back(doc.paper);
    for (auto& w : doc.warnings) corpus.stats.warnings.push_back(w);
    extracted.push_back(std::move(doc));
  }

  for (const auto& doc : extracted) {
    for (const auto& m : doc.mentions) {
      ++corpus.stats.mentions;
      if (!m.resolved_target) {
        ++corpus.stats.unresolved_mentions;
        continue;
      }
      ++corpus.stats.resolved_mentions;
      if (!ids.contains(*m.resolved_target) || *m.resolved_target == doc.paper.id) {
        ++corpus.stats.dropped_mentions;
        continue;
      }
      corpus.edges.push_back(
          {doc.paper.id, *m.resolved_target, m.sentence, m.preceding, m.following, m.in_related_work});
    }
  }
  corpus.stats.edges = corpus.edges.size();
  return corpus;
}

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Reads DIR/<doc_id>/ trees. The main file is the .tex containing
/// \begin{document}; an optional meta.json may set "id" and "category".
/// Bibliographies are taken from .bib files, else .bbl, else inline.
inline std::vector<RawDocument> load_latex_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw NotFound("not a directory: " + dir.string());
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) subdirs.push_back(entry.path());
  }
  std::sort(subdirs.begin(), subdirs.end());

  std::vector<RawDocument> docs;
  for (const auto& sub : subdirs) {
    RawDocument raw;
    raw.doc_id = sub.filename().string();
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(sub)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    std::optional<fs::path> main;
    std::string bib, bbl;
    for (const auto& f : files) {
      std::string ext = f.extension().string();
      std::string rel = fs::relative(f, sub).generic_string();
      if (ext == ".tex") {
        std::string text = detail::read_file(f);
        if (!main && text.find("\\begin{document}") != std::string::npos) main = f;
        raw.includes[rel] = text;
      } else if (ext == ".bib") {
        bib += detail::read_file(f) + "\n";
      } else if (ext == ".bbl") {
        bbl += detail::read_file(f) + "\n";
      } else if (rel == "meta.json") {
        auto meta = nlohmann::json::parse(detail::read_file(f));
        if (meta.contains("id")) raw.doc_id = meta["id"].get<std::string>();
        if (meta.contains("category") && !meta["category"].is_null()) raw.category = meta["category"].get<std::string>();
      }
    }
    if (!main) throw FormatError(sub.string() + ": no .tex file contains \\begin{document}");
    raw.source_text = raw.includes.at(fs::relative(*main, sub).generic_string());
    if (!bib.empty()) {
      raw.bib_text = bib;
      raw.bib_kind = latex::BibFormat::bib;
    } else if (!bbl.empty()) {
      raw.bib_text = bbl;
      raw.bib_kind = latex::BibFormat::bbl;
    }
    docs.push_back(std::move(raw));
  }
  return docs;
}

}  // namespace citegraph
