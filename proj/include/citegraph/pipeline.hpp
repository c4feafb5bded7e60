#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "citegraph/embedding.hpp"
#include "citegraph/error.hpp"
#include "citegraph/graph.hpp"
#include "citegraph/index.hpp"
#include "citegraph/instructions.hpp"
#include "citegraph/retriever.hpp"

namespace citegraph {

struct GenerationParams {
  int max_tokens = 1024;
  double temperature = 0.7;
  double top_p = 0.95;
  double repetition_penalty = 1.15;
};

inline nlohmann::json to_json(const GenerationParams& g) {
  return {{"max_tokens", g.max_tokens},
          {"temperature", g.temperature},
          {"top_p", g.top_p},
          {"repetition_penalty", g.repetition_penalty}};
}

/// A text-completion backend. Failures are reported as CompletionError.
class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual std::string complete(const std::string& prompt, const GenerationParams& params) = 0;
};

/// Canned responses. The script is either a plain {prompt: response}
/// object (exact matches) or
///   {"rules": [{"match": "exact"|"contains"|"prefix", "pattern": ..., "response": ...}],
///    "fallback": "echo" | <string>}
/// Rules are tried in order; without a match the fallback applies (echo
/// returns the prompt).
class ScriptedClient : public CompletionClient {
 public:
  struct Rule {
    enum class Match { exact, contains, prefix };
    Match match = Match::exact;
    std::string pattern;
    std::string response;
  };

  ScriptedClient() = default;
  explicit ScriptedClient(std::vector<Rule> rules, std::optional<std::string> fallback = std::nullopt)
      : rules_(std::move(rules)), fallback_(std::move(fallback)) {}

  static ScriptedClient from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("script must be a JSON object");
    std::vector<Rule> rules;
    std::optional<std::string> fallback;
    if (j.contains("rules")) {
      for (const auto& r : j.at("rules")) {
        Rule rule;
        std::string m = r.value("match", "exact");
        if (m == "exact") {
          rule.match = Rule::Match::exact;
        } else if (m == "contains") {
          rule.match = Rule::Match::contains;
        } else if (m == "prefix") {
          rule.match = Rule::Match::prefix;
        } else {
          throw FormatError("unknown script match kind: " + m);
        }
        rule.pattern = r.at("pattern").get<std::string>();
        rule.response = r.at("response").get<std::string>();
        rules.push_back(std::move(rule));
      }
      if (j.contains("fallback")) {
        std::string f = j.at("fallback").get<std::string>();
        if (f != "echo") fallback = f;
      }
    } else {
      for (const auto& [k, v] : j.items()) rules.push_back({Rule::Match::exact, k, v.get<std::string>()});
    }
    return ScriptedClient(std::move(rules), std::move(fallback));
  }

  static ScriptedClient from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }

  std::string complete(const std::string& prompt, const GenerationParams&) override {
    {
      std::lock_guard lock(*mu_);
      calls_.push_back(prompt);
    }
    for (const auto& r : rules_) {
      bool hit = false;
      switch (r.match) {
        case Rule::Match::exact:
          hit = prompt == r.pattern;
          break;
        case Rule::Match::contains:
          hit = prompt.find(r.pattern) != std::string::npos;
          break;
        case Rule::Match::prefix:
          hit = prompt.starts_with(r.pattern);
          break;
      }
      if (hit) return r.response;
    }
    return fallback_ ? *fallback_ : prompt;
  }

  std::vector<std::string> calls() const {
    std::lock_guard lock(*mu_);
    return calls_;
  }

 private:
  std::vector<Rule> rules_;
  std::optional<std::string> fallback_;
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
  std::vector<std::string> calls_;
};

/// Everything retrieval needs at query time. Non-owning.
struct RetrievalContext {
  const CitationGraph& graph;
  const RetrieverParams& params;
  const RetrievalIndex& index;
  EmbeddingProvider& provider;
};

/// Ranks papers for free text: q = Wq LM(text) + bq.
inline RetrievalResult retrieve_text(const RetrievalContext& ctx, const std::string& text, std::size_t k) {
  return retrieve(ctx.index, ctx.params, ctx.provider.embed(text), k);
}

inline std::optional<bool> parse_yes_no(const std::string& text) {
  std::string word;
  auto check = [&]() -> std::optional<bool> {
    std::string w = word;
    for (auto& c : w) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    word.clear();
    if (w == "YES") return true;
    if (w == "NO") return false;
    return std::nullopt;
  };
  for (char c : text) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word += c;
    } else if (!word.empty()) {
      if (auto r = check()) return r;
    }
  }
  if (!word.empty()) return check();
  return std::nullopt;
}

struct TaskResult {
  std::string prompt;
  std::string response;
  std::vector<std::string> references;
  std::optional<bool> link_prediction;  // parsed answer for link prediction
};

inline nlohmann::json to_json(const TaskResult& r) {
  nlohmann::json j = {{"prompt", r.prompt}, {"response", r.response}, {"references", r.references}};
  if (r.link_prediction) j["link_prediction"] = *r.link_prediction;
  return j;
}

namespace detail {

inline std::string join_text(const std::string& a, const std::string& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  return a + " " + b;
}

/// Results of several queries merged by score, first occurrence kept,
/// ties by ascending id.
inline std::vector<std::string> merge_rankings(const std::vector<RetrievalResult>& lists, std::size_t k) {
  std::map<std::string, double> best;
  for (const auto& l : lists) {
    for (const auto& s : l) {
      auto it = best.find(s.id);
      if (it == best.end() || s.score > it->second) best[s.id] = s.score;
    }
  }
  std::vector<std::pair<std::string, double>> all(best.begin(), best.end());
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].first);
  return out;
}

}  // namespace detail

/// Retrieves k references for the task's query text, renders the task
/// prompt with them, and returns the completion verbatim. Pairwise tasks
/// retrieve for both papers and keep the k best of the union. k = 0 renders
/// the prompt without references.
inline TaskResult run_task(Task task, const TaskInputs& in, const RetrievalContext* ctx, CompletionClient& client,
                           std::size_t k, const GenerationParams& gen = {}) {
  std::vector<std::string> queries;
  switch (task) {
    case Task::title_generation:
      if (in.abstract.empty()) throw InvalidArgument("title generation needs an abstract");
      queries = {in.abstract};
      break;
    case Task::abstract_completion:
      if (in.title.empty()) throw InvalidArgument("abstract completion needs a title");
      queries = {detail::join_text(in.title, in.abstract_prefix)};
      break;
    case Task::recommendation:
      if (in.title.empty() || in.candidates.empty()) throw InvalidArgument("recommendation needs a title and candidates");
      queries = {detail::join_text(in.title, in.abstract)};
      break;
    case Task::link_prediction:
    case Task::citation_sentence:
      if (in.title.empty() || in.title_b.empty()) throw InvalidArgument("pairwise tasks need both titles");
      queries = {detail::join_text(in.title, in.abstract), detail::join_text(in.title_b, in.abstract_b)};
      break;
  }
  TaskResult res;
  std::vector<Reference> refs;
  if (k > 0) {
    if (ctx == nullptr) throw InvalidArgument("k > 0 needs a retriever");
    std::vector<RetrievalResult> lists;
    for (const auto& q : queries) lists.push_back(retrieve_text(*ctx, q, k));
    res.references = detail::merge_rankings(lists, k);
    for (const auto& id : res.references) refs.push_back({id, ctx->graph.paper(id).title});
  }
  res.prompt = render_prompt(task, in, refs);
  res.response = client.complete(res.prompt, gen);
  if (task == Task::link_prediction) res.link_prediction = parse_yes_no(res.response);
  return res;
}

// ---------------------------------------------------------------------------
// Related-work chain

inline std::string summarize_prompt(const std::string& raw) {
  return "Summarize the following text in a few sentences, keeping its topic, problem and method.\n\nText: " + raw +
         "\n\nSummary:";
}

inline std::string recommend_prompt(const std::string& summary, const CitationGraph& g,
                                    const std::vector<std::string>& candidates, std::size_t k2) {
  std::ostringstream p;
  p << "A paper is described by the summary below. From the retrieved papers, list the " << k2
    << " papers it is most likely to cite, most likely first, as bracketed ids such as [id].\n\nSummary: " << summary
    << "\n\nRetrieved papers:\n";
  for (const auto& id : candidates) p << "[" << id << "] " << g.paper(id).title << "\n";
  p << "\nCited papers:";
  return p.str();
}

inline std::string citation_sentence_prompt(const std::string& summary, const Paper& cited) {
  return "Write one sentence for the related work section of the target paper that describes how it relates to the "
         "cited paper. Cite it with the marker [" +
         cited.id + "].\n\nTarget paper summary: " + summary + "\n\nCited paper [" + cited.id + "]\nTitle: " +
         cited.title + "\nAbstract: " + cited.abstract + "\n\nCitation sentence:";
}

inline std::string group_prompt(const std::map<std::string, std::string>& sentences,
                                const std::vector<std::string>& order) {
  std::ostringstream p;
  p << "Group the citation sentences below by topic and relevance. Write one group per line as bracketed ids, for "
       "example: [a] [b]\n\n";
  for (const auto& id : order) p << "[" << id << "] " << sentences.at(id) << "\n";
  p << "\nGroups:";
  return p.str();
}

inline std::string organize_prompt(const std::vector<std::string>& group,
                                   const std::map<std::string, std::string>& sentences) {
  std::ostringstream p;
  p << "Organize the citation sentences below into one coherent paragraph of a related work section. Keep every "
       "citation marker such as [id] unchanged.\n\n";
  for (const auto& id : group) p << "[" << id << "] " << sentences.at(id) << "\n";
  p << "\nParagraph:";
  return p.str();
}

inline std::string summarize_query(CompletionClient& client, const std::string& raw, const GenerationParams& gen = {}) {
  if (split_words(raw).empty()) throw InvalidArgument("query text is empty");
  return client.complete(summarize_prompt(raw), gen);
}

inline std::vector<std::string> retrieve_candidates(const RetrievalContext& ctx, const std::string& summary,
                                                    std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  std::vector<std::string> ids;
  for (const auto& s : retrieve_text(ctx, summary, k)) ids.push_back(s.id);
  return ids;
}

namespace detail {

/// Ids mentioned in `text`, in order: bracketed markers if there are any,
/// else bare tokens that are exactly a known id.
inline std::vector<std::string> mentioned_ids(const std::string& text, const std::set<std::string>& known) {
  std::vector<std::string> out;
  static const std::regex marker(R"(\[([^\[\]\n]+)\])");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), marker); it != std::sregex_iterator(); ++it) {
    std::string inner = (*it)[1];
    std::string tok;
    std::istringstream parts(inner);
    while (std::getline(parts, tok, ',')) {
      auto b = tok.find_first_not_of(" \t;");
      auto e = tok.find_last_not_of(" \t;");
      if (b != std::string::npos) out.push_back(tok.substr(b, e - b + 1));
    }
  }
  if (!out.empty()) return out;
  std::string tok;
  auto flush = [&] {
    while (!tok.empty() && (tok.back() == '.' || tok.back() == ')')) tok.pop_back();
    if (known.contains(tok)) out.push_back(tok);
    tok.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',' || c == ';') {
      flush();
    } else {
      tok += c;
    }
  }
  flush();
  return out;
}

}  // namespace detail

struct Recommendation {
  std::vector<std::string> ids;
  bool used_fallback = false;
};

/// Parses the client's ranking; ids outside `candidates` are dropped. An
/// empty parse falls back to the first k2 candidates.
inline Recommendation recommend_cited(CompletionClient& client, const CitationGraph& g, const std::string& summary,
                                      const std::vector<std::string>& candidates, std::size_t k2,
                                      const GenerationParams& gen = {}) {
  if (candidates.empty()) throw InvalidArgument("no candidates to recommend from");
  if (k2 < 1) throw InvalidArgument("k2 must be >= 1");
  std::set<std::string> allowed(candidates.begin(), candidates.end());
  std::string response = client.complete(recommend_prompt(summary, g, candidates, k2), gen);
  Recommendation rec;
  std::set<std::string> seen;
  for (auto& id : detail::mentioned_ids(response, allowed)) {
    if (allowed.contains(id) && seen.insert(id).second) rec.ids.push_back(id);
    if (rec.ids.size() == k2) break;
  }
  if (rec.ids.empty()) {
    rec.used_fallback = true;
    rec.ids.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(std::min(k2, candidates.size())));
  }
  return rec;
}

struct SentenceResult {
  std::map<std::string, std::string> sentences;
  std::vector<std::string> failed;  // ids whose call failed or returned nothing
};

/// One call per cited paper, in the given order.
inline SentenceResult generate_citation_sentences(CompletionClient& client, const CitationGraph& g,
                                                  const std::string& summary, const std::vector<std::string>& cited,
                                                  const GenerationParams& gen = {}) {
  if (cited.empty()) throw InvalidArgument("no cited papers");
  SentenceResult out;
  for (const auto& id : cited) {
    try {
      std::string s = client.complete(citation_sentence_prompt(summary, g.paper(id)), gen);
      std::string norm = join_words(split_words(s), 0, split_words(s).size());
      if (norm.empty()) {
        out.failed.push_back(id);
      } else {
        out.sentences[id] = norm;
      }
    } catch (const CompletionError&) {
      out.failed.push_back(id);
    }
  }
  return out;
}

struct Grouping {
  std::vector<std::vector<std::string>> groups;
  bool used_fallback = false;
};

/// Parses one group per line (bracketed ids or a JSON array of arrays).
/// Anything that is not a partition of the sentence ids becomes a single
/// group.
inline Grouping group_sentences(CompletionClient& client, const std::map<std::string, std::string>& sentences,
                                const std::vector<std::string>& order, const GenerationParams& gen = {}) {
  if (sentences.empty()) throw InvalidArgument("no citation sentences to group");
  std::vector<std::string> ids;
  for (const auto& id : order) {
    if (sentences.contains(id)) ids.push_back(id);
  }
  std::set<std::string> known(ids.begin(), ids.end());
  std::string response = client.complete(group_prompt(sentences, ids), gen);

  std::vector<std::vector<std::string>> groups;
  bool parsed_json = false;
  try {
    auto j = nlohmann::json::parse(response);
    if (j.is_array()) {
      for (const auto& g : j) groups.push_back(g.get<std::vector<std::string>>());
      parsed_json = true;
    }
  } catch (const nlohmann::json::exception&) {
    groups.clear();
  }
  if (!parsed_json) {
    std::istringstream lines(response);
    std::string line;
    while (std::getline(lines, line)) {
      auto g = detail::mentioned_ids(line, known);
      if (!g.empty()) groups.push_back(std::move(g));
    }
  }

  std::set<std::string> covered;
  bool valid = !groups.empty();
  for (const auto& g : groups) {
    if (g.empty()) valid = false;
    for (const auto& id : g) {
      if (!known.contains(id) || !covered.insert(id).second) valid = false;
    }
  }
  if (covered.size() != known.size()) valid = false;
  if (!valid) return {{ids}, true};
  return {groups, false};
}

struct OrganizedText {
  std::string text;
  std::size_t stripped_markers = 0;
  std::vector<std::string> warnings;
};

namespace detail {

/// Keeps bracketed markers whose ids are all in `allowed` (multi-id markers
/// are split into one marker per id); removes the rest.
inline std::string filter_markers(const std::string& text, const std::set<std::string>& allowed,
                                  std::size_t& stripped, std::vector<std::string>& warnings) {
  static const std::regex marker(R"(\[([^\[\]\n]*)\])");
  std::string out;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), marker); it != std::sregex_iterator(); ++it) {
    out += text.substr(last, static_cast<std::size_t>(it->position()) - last);
    last = static_cast<std::size_t>(it->position() + it->length());
    std::string inner = (*it)[1];
    std::string kept, tok;
    std::istringstream parts(inner);
    while (std::getline(parts, tok, ',')) {
      std::istringstream sub(tok);
      std::string piece;
      while (std::getline(sub, piece, ';')) {
        auto b = piece.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        auto e = piece.find_last_not_of(" \t");
        std::string id = piece.substr(b, e - b + 1);
        if (allowed.contains(id)) {
          if (!kept.empty()) kept += ' ';
          kept += "[" + id + "]";
        } else {
          ++stripped;
          warnings.push_back("removed unresolvable citation marker [" + id + "]");
        }
      }
    }
    if (inner.find_first_not_of(" \t") == std::string::npos) {
      ++stripped;
      warnings.push_back("removed empty citation marker");
    }
    out += kept;
  }
  out += text.substr(last);
  return join_words(split_words(out), 0, split_words(out).size());
}

}  // namespace detail

/// One paragraph per group, joined by a blank line. Markers that do not
/// name a grouped paper are removed.
inline OrganizedText organize_related_work(CompletionClient& client, const std::vector<std::vector<std::string>>& groups,
                                           const std::map<std::string, std::string>& sentences,
                                           const GenerationParams& gen = {}) {
  std::set<std::string> allowed;
  for (const auto& g : groups) allowed.insert(g.begin(), g.end());
  OrganizedText out;
  for (const auto& g : groups) {
    std::string paragraph = client.complete(organize_prompt(g, sentences), gen);
    paragraph = detail::filter_markers(paragraph, allowed, out.stripped_markers, out.warnings);
    if (paragraph.empty()) {
      std::string joined;
      for (const auto& id : g) joined += sentences.at(id) + " ";
      paragraph = detail::filter_markers(joined, allowed, out.stripped_markers, out.warnings);
      out.warnings.push_back("empty paragraph replaced by its citation sentences");
    }
    if (!out.text.empty()) out.text += "\n\n";
    out.text += paragraph;
  }
  return out;
}

struct RelatedWorkDraft {
  std::string summary;
  std::vector<std::string> retrieved;
  std::vector<std::string> recommended;
  std::map<std::string, std::string> citation_sentences;
  std::vector<std::string> failed;
  std::vector<std::vector<std::string>> groups;
  std::string final_text;
  std::vector<std::string> warnings;

  bool operator==(const RelatedWorkDraft&) const = default;
};

inline nlohmann::json to_json(const RelatedWorkDraft& d) {
  return {{"summary", d.summary},
          {"retrieved", d.retrieved},
          {"recommended", d.recommended},
          {"citation_sentences", d.citation_sentences},
          {"failed", d.failed},
          {"groups", d.groups},
          {"final_text", d.final_text},
          {"warnings", d.warnings}};
}

/// Summarize, retrieve k, recommend k2, write one citation sentence per
/// recommended paper, group them, and write one paragraph per group.
inline RelatedWorkDraft generate_related_work(const RetrievalContext& ctx, CompletionClient& client,
                                              const std::string& raw_text, std::size_t k, std::size_t k2,
                                              const GenerationParams& gen = {}) {
  RelatedWorkDraft d;
  auto step = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const CompletionError& e) {
      throw CompletionError(std::string(name) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(std::string(name) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(std::string(name) + ": " + e.what());
    }
  };
  d.summary = step("summarize", [&] { return summarize_query(client, raw_text, gen); });
  d.retrieved = step("retrieve", [&] { return retrieve_candidates(ctx, d.summary, k); });
  auto rec = step("recommend", [&] { return recommend_cited(client, ctx.graph, d.summary, d.retrieved, k2, gen); });
  d.recommended = rec.ids;
  if (rec.used_fallback) d.warnings.push_back("recommendation output unparseable, used the retrieval order");
  auto sent = step("citation sentences",
                   [&] { return generate_citation_sentences(client, ctx.graph, d.summary, d.recommended, gen); });
  d.citation_sentences = sent.sentences;
  d.failed = sent.failed;
  for (const auto& id : d.failed) d.warnings.push_back("no citation sentence for " + id);
  if (d.citation_sentences.empty()) throw CompletionError("citation sentences: every call failed");
  auto grouping = step("group", [&] { return group_sentences(client, d.citation_sentences, d.recommended, gen); });
  d.groups = grouping.groups;
  if (grouping.used_fallback) d.warnings.push_back("grouping output was not a partition, used a single group");
  auto organized = step("organize", [&] { return organize_related_work(client, d.groups, d.citation_sentences, gen); });
  d.final_text = organized.text;
  for (auto& w : organized.warnings) d.warnings.push_back(w);
  return d;
}

}  // namespace citegraph
