#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "citegraph/error.hpp"
#include "citegraph/graph.hpp"
#include "citegraph/random.hpp"

namespace citegraph {

enum class Task { title_generation, abstract_completion, link_prediction, recommendation, citation_sentence };

inline constexpr const char* kTemplateVersion = "v1";

inline const char* task_name(Task t) {
  switch (t) {
    case Task::title_generation:
      return "title_generation";
    case Task::abstract_completion:
      return "abstract_completion";
    case Task::link_prediction:
      return "link_prediction";
    case Task::recommendation:
      return "recommendation";
    case Task::citation_sentence:
      return "citation_sentence";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  for (Task t : {Task::title_generation, Task::abstract_completion, Task::link_prediction, Task::recommendation,
                 Task::citation_sentence}) {
    if (s == task_name(t)) return t;
  }
  std::string dashed = s;
  std::replace(dashed.begin(), dashed.end(), '-', '_');
  if (dashed != s) return parse_task(dashed);
  throw InvalidArgument("unknown task: " + s);
}

/// Text fields a task prompt is rendered from. Which ones are read depends
/// on the task.
struct TaskInputs {
  std::string title;
  std::string abstract;
  std::string abstract_prefix;  // abstract_completion
  std::string title_b;          // pairwise tasks: the cited / candidate side
  std::string abstract_b;
  std::vector<std::string> candidates;  // recommendation, candidate titles
};

struct Reference {
  std::string id;
  std::string title;
};

namespace detail {

inline std::string paper_block(const std::string& label, const std::string& title, const std::string& abstract) {
  return label + "\nTitle: " + title + "\nAbstract: " + abstract + "\n";
}

}  // namespace detail

/// Fixed English prompt templates. References, when given, are listed
/// before the answer cue as "[id] title" lines.
inline std::string render_prompt(Task task, const TaskInputs& in, const std::vector<Reference>& references = {}) {
  std::ostringstream p;
  std::string cue;
  switch (task) {
    case Task::title_generation:
      p << "Generate the title of a scientific paper from its abstract.\n\nAbstract: " << in.abstract << "\n";
      cue = "Title:";
      break;
    case Task::abstract_completion:
      p << "Complete the abstract of a scientific paper given its title and the beginning of the abstract.\n\n"
        << "Title: " << in.title << "\nAbstract: " << in.abstract_prefix << "\n";
      cue = "Continuation:";
      break;
    case Task::link_prediction:
      p << "Determine whether paper A cites paper B. Answer YES or NO.\n\n"
        << detail::paper_block("Paper A", in.title, in.abstract) << "\n"
        << detail::paper_block("Paper B", in.title_b, in.abstract_b);
      cue = "Answer:";
      break;
    case Task::recommendation:
      p << "Select the candidate paper that the source paper is most likely to cite. Answer with the title of the "
           "selected candidate.\n\n"
        << detail::paper_block("Source paper", in.title, in.abstract) << "\nCandidates:\n";
      for (std::size_t i = 0; i < in.candidates.size(); ++i) p << "Candidate " << i + 1 << ": " << in.candidates[i] << "\n";
      cue = "Answer:";
      break;
    case Task::citation_sentence:
      p << "Write the sentence in which paper A cites paper B.\n\n"
        << detail::paper_block("Paper A", in.title, in.abstract) << "\n"
        << detail::paper_block("Paper B", in.title_b, in.abstract_b);
      cue = "Citation sentence:";
      break;
  }
  if (!references.empty()) {
    p << "\nReferences:\n";
    for (const auto& r : references) p << "[" << r.id << "] " << r.title << "\n";
  }
  p << "\n" << cue;
  return p.str();
}

struct InstructionRecord {
  Task task = Task::title_generation;
  std::string prompt;
  std::string completion;
  nlohmann::json meta = nlohmann::json::object();

  bool operator==(const InstructionRecord&) const = default;
};

inline nlohmann::json to_json(const InstructionRecord& r) {
  return {{"task", task_name(r.task)}, {"prompt", r.prompt}, {"completion", r.completion}, {"meta", r.meta}};
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(std::move(w));
  return words;
}

inline std::string join_words(const std::vector<std::string>& words, std::size_t from, std::size_t to) {
  std::string out;
  for (std::size_t i = from; i < to; ++i) {
    if (i > from) out += ' ';
    out += words[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single records. Each returns nullopt when the input is skipped.

inline std::optional<InstructionRecord> title_generation_instruction(const Paper& p) {
  if (split_words(p.abstract).empty() || p.title.empty()) return std::nullopt;
  TaskInputs in;
  in.abstract = p.abstract;
  return InstructionRecord{Task::title_generation, render_prompt(Task::title_generation, in), p.title,
                           {{"template_version", kTemplateVersion}, {"source", p.id}}};
}

/// Words in the prompt: ceil(fraction * W) of a W-word abstract, W >= 10.
inline std::size_t abstract_prefix_words(std::size_t total_words, double fraction = 0.10) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(total_words) - 1e-9));
}

inline std::optional<InstructionRecord> abstract_completion_instruction(const Paper& p, double fraction = 0.10) {
  auto words = split_words(p.abstract);
  if (words.size() < 10) return std::nullopt;
  std::size_t n = std::clamp<std::size_t>(abstract_prefix_words(words.size(), fraction), 1, words.size() - 1);
  TaskInputs in;
  in.title = p.title;
  in.abstract_prefix = join_words(words, 0, n);
  return InstructionRecord{Task::abstract_completion, render_prompt(Task::abstract_completion, in),
                           join_words(words, n, words.size()),
                           {{"template_version", kTemplateVersion}, {"source", p.id}, {"prefix_words", n}}};
}

inline InstructionRecord link_prediction_instruction(const CitationGraph& g, std::size_t source, std::size_t target,
                                                     bool label, std::uint64_t seed) {
  const Paper& a = g.paper(source);
  const Paper& b = g.paper(target);
  TaskInputs in{a.title, a.abstract, "", b.title, b.abstract, {}};
  return {Task::link_prediction, render_prompt(Task::link_prediction, in), label ? "YES" : "NO",
          {{"template_version", kTemplateVersion},
           {"source", a.id},
           {"target", b.id},
           {"label", label},
           {"negative", !label},
           {"seed", seed}}};
}

/// Nodes from `pool` that are neither `source` nor its neighbors.
inline std::vector<std::size_t> non_neighbors(const CitationGraph& g, std::size_t source,
                                              const std::vector<std::size_t>& pool) {
  std::vector<std::size_t> out;
  for (std::size_t v : pool) {
    if (v != source && !adjacent(g.adjacency(), source, v)) out.push_back(v);
  }
  return out;
}

/// The true edge plus a corrupted copy whose target is a random
/// non-neighbor of the source drawn from `pool`. Empty when no such node
/// exists, so that labels stay balanced.
inline std::vector<InstructionRecord> link_prediction_pair(const CitationGraph& g, std::size_t edge,
                                                           const std::vector<std::size_t>& pool, std::uint64_t seed) {
  auto [s, t] = g.endpoints(edge);
  auto negatives = non_neighbors(g, s, pool);
  if (negatives.empty()) return {};
  Rng rng(derive_seed(seed, {0x11u, edge}));
  std::size_t corrupt = negatives[rng.uniform_index(negatives.size())];
  return {link_prediction_instruction(g, s, t, true, seed), link_prediction_instruction(g, s, corrupt, false, seed)};
}

/// Candidate list of `candidate_count` titles (the true target plus
/// candidate_count - 1 negatives from `pool`), shuffled.
inline InstructionRecord recommendation_instruction(const CitationGraph& g, std::size_t edge,
                                                    const std::vector<std::size_t>& pool, std::uint64_t seed,
                                                    std::size_t candidate_count = 10) {
  if (candidate_count < 2) throw InvalidArgument("recommendation needs at least 2 candidates");
  auto [s, t] = g.endpoints(edge);
  auto negatives = non_neighbors(g, s, pool);
  if (negatives.size() < candidate_count - 1) {
    throw InvalidArgument("edge " + g.id(s) + " -> " + g.id(t) + " has only " + std::to_string(negatives.size()) +
                          " negatives, " + std::to_string(candidate_count - 1) + " needed");
  }
  Rng rng(derive_seed(seed, {0x12u, edge}));
  auto chosen = sample_without_replacement(std::move(negatives), candidate_count - 1, rng);
  chosen.push_back(t);
  shuffle(chosen, rng);
  const Paper& src = g.paper(s);
  TaskInputs in;
  in.title = src.title;
  in.abstract = src.abstract;
  std::vector<std::string> ids;
  for (std::size_t c : chosen) {
    in.candidates.push_back(g.paper(c).title);
    ids.push_back(g.id(c));
  }
  auto answer = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), t) - chosen.begin());
  return {Task::recommendation, render_prompt(Task::recommendation, in), g.paper(t).title,
          {{"template_version", kTemplateVersion},
           {"source", src.id},
           {"target", g.id(t)},
           {"candidates", ids},
           {"answer_index", answer},
           {"seed", seed}}};
}

inline std::optional<InstructionRecord> citation_sentence_instruction(const CitationGraph& g, std::size_t edge) {
  const CitationEdge& e = g.edges().at(edge);
  if (split_words(e.sentence).empty()) return std::nullopt;
  const Paper& a = g.paper(e.source);
  const Paper& b = g.paper(e.target);
  TaskInputs in{a.title, a.abstract, "", b.title, b.abstract, {}};
  return InstructionRecord{Task::citation_sentence, render_prompt(Task::citation_sentence, in), e.sentence,
                           {{"template_version", kTemplateVersion}, {"source", a.id}, {"target", b.id}}};
}

// ---------------------------------------------------------------------------
// Whole dataset

struct InstructionOptions {
  std::size_t node_budget = 20000;
  std::uint64_t seed = 0;
  double abstract_fraction = 0.10;
  std::size_t recommendation_candidates = 10;  // 11 gives one true + 10 negatives
};

struct InstructionReport {
  std::size_t sampled_nodes = 0;
  std::size_t induced_edges = 0;
  std::size_t skipped_title = 0;
  std::size_t skipped_completion = 0;
  std::size_t skipped_link = 0;
  std::size_t skipped_recommendation = 0;
  std::size_t skipped_sentence = 0;
};

inline nlohmann::json to_json(const InstructionReport& r) {
  return {{"sampled_nodes", r.sampled_nodes},
          {"induced_edges", r.induced_edges},
          {"skipped_title", r.skipped_title},
          {"skipped_completion", r.skipped_completion},
          {"skipped_link", r.skipped_link},
          {"skipped_recommendation", r.skipped_recommendation},
          {"skipped_sentence", r.skipped_sentence}};
}

/// Samples min(budget, |V|) nodes, emits node-level records for them and
/// edge-level records for the induced subgraph, then shuffles everything.
inline std::vector<InstructionRecord> build_training_set(const CitationGraph& g, const InstructionOptions& opt,
                                                         InstructionReport* report = nullptr) {
  if (g.size() == 0) throw InvalidArgument("empty graph");
  InstructionReport rep;
  std::vector<std::size_t> all(g.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Rng rng(derive_seed(opt.seed, {0x5a3u}));
  std::vector<std::size_t> nodes =
      opt.node_budget >= g.size() ? all : sample_without_replacement(all, opt.node_budget, rng);
  std::sort(nodes.begin(), nodes.end());
  std::vector<bool> in_sample(g.size(), false);
  for (std::size_t v : nodes) in_sample[v] = true;
  rep.sampled_nodes = nodes.size();

  std::vector<InstructionRecord> out;
  for (std::size_t v : nodes) {
    if (auto r = title_generation_instruction(g.paper(v))) {
      out.push_back(std::move(*r));
    } else {
      ++rep.skipped_title;
    }
    if (auto r = abstract_completion_instruction(g.paper(v), opt.abstract_fraction)) {
      out.push_back(std::move(*r));
    } else {
      ++rep.skipped_completion;
    }
  }
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    auto [s, t] = g.endpoints(e);
    if (!in_sample[s] || !in_sample[t]) continue;
    ++rep.induced_edges;
    auto pair = link_prediction_pair(g, e, nodes, opt.seed);
    if (pair.empty()) {
      ++rep.skipped_link;
    } else {
      for (auto& r : pair) out.push_back(std::move(r));
    }
    try {
      out.push_back(recommendation_instruction(g, e, nodes, opt.seed, opt.recommendation_candidates));
    } catch (const InvalidArgument&) {
      ++rep.skipped_recommendation;
    }
    if (auto r = citation_sentence_instruction(g, e)) {
      out.push_back(std::move(*r));
    } else {
      ++rep.skipped_sentence;
    }
  }
  Rng final_rng(derive_seed(opt.seed, {0x5a4u}));
  shuffle(out, final_rng);
  if (report) *report = rep;
  return out;
}

inline void write_instructions(const std::filesystem::path& path, const std::vector<InstructionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

}  // namespace citegraph
