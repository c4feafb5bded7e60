#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "citegraph/error.hpp"
#include "citegraph/paper.hpp"
#include "citegraph/random.hpp"

namespace citegraph {

/// Sorted, duplicate-free neighbor lists indexed by node position.
using Adjacency = std::vector<std::vector<std::size_t>>;

class CitationGraph {
 public:
  std::size_t size() const { return papers_.size(); }
  const std::vector<Paper>& papers() const { return papers_; }
  const std::vector<CitationEdge>& edges() const { return edges_; }
  const Paper& paper(std::size_t i) const { return papers_.at(i); }
  const std::string& id(std::size_t i) const { return papers_.at(i).id; }

  bool contains(const std::string& id) const { return index_.contains(id); }

  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFound("unknown paper id: " + id);
    return it->second;
  }

  const Paper& paper(const std::string& id) const { return papers_[index_of(id)]; }

  /// Undirected view over all edges.
  const Adjacency& adjacency() const { return undirected_; }
  /// Cited papers per node.
  const Adjacency& out_adjacency() const { return out_; }

  std::pair<std::size_t, std::size_t> endpoints(std::size_t edge) const {
    return {index_.at(edges_.at(edge).source), index_.at(edges_.at(edge).target)};
  }

  std::size_t duplicate_edges() const { return duplicates_; }
  std::size_t self_loops() const { return self_loops_; }

 private:
  friend CitationGraph build_graph(std::vector<Paper>, std::vector<CitationEdge>);

  std::vector<Paper> papers_;
  std::vector<CitationEdge> edges_;
  std::unordered_map<std::string, std::size_t> index_;
  Adjacency undirected_;
  Adjacency out_;
  std::size_t duplicates_ = 0;
  std::size_t self_loops_ = 0;
};

namespace detail {

inline void sort_unique(Adjacency& adj) {
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
}

}  // namespace detail

/// Repeated (source, target) pairs keep the first record; its
/// in_related_work flag becomes true if any copy had it.
inline CitationGraph build_graph(std::vector<Paper> papers, std::vector<CitationEdge> edges) {
  CitationGraph g;
  for (std::size_t i = 0; i < papers.size(); ++i) {
    if (papers[i].id.empty()) throw InvalidArgument("paper with empty id");
    if (!g.index_.emplace(papers[i].id, i).second) throw InvalidArgument("duplicate paper id: " + papers[i].id);
  }
  g.papers_ = std::move(papers);

  std::vector<std::string> dangling;
  for (const auto& e : edges) {
    for (const auto* end : {&e.source, &e.target}) {
      if (!g.index_.contains(*end)) dangling.push_back(*end);
    }
  }
  if (!dangling.empty()) {
    std::sort(dangling.begin(), dangling.end());
    dangling.erase(std::unique(dangling.begin(), dangling.end()), dangling.end());
    std::string msg = "edges reference unknown papers:";
    for (const auto& d : dangling) msg += " " + d;
    throw InvalidArgument(msg);
  }

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;
  for (auto& e : edges) {
    std::size_t s = g.index_.at(e.source), t = g.index_.at(e.target);
    if (s == t) {
      ++g.self_loops_;
      continue;
    }
    auto [it, fresh] = seen.emplace(std::pair{s, t}, g.edges_.size());
    if (!fresh) {
      ++g.duplicates_;
      g.edges_[it->second].in_related_work = g.edges_[it->second].in_related_work || e.in_related_work;
      continue;
    }
    g.edges_.push_back(std::move(e));
  }

  g.undirected_.assign(g.size(), {});
  g.out_.assign(g.size(), {});
  for (const auto& [st, _] : seen) {
    g.out_[st.first].push_back(st.second);
    g.undirected_[st.first].push_back(st.second);
    g.undirected_[st.second].push_back(st.first);
  }
  detail::sort_unique(g.undirected_);
  detail::sort_unique(g.out_);
  return g;
}

/// Undirected adjacency over a subset of edges.
inline Adjacency adjacency_from_edges(const CitationGraph& g, const std::vector<std::size_t>& edge_ids) {
  Adjacency adj(g.size());
  for (std::size_t e : edge_ids) {
    auto [s, t] = g.endpoints(e);
    adj[s].push_back(t);
    adj[t].push_back(s);
  }
  detail::sort_unique(adj);
  return adj;
}

inline bool adjacent(const Adjacency& adj, std::size_t a, std::size_t b) {
  return std::binary_search(adj[a].begin(), adj[a].end(), b);
}

/// Undirected neighbor ids, sorted.
inline std::vector<std::string> neighbors(const CitationGraph& g, const std::string& id) {
  std::vector<std::string> out;
  for (std::size_t n : g.adjacency()[g.index_of(id)]) out.push_back(g.id(n));
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitRatios {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct SplitAssignment {
  std::uint64_t seed = 0;
  SplitRatios ratios;
  std::vector<std::size_t> train, val, test;  // edge indices, ascending
  std::vector<std::size_t> excluded;          // edges touching test_nodes
  std::vector<std::size_t> test_nodes;        // held-out subgraph, may be empty
};

/// Largest-remainder apportionment: each part gets floor(ratio * n), and the
/// leftover edges go one each to the largest fractional parts (ties: val,
/// then test, then train).
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  const std::array<double, 3> w = {r.train, r.val, r.test};
  double total = w[0] + w[1] + w[2];
  if (!(total > 0) || w[0] < 0 || w[1] < 0 || w[2] < 0) throw InvalidArgument("split ratios must be non-negative");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    double exact = w[k] / total * static_cast<double>(n);
    // guard against 0.7 * 20 = 13.999...
    double fl = std::floor(exact + 1e-9);
    sizes[k] = static_cast<std::size_t>(fl);
    frac[k] = exact - fl;
    assigned += sizes[k];
  }
  const std::array<int, 3> tie_order = {1, 2, 0};
  while (assigned < n) {
    int best = -1;
    for (int k : tie_order) {
      if (best < 0 || frac[k] > frac[best] + 1e-12) best = k;
    }
    ++sizes[best];
    frac[best] = -1.0;
    ++assigned;
  }
  return sizes;
}

/// Partitions `edge_ids` (default: all edges).
inline SplitAssignment split_edges(const CitationGraph& g, const SplitRatios& ratios, std::uint64_t seed,
                                   std::optional<std::vector<std::size_t>> edge_ids = std::nullopt) {
  std::vector<std::size_t> ids;
  if (edge_ids) {
    ids = *edge_ids;
  } else {
    ids.resize(g.edges().size());
    std::iota(ids.begin(), ids.end(), 0);
  }
  if (ids.size() < 3) throw InvalidArgument("need at least 3 edges to split, got " + std::to_string(ids.size()));
  Rng rng(derive_seed(seed, {0x5b1u}));
  shuffle(ids, rng);
  auto sizes = split_sizes(ids.size(), ratios);
  SplitAssignment out;
  out.seed = seed;
  out.ratios = ratios;
  out.train.assign(ids.begin(), ids.begin() + sizes[0]);
  out.val.assign(ids.begin() + sizes[0], ids.begin() + sizes[0] + sizes[1]);
  out.test.assign(ids.begin() + sizes[0] + sizes[1], ids.end());
  for (auto* part : {&out.train, &out.val, &out.test}) std::sort(part->begin(), part->end());
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

inline std::vector<std::vector<std::size_t>> connected_components(const Adjacency& adj) {
  std::vector<std::vector<std::size_t>> comps;
  std::vector<bool> seen(adj.size(), false);
  for (std::size_t s = 0; s < adj.size(); ++s) {
    if (seen[s]) continue;
    std::vector<std::size_t> comp{s};
    seen[s] = true;
    for (std::size_t head = 0; head < comp.size(); ++head) {
      for (std::size_t n : adj[comp[head]]) {
        if (!seen[n]) {
          seen[n] = true;
          comp.push_back(n);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

/// Grows a connected node set from a random start, always taking the
/// frontier node of highest degree (ties: lowest index). If no component
/// has n nodes the largest component is returned and a warning recorded.
inline std::vector<std::size_t> sample_test_subgraph(const CitationGraph& g, long long n, std::uint64_t seed,
                                                     Diagnostics* diag = nullptr) {
  if (n <= 0) throw InvalidArgument("test subgraph size must be positive");
  const Adjacency& adj = g.adjacency();
  if (g.size() == 0) return {};
  auto comps = connected_components(adj);
  const std::size_t want = static_cast<std::size_t>(n);

  std::vector<std::size_t> starts;
  for (const auto& c : comps) {
    if (c.size() >= want) starts.insert(starts.end(), c.begin(), c.end());
  }
  if (starts.empty()) {
    const auto* largest = &comps.front();
    for (const auto& c : comps) {
      if (c.size() > largest->size()) largest = &c;
    }
    warn(diag, "no connected component has " + std::to_string(want) + " nodes; using the largest (" +
                   std::to_string(largest->size()) + ")");
    return *largest;
  }
  std::sort(starts.begin(), starts.end());
  Rng rng(derive_seed(seed, {0x7e57u}));
  std::size_t start = starts[rng.uniform_index(starts.size())];

  std::vector<bool> chosen(g.size(), false);
  std::set<std::pair<long long, std::size_t>> frontier;  // (-degree, index)
  std::vector<bool> queued(g.size(), false);
  std::vector<std::size_t> out;
  auto take = [&](std::size_t v) {
    chosen[v] = true;
    out.push_back(v);
    for (std::size_t nb : adj[v]) {
      if (!chosen[nb] && !queued[nb]) {
        queued[nb] = true;
        frontier.emplace(-static_cast<long long>(adj[nb].size()), nb);
      }
    }
  };
  take(start);
  while (out.size() < want && !frontier.empty()) {
    auto it = frontier.begin();
    std::size_t v = it->second;
    frontier.erase(it);
    take(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// m distinct nodes outside adj[i] and i itself, in draw order.
inline std::vector<std::size_t> sample_negatives(const Adjacency& adj, std::size_t i, std::size_t m, Rng& rng) {
  const std::size_t n = adj.size();
  if (i >= n) throw InvalidArgument("node index out of range");
  const std::size_t pool = n - 1 - adj[i].size() + (adjacent(adj, i, i) ? 1 : 0);
  if (pool < m) {
    throw InvalidArgument("only " + std::to_string(pool) + " non-neighbors available, " + std::to_string(m) +
                          " negatives requested");
  }
  if (m == 0) return {};
  if (pool >= 2 * m) {
    std::vector<std::size_t> out;
    out.reserve(m);
    while (out.size() < m) {
      std::size_t c = rng.uniform_index(n);
      if (c == i || adjacent(adj, i, c) || std::find(out.begin(), out.end(), c) != out.end()) continue;
      out.push_back(c);
    }
    return out;
  }
  std::vector<std::size_t> candidates;
  candidates.reserve(pool);
  for (std::size_t c = 0; c < n; ++c) {
    if (c != i && !adjacent(adj, i, c)) candidates.push_back(c);
  }
  return sample_without_replacement(std::move(candidates), m, rng);
}

inline std::vector<std::size_t> sample_negatives(const Adjacency& adj, std::size_t i, std::size_t m,
                                                 std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x4e9u, i}));
  return sample_negatives(adj, i, m, rng);
}

/// Holds out a connected test subgraph (when test_nodes > 0), drops every
/// edge touching it, and splits the remaining edges.
inline SplitAssignment make_split(const CitationGraph& g, const SplitRatios& ratios, std::uint64_t seed,
                                  long long test_nodes = 0, Diagnostics* diag = nullptr) {
  std::vector<std::size_t> held;
  if (test_nodes > 0) held = sample_test_subgraph(g, test_nodes, seed, diag);
  std::vector<bool> in_test(g.size(), false);
  for (std::size_t v : held) in_test[v] = true;
  std::vector<std::size_t> keep, excluded;
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    auto [s, t] = g.endpoints(e);
    (in_test[s] || in_test[t] ? excluded : keep).push_back(e);
  }
  SplitAssignment split = split_edges(g, ratios, seed, keep);
  split.excluded = std::move(excluded);
  split.test_nodes = std::move(held);
  return split;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json split_to_json(const SplitAssignment& s) {
  return {{"seed", s.seed},
          {"ratios", {s.ratios.train, s.ratios.val, s.ratios.test}},
          {"train", s.train},
          {"val", s.val},
          {"test", s.test},
          {"excluded", s.excluded},
          {"test_nodes", s.test_nodes}};
}

inline SplitAssignment split_from_json(const nlohmann::json& j) {
  SplitAssignment s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("ratios")) {
      auto r = j.at("ratios").get<std::vector<double>>();
      if (r.size() != 3) throw FormatError("split ratios must have 3 entries");
      s.ratios = {r[0], r[1], r[2]};
    }
    s.train = j.at("train").get<std::vector<std::size_t>>();
    s.val = j.at("val").get<std::vector<std::size_t>>();
    s.test = j.at("test").get<std::vector<std::size_t>>();
    s.excluded = j.value("excluded", std::vector<std::size_t>{});
    s.test_nodes = j.value("test_nodes", std::vector<std::size_t>{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad split manifest: ") + e.what());
  }
  return s;
}

/// Throws unless the split partitions the edges of `g`.
inline void validate_split(const CitationGraph& g, const SplitAssignment& s) {
  std::vector<int> hits(g.edges().size(), 0);
  for (const auto* part : {&s.train, &s.val, &s.test, &s.excluded}) {
    for (std::size_t e : *part) {
      if (e >= hits.size()) throw FormatError("split references edge " + std::to_string(e) + " beyond the graph");
      ++hits[e];
    }
  }
  for (std::size_t e = 0; e < hits.size(); ++e) {
    if (hits[e] != 1) throw FormatError("split does not partition the edges (edge " + std::to_string(e) + ")");
  }
}

inline void save_split(const std::filesystem::path& path, const SplitAssignment& s) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << split_to_json(s).dump() << '\n';
}

inline SplitAssignment load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return split_from_json(j);
}

/// Reads DIR/nodes.jsonl and DIR/edges.jsonl.
inline CitationGraph load_graph(const std::filesystem::path& dir) {
  return build_graph(load_nodes(dir / "nodes.jsonl"), load_edges(dir / "edges.jsonl"));
}

inline void save_graph(const std::filesystem::path& dir, const CitationGraph& g) {
  std::filesystem::create_directories(dir);
  write_jsonl(dir / "nodes.jsonl", g.papers());
  write_jsonl(dir / "edges.jsonl", g.edges());
}

}  // namespace citegraph
