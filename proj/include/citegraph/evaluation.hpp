#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "citegraph/graph.hpp"
#include "citegraph/index.hpp"
#include "citegraph/metrics.hpp"
#include "citegraph/retriever.hpp"
#include "citegraph/training.hpp"

namespace citegraph {

enum class Variant { full, no_pseudo_query, no_neighbor_aware };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full:
      return "full";
    case Variant::no_pseudo_query:
      return "no_pseudo_query";
    case Variant::no_neighbor_aware:
      return "no_neighbor_aware";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_pseudo_query" || s == "pseudo_query") return Variant::no_pseudo_query;
  if (s == "no_neighbor_aware" || s == "neighbor_aware") return Variant::no_neighbor_aware;
  throw InvalidArgument("unknown ablation: " + s);
}

inline ScoringFlags variant_flags(Variant v) {
  return {v == Variant::no_pseudo_query, v == Variant::no_neighbor_aware};
}

struct RetrieverEvalOptions {
  std::vector<std::size_t> ks = {5, 10};
  std::vector<Variant> variants = {Variant::full};
  bool exclude_train_neighbors = true;
  /// Replaces the default queries (endpoints of test edges, relevant =
  /// their test neighbors).
  std::optional<HeldOutQueries> queries;
};

/// Expected P@k of a uniformly random ranking, averaged over queries.
inline double random_ranking_baseline(const HeldOutQueries& held, std::size_t n_nodes, const Adjacency* exclude) {
  double total = 0.0;
  for (std::size_t t = 0; t < held.queries.size(); ++t) {
    std::size_t i = held.queries[t];
    std::size_t candidates = n_nodes - 1, rel = 0;
    if (exclude) candidates -= (*exclude)[i].size();
    for (std::size_t r : held.relevant[t]) {
      if (r != i && (exclude == nullptr || !adjacent(*exclude, i, r))) ++rel;
    }
    if (candidates > 0) total += static_cast<double>(rel) / static_cast<double>(candidates);
  }
  return total / static_cast<double>(held.queries.size());
}

/// Mean P@k per variant. Ablations re-score the same parameters with the
/// corresponding component switched off; nothing is retrained.
inline std::vector<MetricReport> eval_retriever(const CitationGraph& g, const Eigen::MatrixXd& Z,
                                                const SplitAssignment& split, const RetrieverParams& P,
                                                const RetrieverEvalOptions& opt = {}) {
  HeldOutQueries held = opt.queries ? *opt.queries : queries_from_edges(g, split.test);
  if (held.empty()) throw InvalidArgument("no held-out queries: the test split is empty");
  const Adjacency train_adj = adjacency_from_edges(g, split.train);
  const Adjacency* exclude = opt.exclude_train_neighbors ? &train_adj : nullptr;

  std::vector<MetricReport> out;
  for (Variant v : opt.variants) {
    RetrievalIndex idx = build_index(P, g, Z, train_adj, variant_flags(v));
    for (std::size_t k : opt.ks) {
      MetricReport r;
      r.name = "P@" + std::to_string(k);
      r.value = mean_precision_at_k(idx, P, Z, held, k, exclude);
      r.support = held.queries.size();
      r.config = {{"variant", variant_name(v)}, {"k", k}, {"exclude_train_neighbors", opt.exclude_train_neighbors}};
      out.push_back(std::move(r));
    }
  }
  MetricReport base;
  base.name = "random_baseline";
  base.value = random_ranking_baseline(held, g.size(), exclude);
  base.support = held.queries.size();
  base.config = {{"exclude_train_neighbors", opt.exclude_train_neighbors}};
  out.push_back(std::move(base));
  return out;
}

}  // namespace citegraph
