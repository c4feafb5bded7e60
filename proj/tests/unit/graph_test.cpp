#include <algorithm>
#include <filesystem>
#include <numeric>
#include <queue>
#include <set>

#include <gtest/gtest.h>

#include "citegraph/graph.hpp"
#include "support/planted.hpp"

using namespace citegraph;
namespace cgt = citegraph::testing;

namespace {

Paper paper(const std::string& id) { return {id, "Title " + id, "Abstract " + id, std::nullopt, std::nullopt}; }

CitationEdge edge(const std::string& s, const std::string& t, bool rw = false) {
  return {s, t, s + " cites " + t + ".", std::nullopt, std::nullopt, rw};
}

std::vector<Paper> papers(std::size_t n) {
  std::vector<Paper> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(paper(cgt::planted_id(i)));
  return out;
}

CitationGraph path_graph(std::size_t n) {
  std::vector<CitationEdge> edges;
  for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back(edge(cgt::planted_id(i), cgt::planted_id(i + 1)));
  return build_graph(papers(n), edges);
}

bool connected(const CitationGraph& g, const std::vector<std::size_t>& nodes) {
  if (nodes.empty()) return false;
  std::set<std::size_t> in(nodes.begin(), nodes.end()), seen{nodes[0]};
  std::queue<std::size_t> q;
  q.push(nodes[0]);
  while (!q.empty()) {
    auto v = q.front();
    q.pop();
    for (auto u : g.adjacency()[v]) {
      if (in.contains(u) && seen.insert(u).second) q.push(u);
    }
  }
  return seen.size() == in.size();
}

}  // namespace

TEST(BuildGraph, PathAdjacency) {
  auto g = build_graph({paper("A"), paper("B"), paper("C")}, {edge("A", "B"), edge("B", "C")});
  EXPECT_EQ(neighbors(g, "A"), std::vector<std::string>{"B"});
  EXPECT_EQ(neighbors(g, "B"), (std::vector<std::string>{"A", "C"}));
  EXPECT_EQ(neighbors(g, "C"), std::vector<std::string>{"B"});
  EXPECT_EQ(g.out_adjacency()[g.index_of("A")], std::vector<std::size_t>{g.index_of("B")});
  EXPECT_TRUE(g.out_adjacency()[g.index_of("C")].empty());
}

TEST(BuildGraph, DuplicateEdgeCountedOnce) {
  auto g = build_graph({paper("A"), paper("B")}, {edge("A", "B"), edge("A", "B", true)});
  EXPECT_EQ(g.edges().size(), 1u);
  EXPECT_EQ(g.duplicate_edges(), 1u);
  EXPECT_TRUE(g.edges()[0].in_related_work);
}

TEST(BuildGraph, OppositeDirectionsAreDistinctEdges) {
  auto g = build_graph({paper("A"), paper("B")}, {edge("A", "B"), edge("B", "A")});
  EXPECT_EQ(g.edges().size(), 2u);
  EXPECT_EQ(neighbors(g, "A"), std::vector<std::string>{"B"});
}

TEST(BuildGraph, SelfLoopDropped) {
  auto g = build_graph({paper("A")}, {edge("A", "A")});
  EXPECT_TRUE(g.edges().empty());
  EXPECT_EQ(g.self_loops(), 1u);
}

TEST(BuildGraph, DanglingEndpointListsOffender) {
  try {
    build_graph({paper("A")}, {edge("A", "ghost")});
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(BuildGraph, DuplicatePaperIdRejected) {
  EXPECT_THROW(build_graph({paper("A"), paper("A")}, {}), InvalidArgument);
}

TEST(Neighbors, IsolatedAndStar) {
  std::vector<Paper> ps = {paper("hub"), paper("lonely")};
  std::vector<CitationEdge> es;
  for (int i = 0; i < 5; ++i) {
    ps.push_back(paper("leaf" + std::to_string(i)));
    es.push_back(edge("leaf" + std::to_string(i), "hub"));
  }
  auto g = build_graph(ps, es);
  EXPECT_TRUE(neighbors(g, "lonely").empty());
  EXPECT_EQ(neighbors(g, "hub").size(), 5u);
  EXPECT_THROW(neighbors(g, "nobody"), NotFound);
}

TEST(Neighbors, SymmetricOnRandomGraph) {
  auto inst = cgt::make_random_instance(60, 150, 2, 3);
  const auto& adj = inst.graph.adjacency();
  for (std::size_t a = 0; a < adj.size(); ++a) {
    for (auto b : adj[a]) EXPECT_TRUE(adjacent(adj, b, a));
  }
}

TEST(SplitSizes, ExactRatios) {
  auto s = split_sizes(20, {});
  EXPECT_EQ(s, (std::array<std::size_t, 3>{14, 3, 3}));
  auto t = split_sizes(10, {});
  EXPECT_EQ(t[0], 7u);
  EXPECT_EQ(t[0] + t[1] + t[2], 10u);
  EXPECT_TRUE(t[1] == 1 || t[1] == 2);
  EXPECT_TRUE(t[2] == 1 || t[2] == 2);
}

TEST(SplitSizes, WithinOneEdgeOfRatios) {
  SplitRatios r;
  for (std::size_t n = 3; n < 300; ++n) {
    auto s = split_sizes(n, r);
    EXPECT_EQ(s[0] + s[1] + s[2], n);
    EXPECT_LE(std::abs(static_cast<double>(s[0]) - 0.7 * n), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(s[1]) - 0.15 * n), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(s[2]) - 0.15 * n), 1.0);
  }
}

TEST(SplitEdges, PartitionAndDeterminism) {
  auto inst = cgt::make_random_instance(50, 120, 2, 4);
  auto a = split_edges(inst.graph, {}, 9);
  auto b = split_edges(inst.graph, {}, 9);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  std::vector<std::size_t> all;
  for (auto* part : {&a.train, &a.val, &a.test}) all.insert(all.end(), part->begin(), part->end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> want(inst.graph.edges().size());
  std::iota(want.begin(), want.end(), 0);
  EXPECT_EQ(all, want);
  auto c = split_edges(inst.graph, {}, 10);
  EXPECT_NE(a.train, c.train);
}

TEST(SplitEdges, TooFewEdges) {
  auto g = path_graph(3);
  EXPECT_THROW(split_edges(g, {}, 1), InvalidArgument);
}

TEST(SplitJson, RoundTripAndValidation) {
  auto inst = cgt::make_random_instance(30, 60, 2, 5);
  auto s = make_split(inst.graph, {}, 3, 5);
  auto back = split_from_json(split_to_json(s));
  EXPECT_EQ(back.train, s.train);
  EXPECT_EQ(back.val, s.val);
  EXPECT_EQ(back.test, s.test);
  EXPECT_EQ(back.excluded, s.excluded);
  EXPECT_EQ(back.test_nodes, s.test_nodes);
  EXPECT_NO_THROW(validate_split(inst.graph, back));
  back.val.push_back(back.train.front());
  EXPECT_THROW(validate_split(inst.graph, back), FormatError);
}

TEST(TestSubgraph, WholeConnectedGraph) {
  auto g = path_graph(8);
  auto nodes = sample_test_subgraph(g, 100, 1);
  EXPECT_EQ(nodes.size(), 8u);
}

TEST(TestSubgraph, PathTripleIsConnected) {
  auto g = path_graph(10);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto nodes = sample_test_subgraph(g, 3, seed);
    ASSERT_EQ(nodes.size(), 3u);
    EXPECT_TRUE(connected(g, nodes));
    EXPECT_EQ(nodes, sample_test_subgraph(g, 3, seed));
  }
}

TEST(TestSubgraph, FallsBackToLargestComponentWithWarning) {
  auto g = build_graph({paper("a"), paper("b"), paper("c"), paper("d"), paper("e")},
                       {edge("a", "b"), edge("b", "c"), edge("d", "e")});
  Diagnostics diag;
  auto nodes = sample_test_subgraph(g, 4, 0, &diag);
  EXPECT_EQ(nodes.size(), 3u);
  EXPECT_FALSE(diag.empty());
  EXPECT_THROW(sample_test_subgraph(g, 0, 0), InvalidArgument);
}

TEST(TestSubgraph, ExcludedEdgesTouchTestNodes) {
  auto inst = cgt::make_random_instance(80, 200, 2, 6);
  auto s = make_split(inst.graph, {}, 4, 10);
  std::set<std::size_t> test(s.test_nodes.begin(), s.test_nodes.end());
  for (auto e : s.excluded) {
    auto [a, b] = inst.graph.endpoints(e);
    EXPECT_TRUE(test.contains(a) || test.contains(b));
  }
  for (auto* part : {&s.train, &s.val, &s.test}) {
    for (auto e : *part) {
      auto [a, b] = inst.graph.endpoints(e);
      EXPECT_FALSE(test.contains(a) || test.contains(b));
    }
  }
}

TEST(SampleNegatives, ForcedOutcome) {
  std::vector<CitationEdge> es;
  std::vector<std::string> ids = {"a", "b", "c", "d"};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      if (!(ids[i] == "a" && ids[j] == "d")) es.push_back(edge(ids[i], ids[j]));
    }
  }
  auto g = build_graph({paper("a"), paper("b"), paper("c"), paper("d")}, es);
  auto neg = sample_negatives(g.adjacency(), g.index_of("a"), 1, std::uint64_t{3});
  EXPECT_EQ(neg, std::vector<std::size_t>{g.index_of("d")});
  EXPECT_TRUE(sample_negatives(g.adjacency(), 0, 0, std::uint64_t{3}).empty());
  EXPECT_THROW(sample_negatives(g.adjacency(), 0, 2, std::uint64_t{3}), InvalidArgument);
}

TEST(SampleNegatives, DisjointFromNeighborhood) {
  auto inst = cgt::make_random_instance(100, 300, 2, 7);
  const auto& adj = inst.graph.adjacency();
  for (std::size_t i = 0; i < 100; i += 7) {
    auto neg = sample_negatives(adj, i, 10, std::uint64_t{i});
    std::set<std::size_t> uniq(neg.begin(), neg.end());
    EXPECT_EQ(uniq.size(), 10u);
    for (auto n : neg) {
      EXPECT_NE(n, i);
      EXPECT_FALSE(std::binary_search(adj[i].begin(), adj[i].end(), n));
    }
    EXPECT_EQ(neg, sample_negatives(adj, i, 10, std::uint64_t{i}));
  }
}

TEST(GraphFiles, SaveLoadRoundTrip) {
  auto dir = std::filesystem::temp_directory_path() / "citegraph_graph_test";
  std::filesystem::remove_all(dir);
  auto g = build_graph({paper("A"), paper("B"), paper("C")}, {edge("A", "B", true), edge("C", "A")});
  save_graph(dir, g);
  auto back = load_graph(dir);
  EXPECT_EQ(back.papers(), g.papers());
  EXPECT_EQ(back.edges(), g.edges());
  std::filesystem::remove_all(dir);
}

TEST(ConnectedComponents, CountsIslands) {
  auto g = build_graph({paper("a"), paper("b"), paper("c"), paper("d")}, {edge("a", "b")});
  EXPECT_EQ(connected_components(g.adjacency()).size(), 3u);
}
