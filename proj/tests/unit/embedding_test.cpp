#include <cstring>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "citegraph/embedding.hpp"
#include "support/planted.hpp"

using namespace citegraph;
namespace cgt = citegraph::testing;

namespace {

class FixedProvider : public EmbeddingProvider {
 public:
  explicit FixedProvider(std::size_t dim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  Eigen::VectorXd embed(const std::string& text) override {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
    if (text.starts_with("T")) v[0] = 1.0;
    if (text.starts_with("A")) v[1] = 1.0;
    return v;
  }

 private:
  std::size_t dim_;
};

class ZeroProvider : public EmbeddingProvider {
 public:
  std::size_t dim() const override { return 3; }
  Eigen::VectorXd embed(const std::string&) override { return Eigen::VectorXd::Zero(3); }
};

class FailingProvider : public EmbeddingProvider {
 public:
  std::size_t dim() const override { return 3; }
  Eigen::VectorXd embed(const std::string&) override { throw Error("backend down"); }
};

// The stub's definition, restated token by token.
Eigen::VectorXd stub_by_hand(const std::vector<std::string>& tokens, std::size_t dim) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  for (const auto& t : tokens) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    v[static_cast<Eigen::Index>(h % dim)] += (h >> 63) ? -1.0 : 1.0;
  }
  return v / v.norm();
}

EmbeddingTable random_table(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingTable t(dim);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXf v(static_cast<Eigen::Index>(dim));
    for (auto& x : v) x = static_cast<float>(cgt::gaussian(rng) * 10.0);
    t.add("id-" + std::to_string(i), v);
  }
  return t;
}

}  // namespace

TEST(StubEmbed, EmptyTextIsFirstBasisVector) {
  auto v = stub_embed("", 8);
  EXPECT_EQ(v, Eigen::VectorXd::Unit(8, 0));
  EXPECT_EQ(stub_embed("  \n\t", 8), v);
}

TEST(StubEmbed, DeterministicAndOrderFree) {
  EXPECT_EQ(stub_embed("graph retrieval model", 16), stub_embed("graph retrieval model", 16));
  EXPECT_EQ(stub_embed("a b", 16), stub_embed("b a", 16));
  EXPECT_NEAR(stub_embed("some words here", 16).norm(), 1.0, 1e-15);
}

TEST(StubEmbed, MatchesHandFormula) {
  auto v = stub_embed("Neural  citation\tgraphs neural", 32);
  auto w = stub_by_hand({"Neural", "citation", "graphs", "neural"}, 32);
  EXPECT_TRUE(v.isApprox(w, 1e-15));
}

TEST(StubEmbed, ZeroDimRejected) { EXPECT_THROW(stub_embed("x", 0), InvalidArgument); }

TEST(NodeEmbedding, SumOfTitleAndAbstract) {
  FixedProvider p(4);
  Paper paper{"x", "Title", "Abstract", std::nullopt, std::nullopt};
  Eigen::VectorXd want(4);
  want << 1, 1, 0, 0;
  EXPECT_EQ(node_embedding(p, paper), want);
}

TEST(NodeEmbedding, ZeroProviderGivesZero) {
  ZeroProvider p;
  EXPECT_TRUE(node_embedding(p, {"x", "T", "A", std::nullopt, std::nullopt}).isZero(0.0));
}

TEST(NodeEmbedding, StubEqualsRecomputedSum) {
  StubProvider p(24);
  Paper paper{"x", "Graph retrievers", "", std::nullopt, std::nullopt};
  Eigen::VectorXd want = stub_by_hand({"Graph", "retrievers"}, 24) + Eigen::VectorXd::Unit(24, 0);
  EXPECT_TRUE(node_embedding(p, paper).isApprox(want, 1e-15));
}

TEST(NodeEmbedding, ErrorsCarryPaperId) {
  FailingProvider p;
  try {
    node_embedding(p, {"paper-42", "T", "A", std::nullopt, std::nullopt});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("paper-42"), std::string::npos);
  }
  ZeroProvider z;
  EXPECT_THROW(node_embedding(z, {"x", "", "A", std::nullopt, std::nullopt}), InvalidArgument);
}

TEST(EmbedPapers, BatchedEqualsOneByOne) {
  StubProvider p(12);
  std::vector<Paper> papers;
  for (int i = 0; i < 7; ++i) papers.push_back({"p" + std::to_string(i), "title " + std::to_string(i), "abs", {}, {}});
  auto table = embed_papers(p, papers, 3);
  ASSERT_EQ(table.size(), 7u);
  for (const auto& paper : papers) {
    EXPECT_TRUE(table.at(paper.id).cast<double>().isApprox(node_embedding(p, paper), 1e-6));
  }
}

TEST(EmbeddingTable, RejectsBadRows) {
  EmbeddingTable t(3);
  EXPECT_THROW(t.add("a", Eigen::VectorXf::Zero(2)), InvalidArgument);
  Eigen::VectorXf nan = Eigen::VectorXf::Zero(3);
  nan[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(t.add("a", nan), InvalidArgument);
  t.add("a", Eigen::VectorXf::Ones(3));
  EXPECT_THROW(t.add("a", Eigen::VectorXf::Ones(3)), InvalidArgument);
  EXPECT_THROW(t.at("missing"), NotFound);
}

TEST(Cgem, SmallRoundTrip) {
  auto t = random_table(3, 5, 1);
  std::stringstream s;
  write_embeddings(s, t);
  EXPECT_EQ(read_embeddings(s), t);
}

TEST(Cgem, LargeRoundTripByteIdentical) {
  auto t = random_table(10000, 8, 2);
  std::stringstream a;
  write_embeddings(a, t);
  auto back = read_embeddings(a);
  EXPECT_EQ(back, t);
  std::stringstream b;
  write_embeddings(b, back);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Cgem, HeaderLayout) {
  EmbeddingTable t(2);
  t.add("ab", Eigen::VectorXf::Ones(2));
  std::stringstream s;
  write_embeddings(s, t);
  std::string bytes = s.str();
  ASSERT_EQ(bytes.size(), 4u + 2 + 4 + 8 + 2 + 2 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "CGEM");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[6], 2);
  EXPECT_EQ(bytes[10], 1);
  EXPECT_EQ(bytes[18], 2);
  EXPECT_EQ(bytes.substr(20, 2), "ab");
  float one;
  std::memcpy(&one, bytes.data() + 22, 4);
  EXPECT_EQ(one, 1.0f);
}

TEST(Cgem, CorruptInputsRejected) {
  auto t = random_table(4, 3, 3);
  std::stringstream s;
  write_embeddings(s, t);
  std::string good = s.str();
  std::string bad = good;
  bad[1] = 'X';
  std::stringstream magic(bad), truncated(good.substr(0, good.size() - 2)), trailing(good + "!");
  EXPECT_THROW(read_embeddings(magic), FormatError);
  EXPECT_THROW(read_embeddings(truncated), FormatError);
  EXPECT_THROW(read_embeddings(trailing), FormatError);
  std::stringstream dim(good);
  EXPECT_THROW(read_embeddings(dim, 4), FormatError);
}

TEST(Cgem, FileRoundTrip) {
  auto path = std::filesystem::temp_directory_path() / "citegraph_embedding_test.cgem";
  auto t = random_table(20, 6, 4);
  save_embeddings(t, path);
  EXPECT_EQ(load_embeddings(path, 6), t);
  std::filesystem::remove(path);
  EXPECT_THROW(load_embeddings(path), NotFound);
}
