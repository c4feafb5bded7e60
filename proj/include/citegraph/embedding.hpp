#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "citegraph/binary_io.hpp"
#include "citegraph/error.hpp"
#include "citegraph/paper.hpp"
#include "citegraph/random.hpp"

namespace citegraph {

/// Paper id -> float32 vector, in insertion order.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw InvalidArgument("embedding dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  bool contains(const std::string& id) const { return index_.contains(id); }

  void add(const std::string& id, const Eigen::Ref<const Eigen::VectorXd>& v) {
    Eigen::VectorXf f = v.cast<float>();
    add(id, f);
  }

  void add(const std::string& id, const Eigen::Ref<const Eigen::VectorXf>& v) {
    if (static_cast<std::size_t>(v.size()) != dim_) {
      throw InvalidArgument("vector for " + id + " has length " + std::to_string(v.size()) + ", expected " +
                            std::to_string(dim_));
    }
    if (!v.allFinite()) throw InvalidArgument("vector for " + id + " has non-finite entries");
    if (!index_.emplace(id, ids_.size()).second) throw InvalidArgument("duplicate embedding id: " + id);
    ids_.push_back(id);
    data_.insert(data_.end(), v.data(), v.data() + v.size());
  }

  Eigen::Map<const Eigen::VectorXf> row(std::size_t i) const {
    return {data_.data() + i * dim_, static_cast<Eigen::Index>(dim_)};
  }

  Eigen::Map<const Eigen::VectorXf> at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFound("no embedding for paper " + id);
    return row(it->second);
  }

  bool operator==(const EmbeddingTable& o) const { return dim_ == o.dim_ && ids_ == o.ids_ && data_ == o.data_; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> data_;
};

/// Text encoder behind z_i. Implementations must return equal vectors for
/// equal text.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual Eigen::VectorXd embed(const std::string& text) = 0;

  virtual std::vector<Eigen::VectorXd> embed_batch(const std::vector<std::string>& texts) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed(t));
    return out;
  }
};

/// Hashed bag of whitespace tokens: each token adds +-1 to bucket
/// fnv1a64(token) % dim (sign from the hash's top bit), then the sum is
/// L2-normalized. Text with no tokens maps to the first basis vector.
/// Stateless, so safe for concurrent callers.
inline Eigen::VectorXd stub_embed(std::string_view text, std::size_t dim) {
  if (dim == 0) throw InvalidArgument("embedding dimension must be positive");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  std::size_t i = 0;
  auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && is_ws(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_ws(text[j])) ++j;
    if (j > i) {
      std::uint64_t h = fnv1a64(text.substr(i, j - i));
      v[static_cast<Eigen::Index>(h % dim)] += (h >> 63) ? -1.0 : 1.0;
    }
    i = j;
  }
  double norm = v.norm();
  if (norm == 0.0) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / norm;
}

class StubProvider : public EmbeddingProvider {
 public:
  explicit StubProvider(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw InvalidArgument("embedding dimension must be positive");
  }
  std::size_t dim() const override { return dim_; }
  Eigen::VectorXd embed(const std::string& text) override { return stub_embed(text, dim_); }

 private:
  std::size_t dim_;
};

/// z = LM(title) + LM(abstract).
inline Eigen::VectorXd node_embedding(EmbeddingProvider& provider, const Paper& paper) {
  if (paper.title.empty()) throw InvalidArgument("paper " + paper.id + " has an empty title");
  try {
    auto v = provider.embed_batch({paper.title, paper.abstract});
    if (v.size() != 2) throw Error("provider returned " + std::to_string(v.size()) + " vectors for 2 texts");
    return v[0] + v[1];
  } catch (const std::exception& e) {
    throw Error("embedding paper " + paper.id + ": " + e.what());
  }
}

/// Embeds every paper, batching `batch_papers` papers per provider call.
inline EmbeddingTable embed_papers(EmbeddingProvider& provider, const std::vector<Paper>& papers,
                                   std::size_t batch_papers = 32) {
  EmbeddingTable table(provider.dim());
  if (batch_papers == 0) batch_papers = 1;
  for (std::size_t start = 0; start < papers.size(); start += batch_papers) {
    std::size_t end = std::min(papers.size(), start + batch_papers);
    std::vector<std::string> texts;
    for (std::size_t i = start; i < end; ++i) {
      if (papers[i].title.empty()) throw InvalidArgument("paper " + papers[i].id + " has an empty title");
      texts.push_back(papers[i].title);
      texts.push_back(papers[i].abstract);
    }
    std::vector<Eigen::VectorXd> vecs;
    try {
      vecs = provider.embed_batch(texts);
    } catch (const std::exception& e) {
      throw Error("embedding papers " + papers[start].id + ".." + papers[end - 1].id + ": " + e.what());
    }
    if (vecs.size() != texts.size()) throw Error("provider returned the wrong number of vectors");
    for (std::size_t i = start; i < end; ++i) {
      table.add(papers[i].id, Eigen::VectorXd(vecs[2 * (i - start)] + vecs[2 * (i - start) + 1]));
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// CGEM files: "CGEM", u16 version, u32 dim, u64 count, then per record
// u16 id length, id bytes, dim float32. Little-endian throughout.

inline constexpr std::uint16_t kCgemVersion = 1;

inline void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
  binio::write_bytes(out, "CGEM");
  binio::write<std::uint16_t>(out, kCgemVersion);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
  binio::write<std::uint64_t>(out, table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& id = table.ids()[i];
    if (id.size() > UINT16_MAX) throw InvalidArgument("paper id too long for CGEM: " + id.substr(0, 40));
    binio::write<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    binio::write_bytes(out, id);
    auto r = table.row(i);
    for (Eigen::Index k = 0; k < r.size(); ++k) binio::write_f32(out, r[k]);
  }
}

inline EmbeddingTable read_embeddings(std::istream& in, std::optional<std::size_t> expected_dim = std::nullopt) {
  binio::expect_magic(in, "CGEM");
  auto version = binio::read<std::uint16_t>(in, "version");
  if (version != kCgemVersion) throw FormatError("unsupported CGEM version " + std::to_string(version));
  auto dim = binio::read<std::uint32_t>(in, "dim");
  if (dim == 0) throw FormatError("CGEM dim is zero");
  if (expected_dim && *expected_dim != dim) {
    throw FormatError("CGEM dim " + std::to_string(dim) + " does not match expected " + std::to_string(*expected_dim));
  }
  auto count = binio::read<std::uint64_t>(in, "count");
  EmbeddingTable table(dim);
  Eigen::VectorXf v(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    auto len = binio::read<std::uint16_t>(in, "id length");
    std::string id = binio::read_bytes(in, len, "id");
    for (std::uint32_t k = 0; k < dim; ++k) v[k] = binio::read_f32(in, "vector");
    try {
      table.add(id, v);
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("CGEM record ") + std::to_string(r) + ": " + e.what());
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after CGEM records");
  return table;
}

inline void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_embeddings(out, table);
  if (!out) throw Error("write failed: " + path.string());
}

inline EmbeddingTable load_embeddings(const std::filesystem::path& path,
                                      std::optional<std::size_t> expected_dim = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  try {
    return read_embeddings(in, expected_dim);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace citegraph
