#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "citegraph/binary_io.hpp"
#include "citegraph/embedding.hpp"
#include "citegraph/error.hpp"
#include "citegraph/graph.hpp"
#include "citegraph/retriever.hpp"

namespace citegraph {

/// One column per graph node, in graph order.
inline Eigen::MatrixXd embedding_matrix(const EmbeddingTable& table, const CitationGraph& g) {
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(table.dim()), static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) Z.col(static_cast<Eigen::Index>(i)) = table.at(g.id(i)).cast<double>();
  return Z;
}

/// Candidate-side rows c_n + p_n (or c_n) for every node, immutable once built.
struct RetrievalIndex {
  std::vector<std::string> ids;
  RowMatrix rows;  // |V| x d1
  Eigen::VectorXd norms;
  std::vector<std::size_t> id_rank;  // position of each row in ascending-id order
  std::uint64_t params_fingerprint = 0;
  ScoringFlags flags;

  std::size_t size() const { return ids.size(); }
};

struct ScoredId {
  std::string id;
  double score = 0.0;

  bool operator==(const ScoredId&) const = default;
};

using RetrievalResult = std::vector<ScoredId>;

/// Row n uses the full neighbor list adj[n] (no subsampling).
inline RetrievalIndex build_index(const RetrieverParams& P, const CitationGraph& g, const Eigen::MatrixXd& Z,
                                  const Adjacency& adj, ScoringFlags flags = {}) {
  detail::check_size(Z.cols(), g.size(), "embedding matrix columns");
  if (adj.size() != g.size()) throw InvalidArgument("adjacency does not match the graph");
  RetrievalIndex idx;
  idx.flags = flags;
  idx.params_fingerprint = P.fingerprint();
  idx.rows.resize(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(P.d1()));
  idx.ids.reserve(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    idx.ids.push_back(g.id(n));
    Eigen::VectorXd mean = flags.ablate_neighbor_aware ? Eigen::VectorXd::Zero(Z.rows()) : neighbor_mean(Z, adj[n]);
    Eigen::VectorXd c = candidate_from_mean(P, Z.col(static_cast<Eigen::Index>(n)), mean, flags.ablate_neighbor_aware);
    if (!flags.ablate_pseudo_query) c += pseudo_query_embedding(P, c);
    idx.rows.row(static_cast<Eigen::Index>(n)) = c.transpose();
  }
  idx.norms = idx.rows.rowwise().norm();
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return idx.ids[a] < idx.ids[b]; });
  idx.id_rank.resize(g.size());
  for (std::size_t r = 0; r < order.size(); ++r) idx.id_rank[order[r]] = r;
  return idx;
}

/// Cosine of q against every row; zero-norm rows score 0.
inline Eigen::VectorXd score_all(const RetrievalIndex& idx, const Eigen::Ref<const Eigen::VectorXd>& q) {
  if (idx.size() == 0) throw InvalidArgument("retrieval index is empty");
  detail::check_size(q.size(), static_cast<std::size_t>(idx.rows.cols()), "query embedding");
  double qn = q.norm();
  if (qn == 0.0) throw InvalidArgument("query embedding has zero norm");
  Eigen::VectorXd s = idx.rows * q;
  for (Eigen::Index n = 0; n < s.size(); ++n) {
    s[n] = idx.norms[n] == 0.0 ? 0.0 : std::clamp(s[n] / (idx.norms[n] * qn), -1.0, 1.0);
  }
  return s;
}

/// Top k rows by score, ties by ascending id. `keep` filters rows.
inline std::vector<std::size_t> top_k_rows(const RetrievalIndex& idx, const Eigen::VectorXd& scores, std::size_t k,
                                           const std::function<bool(std::size_t)>& keep = nullptr) {
  std::vector<std::size_t> rows;
  rows.reserve(idx.size());
  for (std::size_t n = 0; n < idx.size(); ++n) {
    if (!keep || keep(n)) rows.push_back(n);
  }
  auto better = [&](std::size_t a, std::size_t b) {
    double sa = scores[static_cast<Eigen::Index>(a)], sb = scores[static_cast<Eigen::Index>(b)];
    if (sa != sb) return sa > sb;
    return idx.id_rank[a] < idx.id_rank[b];
  };
  k = std::min(k, rows.size());
  std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end(), better);
  rows.resize(k);
  return rows;
}

/// Exact top-k by cosine between W^q z + b^q and the index rows.
inline RetrievalResult retrieve(const RetrievalIndex& idx, const RetrieverParams& P,
                                const Eigen::Ref<const Eigen::VectorXd>& query_z, std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (idx.size() == 0) throw InvalidArgument("retrieval index is empty");
  if (idx.params_fingerprint != P.fingerprint()) {
    throw InvalidArgument("index was built from different retriever parameters");
  }
  Eigen::VectorXd scores = score_all(idx, query_embedding(P, query_z));
  RetrievalResult out;
  for (std::size_t n : top_k_rows(idx, scores, k)) out.push_back({idx.ids[n], scores[static_cast<Eigen::Index>(n)]});
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "CGRP", u16 version, u32 d, u32 d1, the parameter blocks as
// float32 in storage order, then a u64 config hash. Little-endian.
// Parameters are rounded to float32 on save.

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  RetrieverParams params;
  std::uint64_t config_hash = 0;
};

inline void write_checkpoint(std::ostream& out, const RetrieverParams& P, std::uint64_t config_hash) {
  binio::write_bytes(out, "CGRP");
  binio::write<std::uint16_t>(out, kCheckpointVersion);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(P.d()));
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(P.d1()));
  for (Eigen::Index i = 0; i < P.theta.size(); ++i) binio::write_f32(out, static_cast<float>(P.theta[i]));
  binio::write<std::uint64_t>(out, config_hash);
}

inline Checkpoint read_checkpoint(std::istream& in) {
  binio::expect_magic(in, "CGRP");
  auto version = binio::read<std::uint16_t>(in, "version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  auto d = binio::read<std::uint32_t>(in, "d");
  auto d1 = binio::read<std::uint32_t>(in, "d1");
  if (d == 0 || d1 == 0) throw FormatError("checkpoint has a zero dimension");
  Checkpoint ck{RetrieverParams(d, d1), 0};
  for (Eigen::Index i = 0; i < ck.params.theta.size(); ++i) {
    float v = binio::read_f32(in, "parameters");
    if (!std::isfinite(v)) throw FormatError("checkpoint holds a non-finite parameter");
    ck.params.theta[i] = v;
  }
  ck.config_hash = binio::read<std::uint64_t>(in, "config hash");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const RetrieverParams& P, std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_checkpoint(out, P, config_hash);
  if (!out) throw Error("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace citegraph
