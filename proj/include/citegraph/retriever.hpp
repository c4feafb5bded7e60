#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "citegraph/error.hpp"
#include "citegraph/random.hpp"

namespace citegraph {

/// Which parts of the candidate tower are switched off.
struct ScoringFlags {
  bool ablate_pseudo_query = false;    // score with c instead of c + p
  bool ablate_neighbor_aware = false;  // drop the neighbor-mean term of c

  bool operator==(const ScoringFlags&) const = default;
};

struct TrainConfig {
  std::size_t d1 = 0;  // 0 means "same as the embedding dimension"
  double learning_rate = 1e-3;
  int epochs_max = 500;
  int patience = 5;
  std::size_t num_negatives = 10;
  std::size_t max_neighbors = 10;
  double lambda_re = 1.0;
  std::uint64_t seed = 0;
  bool ablate_pseudo_query = false;
  bool ablate_neighbor_aware = false;
  bool infonce_include_positive = false;
  std::size_t batch_size = 1;  // anchors per Adam step

  ScoringFlags flags() const { return {ablate_pseudo_query, ablate_neighbor_aware}; }

  void validate(std::size_t d) const {
    if (epochs_max < 1) throw InvalidArgument("epochs_max must be >= 1");
    if (patience < 1) throw InvalidArgument("patience must be >= 1");
    if (num_negatives < 1) throw InvalidArgument("num_negatives must be >= 1");
    if (max_neighbors < 1) throw InvalidArgument("max_neighbors must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning_rate must be positive");
    if (!(lambda_re >= 0) || !std::isfinite(lambda_re)) throw InvalidArgument("lambda_re must be non-negative");
    // the reconstruction loss compares z (size d) with p (size d1)
    if (d1 != 0 && d1 != d) {
      throw InvalidArgument("d1 must equal the embedding dimension (" + std::to_string(d) + "), got " +
                            std::to_string(d1));
    }
  }

  /// Stable hash of every field, stored in checkpoints.
  std::uint64_t hash() const {
    std::string s = std::to_string(d1) + '|' + std::to_string(learning_rate) + '|' + std::to_string(epochs_max) +
                    '|' + std::to_string(patience) + '|' + std::to_string(num_negatives) + '|' +
                    std::to_string(max_neighbors) + '|' + std::to_string(lambda_re) + '|' + std::to_string(seed) +
                    '|' + std::to_string(ablate_pseudo_query) + std::to_string(ablate_neighbor_aware) +
                    std::to_string(infonce_include_positive) + '|' + std::to_string(batch_size);
    return fnv1a64(s);
  }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// All trainable values in one flat vector. Blocks, in storage order:
/// Wq (d1 x d), bq, Wc1 (d1 x d), Wc2 (d1 x d), bc, W1 (d1 x d1), b1,
/// W2 (d1 x d1), b2. Matrices are row-major.
class RetrieverParams {
 public:
  enum Block { kWq, kBq, kWc1, kWc2, kBc, kW1, kB1, kW2, kB2, kBlockCount };

  struct BlockShape {
    const char* name;
    std::size_t offset, rows, cols;
  };

  RetrieverParams() = default;
  RetrieverParams(std::size_t d, std::size_t d1) : d_(d), d1_(d1) {
    if (d == 0 || d1 == 0) throw InvalidArgument("retriever dimensions must be positive");
    theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(block(kB2).offset + d1));
  }

  std::size_t d() const { return d_; }
  std::size_t d1() const { return d1_; }

  BlockShape block(int b) const {
    static constexpr std::array<const char*, kBlockCount> names = {"Wq", "bq", "Wc1", "Wc2", "bc",
                                                                   "W1", "b1", "W2",  "b2"};
    const std::array<std::pair<std::size_t, std::size_t>, kBlockCount> shapes = {
        {{d1_, d_}, {d1_, 1}, {d1_, d_}, {d1_, d_}, {d1_, 1}, {d1_, d1_}, {d1_, 1}, {d1_, d1_}, {d1_, 1}}};
    std::size_t off = 0;
    for (int k = 0; k < b; ++k) off += shapes[k].first * shapes[k].second;
    return {names[b], off, shapes[b].first, shapes[b].second};
  }

  Eigen::Map<RowMatrix> mat(int b) {
    auto s = block(b);
    return {theta.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)};
  }
  Eigen::Map<const RowMatrix> mat(int b) const {
    auto s = block(b);
    return {theta.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)};
  }
  Eigen::Map<Eigen::VectorXd> vec(int b) {
    auto s = block(b);
    return {theta.data() + s.offset, static_cast<Eigen::Index>(s.rows)};
  }
  Eigen::Map<const Eigen::VectorXd> vec(int b) const {
    auto s = block(b);
    return {theta.data() + s.offset, static_cast<Eigen::Index>(s.rows)};
  }

  auto Wq() { return mat(kWq); }
  auto Wq() const { return mat(kWq); }
  auto bq() { return vec(kBq); }
  auto bq() const { return vec(kBq); }
  auto Wc1() { return mat(kWc1); }
  auto Wc1() const { return mat(kWc1); }
  auto Wc2() { return mat(kWc2); }
  auto Wc2() const { return mat(kWc2); }
  auto bc() { return vec(kBc); }
  auto bc() const { return vec(kBc); }
  auto W1() { return mat(kW1); }
  auto W1() const { return mat(kW1); }
  auto b1() { return vec(kB1); }
  auto b1() const { return vec(kB1); }
  auto W2() { return mat(kW2); }
  auto W2() const { return mat(kW2); }
  auto b2() { return vec(kB2); }
  auto b2() const { return vec(kB2); }

  /// Matrices uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
  static RetrieverParams initialize(std::size_t d, std::size_t d1, std::uint64_t seed) {
    RetrieverParams p(d, d1);
    Rng rng(derive_seed(seed, {0x1417u}));
    for (int b : {kWq, kWc1, kWc2, kW1, kW2}) {
      auto m = p.mat(b);
      double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
      }
    }
    return p;
  }

  /// FNV-1a over the raw parameter bytes and shape.
  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a64(std::to_string(d_) + "x" + std::to_string(d1_));
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(theta.data()),
                                    static_cast<std::size_t>(theta.size()) * sizeof(double)),
                   h);
  }

  bool operator==(const RetrieverParams& o) const {
    return d_ == o.d_ && d1_ == o.d1_ && theta.size() == o.theta.size() &&
           std::equal(theta.data(), theta.data() + theta.size(), o.theta.data());
  }

  Eigen::VectorXd theta;

 private:
  std::size_t d_ = 0;
  std::size_t d1_ = 0;
};

// ---------------------------------------------------------------------------
// Forward pass

namespace detail {

inline void check_size(Eigen::Index got, std::size_t want, const char* what) {
  if (static_cast<std::size_t>(got) != want) {
    throw InvalidArgument(std::string(what) + " has size " + std::to_string(got) + ", expected " +
                          std::to_string(want));
  }
}

}  // namespace detail

inline Eigen::VectorXd query_embedding(const RetrieverParams& P, const Eigen::Ref<const Eigen::VectorXd>& z) {
  detail::check_size(z.size(), P.d(), "query vector");
  return P.Wq() * z + P.bq();
}

/// Mean of the given columns of Z; zero when the list is empty.
inline Eigen::VectorXd neighbor_mean(const Eigen::MatrixXd& Z, const std::vector<std::size_t>& nodes) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(Z.rows());
  if (nodes.empty()) return m;
  for (std::size_t k : nodes) m += Z.col(static_cast<Eigen::Index>(k));
  return m / static_cast<double>(nodes.size());
}

/// c = Wc1 z + Wc2 mean + bc, where `mean` is already averaged.
inline Eigen::VectorXd candidate_from_mean(const RetrieverParams& P, const Eigen::Ref<const Eigen::VectorXd>& z,
                                           const Eigen::Ref<const Eigen::VectorXd>& mean,
                                           bool ablate_neighbor_aware = false) {
  detail::check_size(z.size(), P.d(), "candidate vector");
  Eigen::VectorXd c = P.Wc1() * z + P.bc();
  if (!ablate_neighbor_aware) {
    detail::check_size(mean.size(), P.d(), "neighbor mean");
    c.noalias() += P.Wc2() * mean;
  }
  return c;
}

inline Eigen::VectorXd candidate_embedding(const RetrieverParams& P, const Eigen::Ref<const Eigen::VectorXd>& z,
                                           const std::vector<Eigen::VectorXd>& neighbor_zs,
                                           bool ablate_neighbor_aware = false) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(P.d()));
  for (const auto& v : neighbor_zs) {
    detail::check_size(v.size(), P.d(), "neighbor vector");
    mean += v;
  }
  if (!neighbor_zs.empty()) mean /= static_cast<double>(neighbor_zs.size());
  return candidate_from_mean(P, z, mean, ablate_neighbor_aware);
}

/// p = W2 relu(W1 c + b1) + b2.
inline Eigen::VectorXd pseudo_query_embedding(const RetrieverParams& P, const Eigen::Ref<const Eigen::VectorXd>& c) {
  detail::check_size(c.size(), P.d1(), "candidate embedding");
  Eigen::VectorXd h = (P.W1() * c + P.b1()).cwiseMax(0.0);
  return P.W2() * h + P.b2();
}

inline double cosine(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine of vectors with different sizes");
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine similarity of a zero-norm vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

/// cos(q, c + p), or cos(q, c) when the pseudo-query is ablated.
inline double similarity(const Eigen::Ref<const Eigen::VectorXd>& q, const Eigen::Ref<const Eigen::VectorXd>& c,
                         const Eigen::Ref<const Eigen::VectorXd>& p, bool ablate_pseudo_query = false) {
  if (ablate_pseudo_query) return cosine(q, c);
  if (c.size() != p.size()) throw InvalidArgument("candidate and pseudo-query sizes differ");
  return cosine(q, c + p);
}

// ---------------------------------------------------------------------------
// Losses

/// Sum over pairs of ||z_k - p_k||_1.
inline double loss_regularization(const std::vector<Eigen::VectorXd>& z_sources,
                                  const std::vector<Eigen::VectorXd>& pseudo) {
  if (z_sources.size() != pseudo.size()) throw InvalidArgument("regularization lists are not aligned");
  double total = 0.0;
  for (std::size_t k = 0; k < z_sources.size(); ++k) {
    if (z_sources[k].size() != pseudo[k].size()) {
      throw InvalidArgument("regularization pair " + std::to_string(k) + " has mismatched dimensions");
    }
    total += (z_sources[k] - pseudo[k]).lpNorm<1>();
  }
  return total;
}

namespace detail {

inline double log_sum_exp(const std::vector<double>& xs) {
  double mx = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

/// Contrastive loss for one anchor:
///   -(1/P) sum_j log( exp(s_j) / sum_neg exp(s_n) )
/// With include_positive the denominator also holds exp(s_j).
inline double loss_infonce(const std::vector<double>& sim_pos, const std::vector<double>& sim_neg,
                           bool include_positive = false) {
  if (sim_pos.empty()) throw InvalidArgument("InfoNCE needs at least one positive");
  if (sim_neg.empty()) throw InvalidArgument("InfoNCE needs at least one negative");
  double lse_neg = detail::log_sum_exp(sim_neg);
  double total = 0.0;
  for (double s : sim_pos) {
    double denom = include_positive ? detail::log_sum_exp({s, lse_neg}) : lse_neg;
    total += denom - s;
  }
  return total / static_cast<double>(sim_pos.size());
}

// ---------------------------------------------------------------------------
// Batches and gradients

/// A scored candidate: its node and the neighbors averaged into it.
struct CandidateSample {
  std::size_t node = 0;
  std::vector<std::size_t> neighbors;
};

struct AnchorSample {
  std::size_t anchor = 0;
  std::vector<CandidateSample> positives;
  std::vector<CandidateSample> negatives;
};

using Batch = std::vector<AnchorSample>;

struct LossOptions {
  double lambda_re = 1.0;
  bool include_positive = false;
  ScoringFlags flags;

  static LossOptions from(const TrainConfig& c) { return {c.lambda_re, c.infonce_include_positive, c.flags()}; }
};

struct LossResult {
  double loss = 0.0;  // nce + lambda_re * re
  double nce = 0.0;
  double re = 0.0;
  Eigen::VectorXd grad;  // empty unless requested
};

namespace detail {

struct CandidateForward {
  Eigen::VectorXd mean, c, h, p, u;
  double unorm = 0.0;
  double s = 0.0;
};

inline CandidateForward forward_candidate(const RetrieverParams& P, const Eigen::MatrixXd& Z,
                                          const CandidateSample& cand, const ScoringFlags& flags,
                                          const Eigen::VectorXd& q, double qnorm) {
  CandidateForward f;
  auto z = Z.col(static_cast<Eigen::Index>(cand.node));
  f.mean = flags.ablate_neighbor_aware ? Eigen::VectorXd::Zero(Z.rows()) : neighbor_mean(Z, cand.neighbors);
  f.c = candidate_from_mean(P, z, f.mean, flags.ablate_neighbor_aware);
  if (flags.ablate_pseudo_query) {
    f.u = f.c;
  } else {
    f.h = P.W1() * f.c + P.b1();
    f.p = P.W2() * f.h.cwiseMax(0.0) + P.b2();
    f.u = f.c + f.p;
  }
  f.unorm = f.u.norm();
  if (f.unorm == 0.0 || qnorm == 0.0) {
    throw Error("degenerate embedding: zero norm while scoring candidate node " + std::to_string(cand.node));
  }
  f.s = q.dot(f.u) / (qnorm * f.unorm);
  return f;
}

inline double sign0(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

}  // namespace detail

/// Total loss of a batch: sum over anchors of InfoNCE plus lambda_re times
/// the reconstruction loss over (anchor, positive) pairs. The
/// reconstruction term is absent when the pseudo-query is ablated.
/// Z holds one embedding per column, indexed by node.
inline LossResult evaluate_batch(const RetrieverParams& P, const Eigen::MatrixXd& Z, const Batch& batch,
                                 const LossOptions& opt, bool want_grad) {
  detail::check_size(Z.rows(), P.d(), "embedding matrix rows");
  LossResult res;
  RetrieverParams G;
  if (want_grad) G = RetrieverParams(P.d(), P.d1());
  const bool use_pseudo = !opt.flags.ablate_pseudo_query;

  for (const auto& a : batch) {
    if (a.positives.empty() || a.negatives.empty()) {
      throw InvalidArgument("anchor " + std::to_string(a.anchor) + " needs positives and negatives");
    }
    auto zi = Z.col(static_cast<Eigen::Index>(a.anchor));
    Eigen::VectorXd q = P.Wq() * zi + P.bq();
    double qnorm = q.norm();

    std::vector<detail::CandidateForward> pos, neg;
    std::vector<double> sp, sn;
    for (const auto& c : a.positives) {
      pos.push_back(detail::forward_candidate(P, Z, c, opt.flags, q, qnorm));
      sp.push_back(pos.back().s);
    }
    for (const auto& c : a.negatives) {
      neg.push_back(detail::forward_candidate(P, Z, c, opt.flags, q, qnorm));
      sn.push_back(neg.back().s);
    }
    double nce = loss_infonce(sp, sn, opt.include_positive);
    double re = 0.0;
    if (use_pseudo) {
      for (const auto& f : pos) re += (zi - f.p).lpNorm<1>();
    }
    if (!std::isfinite(nce) || !std::isfinite(re)) {
      throw Error("non-finite loss at anchor node " + std::to_string(a.anchor));
    }
    res.nce += nce;
    res.re += re;
    if (!want_grad) continue;

    // dL/ds for every candidate
    const double inv_p = 1.0 / static_cast<double>(sp.size());
    std::vector<double> gp(sp.size()), gn(sn.size(), 0.0);
    double lse_neg = detail::log_sum_exp(sn);
    if (!opt.include_positive) {
      for (auto& g : gp) g = -inv_p;
      for (std::size_t n = 0; n < sn.size(); ++n) gn[n] = std::exp(sn[n] - lse_neg);
    } else {
      for (std::size_t j = 0; j < sp.size(); ++j) {
        double lse = detail::log_sum_exp({sp[j], lse_neg});
        gp[j] = inv_p * (std::exp(sp[j] - lse) - 1.0);
        for (std::size_t n = 0; n < sn.size(); ++n) gn[n] += inv_p * std::exp(sn[n] - lse);
      }
    }

    Eigen::VectorXd gq = Eigen::VectorXd::Zero(q.size());
    auto backprop = [&](const CandidateSample& cand, const detail::CandidateForward& f, double ds, bool positive) {
      // s = q.u / (|q||u|)
      Eigen::VectorXd gu = ds * (q / (qnorm * f.unorm) - f.s * f.u / (f.unorm * f.unorm));
      gq += ds * (f.u / (qnorm * f.unorm) - f.s * q / (qnorm * qnorm));
      Eigen::VectorXd gc = gu;
      if (use_pseudo) {
        Eigen::VectorXd gpv = gu;
        if (positive && opt.lambda_re != 0.0) {
          // d/dp ||z - p||_1 = -sign(z - p)
          gpv -= opt.lambda_re * (zi - f.p).unaryExpr(&detail::sign0);
        }
        Eigen::VectorXd act = f.h.cwiseMax(0.0);
        G.W2().noalias() += gpv * act.transpose();
        G.b2() += gpv;
        Eigen::VectorXd gh = (P.W2().transpose() * gpv).cwiseProduct((f.h.array() > 0.0).cast<double>().matrix());
        G.W1().noalias() += gh * f.c.transpose();
        G.b1() += gh;
        gc.noalias() += P.W1().transpose() * gh;
      }
      G.Wc1().noalias() += gc * Z.col(static_cast<Eigen::Index>(cand.node)).transpose();
      if (!opt.flags.ablate_neighbor_aware) G.Wc2().noalias() += gc * f.mean.transpose();
      G.bc() += gc;
    };
    for (std::size_t j = 0; j < pos.size(); ++j) backprop(a.positives[j], pos[j], gp[j], true);
    for (std::size_t n = 0; n < neg.size(); ++n) backprop(a.negatives[n], neg[n], gn[n], false);
    G.Wq().noalias() += gq * zi.transpose();
    G.bq() += gq;
  }
  res.loss = res.nce + opt.lambda_re * res.re;
  if (want_grad) {
    if (!G.theta.allFinite()) throw Error("non-finite gradient in batch starting at anchor node " +
                                          std::to_string(batch.empty() ? 0 : batch.front().anchor));
    res.grad = std::move(G.theta);
  }
  return res;
}

inline double total_loss(const RetrieverParams& P, const Eigen::MatrixXd& Z, const Batch& batch,
                         const LossOptions& opt) {
  return evaluate_batch(P, Z, batch, opt, false).loss;
}

inline Eigen::VectorXd gradients(const RetrieverParams& P, const Eigen::MatrixXd& Z, const Batch& batch,
                                 const LossOptions& opt) {
  return evaluate_batch(P, Z, batch, opt, true).grad;
}

}  // namespace citegraph
