#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "citegraph/error.hpp"
#include "citegraph/graph.hpp"
#include "citegraph/index.hpp"
#include "citegraph/random.hpp"
#include "citegraph/retriever.hpp"

namespace citegraph {

class Adam {
 public:
  Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& g) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * g;
    v_ = b2_ * v_ + (1.0 - b2_) * g.cwiseProduct(g);
    double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    theta.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

 private:
  double lr_, b1_, b2_, eps_;
  Eigen::VectorXd m_, v_;
  long long t_ = 0;
};

/// Queries with their relevant sets, both as node indices.
struct HeldOutQueries {
  std::vector<std::size_t> queries;
  std::vector<std::vector<std::size_t>> relevant;  // sorted

  bool empty() const { return queries.empty(); }
};

/// Every endpoint of the given edges, relevant = its neighbors via those edges.
inline HeldOutQueries queries_from_edges(const CitationGraph& g, const std::vector<std::size_t>& edges) {
  Adjacency adj = adjacency_from_edges(g, edges);
  HeldOutQueries out;
  for (std::size_t i = 0; i < adj.size(); ++i) {
    if (adj[i].empty()) continue;
    out.queries.push_back(i);
    out.relevant.push_back(adj[i]);
  }
  return out;
}

/// Mean P@k over queries. Each query ranks every node except itself and its
/// neighbors in `exclude` (when given).
inline double mean_precision_at_k(const RetrievalIndex& idx, const RetrieverParams& P, const Eigen::MatrixXd& Z,
                                  const HeldOutQueries& held, std::size_t k, const Adjacency* exclude = nullptr) {
  if (held.empty()) throw InvalidArgument("no held-out queries");
  if (k < 1) throw InvalidArgument("k must be >= 1");
  double total = 0.0;
  for (std::size_t t = 0; t < held.queries.size(); ++t) {
    std::size_t i = held.queries[t];
    Eigen::VectorXd scores = score_all(idx, query_embedding(P, Z.col(static_cast<Eigen::Index>(i))));
    auto top = top_k_rows(idx, scores, k, [&](std::size_t n) {
      return n != i && (exclude == nullptr || !adjacent(*exclude, i, n));
    });
    std::size_t hits = 0;
    for (std::size_t n : top) {
      if (std::binary_search(held.relevant[t].begin(), held.relevant[t].end(), n)) ++hits;
    }
    total += static_cast<double>(hits) / static_cast<double>(k);
  }
  return total / static_cast<double>(held.queries.size());
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_p_at_5;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  RetrieverParams params;  // best epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool stopped_early = false;
};

/// Replaces the validation score of an epoch; higher is better.
using ValidationHook = std::function<double(int epoch, const RetrieverParams&)>;

namespace detail {

inline std::vector<std::size_t> capped(std::vector<std::size_t> nodes, std::size_t cap, Rng& rng) {
  if (nodes.size() <= cap) return nodes;
  auto out = sample_without_replacement(std::move(nodes), cap, rng);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Anchors, positives and negatives for one epoch. Positives are the
/// anchor's train neighbors; a positive's own neighbor list leaves the
/// anchor out, matching what a held-out candidate looks like at query time.
inline std::vector<Batch> epoch_batches(const Adjacency& train_adj, const std::vector<std::size_t>& anchors,
                                        const TrainConfig& cfg, int epoch) {
  Rng rng(derive_seed(cfg.seed, {0xe90cu, static_cast<std::uint64_t>(epoch)}));
  std::vector<std::size_t> order = anchors;
  shuffle(order, rng);
  std::vector<Batch> batches;
  Batch current;
  for (std::size_t i : order) {
    AnchorSample a;
    a.anchor = i;
    for (std::size_t j : detail::capped(train_adj[i], cfg.max_neighbors, rng)) {
      std::vector<std::size_t> nb;
      for (std::size_t k : train_adj[j]) {
        if (k != i) nb.push_back(k);
      }
      a.positives.push_back({j, detail::capped(std::move(nb), cfg.max_neighbors, rng)});
    }
    std::size_t pool = train_adj.size() - 1 - train_adj[i].size();
    std::size_t m = std::min(cfg.num_negatives, pool);
    if (m == 0) continue;
    for (std::size_t n : sample_negatives(train_adj, i, m, rng)) {
      a.negatives.push_back({n, detail::capped(train_adj[n], cfg.max_neighbors, rng)});
    }
    current.push_back(std::move(a));
    if (current.size() == cfg.batch_size) {
      batches.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

/// Trains on split.train. After every epoch the model is scored by P@5 on
/// the validation edges (or by `hook`, or by -train_loss when there are no
/// validation edges); the best-scoring parameters are returned and training
/// stops after `patience` epochs without strict improvement.
inline TrainResult train(const CitationGraph& g, const Eigen::MatrixXd& Z, const SplitAssignment& split,
                         const TrainConfig& cfg, const ValidationHook& hook = nullptr) {
  const std::size_t d = static_cast<std::size_t>(Z.rows());
  cfg.validate(d);
  detail::check_size(Z.cols(), g.size(), "embedding matrix columns");
  if (!Z.allFinite()) throw InvalidArgument("embedding matrix has non-finite entries");
  if (split.train.empty()) throw InvalidArgument("no training edges");

  const Adjacency train_adj = adjacency_from_edges(g, split.train);
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < train_adj.size(); ++i) {
    if (!train_adj[i].empty()) anchors.push_back(i);
  }
  const HeldOutQueries val = queries_from_edges(g, split.val);
  const LossOptions opt = LossOptions::from(cfg);

  TrainResult res;
  RetrieverParams P = RetrieverParams::initialize(d, cfg.d1 == 0 ? d : cfg.d1, cfg.seed);
  Adam adam(P.theta.size(), cfg.learning_rate);
  res.params = P;
  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    try {
      for (const auto& batch : epoch_batches(train_adj, anchors, cfg, epoch)) {
        LossResult r = evaluate_batch(P, Z, batch, opt, true);
        epoch_loss += r.loss;
        seen += batch.size();
        adam.step(P.theta, r.grad);
      }
    } catch (const Error& e) {
      throw Error("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (seen == 0) throw InvalidArgument("no anchor has both positives and negatives");
    double train_loss = epoch_loss / static_cast<double>(seen);
    if (!std::isfinite(train_loss) || !P.theta.allFinite()) {
      throw Error("epoch " + std::to_string(epoch) + ": training loss is not finite");
    }

    EpochRecord rec{epoch, train_loss, std::nullopt};
    double score;
    if (hook) {
      score = hook(epoch, P);
      rec.val_p_at_5 = score;
    } else if (!val.empty()) {
      RetrievalIndex idx = build_index(P, g, Z, train_adj, cfg.flags());
      score = mean_precision_at_k(idx, P, Z, val, 5, &train_adj);
      rec.val_p_at_5 = score;
    } else {
      score = -train_loss;
    }
    res.history.push_back(rec);

    if (score > best) {
      best = score;
      res.params = P;
      res.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      res.stopped_early = true;
      break;
    }
  }
  return res;
}

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"val_p_at_5", r.val_p_at_5 ? nlohmann::json(*r.val_p_at_5) : nlohmann::json(nullptr)}};
}

inline void save_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : history) out << to_json(r).dump() << '\n';
}

}  // namespace citegraph
