#pragma once

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "citegraph/error.hpp"

namespace citegraph {

struct MetricReport {
  std::string name;
  double value = 0.0;
  std::size_t support = 0;
  nlohmann::json config = nlohmann::json::object();
};

inline nlohmann::json to_json(const MetricReport& r) {
  return {{"name", r.name}, {"value", r.value}, {"support", r.support}, {"config", r.config}};
}

inline double precision_at_k(const std::vector<std::string>& ranked, const std::set<std::string>& relevant,
                             std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (ranked.empty()) throw InvalidArgument("precision@k of an empty ranking");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) hits += relevant.contains(ranked[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

inline int hits_at_k(const std::vector<std::string>& ranked, const std::string& true_id, std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
    if (ranked[i] == true_id) return 1;
  }
  return 0;
}

inline double accuracy(const std::vector<bool>& preds, const std::vector<bool>& labels) {
  if (preds.size() != labels.size()) throw InvalidArgument("accuracy needs equally long lists");
  if (preds.empty()) throw InvalidArgument("accuracy of an empty list");
  std::size_t same = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) same += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(preds.size());
}

inline std::vector<std::string> lower_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    for (auto& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(std::move(tok));
  }
  return out;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Word-level ROUGE-L on lowercased whitespace tokens.
inline RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
  auto c = lower_tokens(candidate), r = lower_tokens(reference);
  if (c.empty() || r.empty()) throw InvalidArgument("ROUGE-L needs non-empty candidate and reference");
  double lcs = static_cast<double>(lcs_length(c, r));
  RougeScore s;
  s.precision = lcs / static_cast<double>(c.size());
  s.recall = lcs / static_cast<double>(r.size());
  s.f1 = lcs == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

/// Bracketed ids or keys without whitespace, e.g. [2402.07245].
inline const std::string& default_marker_pattern() {
  static const std::string p = R"(\[[^\[\]\s]+\])";
  return p;
}

struct RelatedWorkStats {
  double L = 0.0;    // words
  double NP = 0.0;   // paragraphs
  double NC = 0.0;   // citation markers
  double RPC = 0.0;  // fraction of paragraphs with a marker
};

inline nlohmann::json to_json(const RelatedWorkStats& s) {
  return {{"L", s.L}, {"NP", s.NP}, {"NC", s.NC}, {"RPC", s.RPC}};
}

/// Paragraphs are separated by one or more blank lines.
inline std::vector<std::string> split_paragraphs(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  std::istringstream in{std::string(text)};
  std::string line;
  auto flush = [&] {
    if (!current.empty()) out.push_back(current);
    current.clear();
  };
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\f\v") == std::string::npos) {
      flush();
      continue;
    }
    if (!current.empty()) current += '\n';
    current += line;
  }
  flush();
  return out;
}

inline RelatedWorkStats related_work_stats(std::string_view text,
                                           const std::string& marker_pattern = default_marker_pattern()) {
  auto paragraphs = split_paragraphs(text);
  if (paragraphs.empty()) throw InvalidArgument("related-work statistics of empty text");
  const std::regex marker(marker_pattern);
  RelatedWorkStats s;
  s.L = static_cast<double>(lower_tokens(text).size());
  s.NP = static_cast<double>(paragraphs.size());
  std::size_t cited = 0;
  for (const auto& p : paragraphs) {
    auto n = std::distance(std::sregex_iterator(p.begin(), p.end(), marker), std::sregex_iterator());
    s.NC += static_cast<double>(n);
    if (n > 0) ++cited;
  }
  s.RPC = static_cast<double>(cited) / s.NP;
  return s;
}

/// Field-wise mean, the form of a per-dataset statistics row.
inline RelatedWorkStats mean_stats(const std::vector<RelatedWorkStats>& all) {
  if (all.empty()) throw InvalidArgument("no texts to aggregate");
  RelatedWorkStats m;
  for (const auto& s : all) {
    m.L += s.L;
    m.NP += s.NP;
    m.NC += s.NC;
    m.RPC += s.RPC;
  }
  double n = static_cast<double>(all.size());
  return {m.L / n, m.NP / n, m.NC / n, m.RPC / n};
}

}  // namespace citegraph
