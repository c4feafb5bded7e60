#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include "citegraph/embedding.hpp"
#include "citegraph/error.hpp"
#include "citegraph/pipeline.hpp"

namespace citegraph {

namespace detail {

/// Splits "http://host:port/prefix" into the origin and a path prefix
/// without a trailing slash.
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw InvalidArgument("endpoint needs a scheme: " + url);
  auto slash = url.find('/', scheme + 3);
  std::string origin = slash == std::string::npos ? url : url.substr(0, slash);
  std::string prefix = slash == std::string::npos ? "" : url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {origin, prefix};
}

template <class ErrorT>
nlohmann::json parse_response(const httplib::Result& res, const std::string& what) {
  if (!res) throw ErrorT(what + ": " + httplib::to_string(res.error()));
  if (res->status != 200) throw ErrorT(what + ": HTTP " + std::to_string(res->status) + " " + res->body);
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw ErrorT(what + ": malformed JSON: " + e.what());
  }
}

}  // namespace detail

/// Embeddings from a remote service: POST /embed {"texts": [...]} returns
/// {"dim": d, "vectors": [[...], ...]}; GET /health returns {"status": "ok", "dim": d}.
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(const std::string& url, std::chrono::seconds timeout = std::chrono::seconds(120)) {
    auto [origin, prefix] = detail::split_url(url);
    client_ = std::make_unique<httplib::Client>(origin);
    client_->set_read_timeout(timeout);
    client_->set_connection_timeout(std::chrono::seconds(10));
    prefix_ = prefix;
    auto health = detail::parse_response<FormatError>(client_->Get(prefix_ + "/health"), "embedding health check");
    if (health.value("status", "") != "ok" || !health.contains("dim")) {
      throw FormatError("embedding health check: unexpected body " + health.dump());
    }
    dim_ = health.at("dim").get<std::size_t>();
    if (dim_ == 0) throw FormatError("embedding service reports dim 0");
  }

  std::size_t dim() const override { return dim_; }

  Eigen::VectorXd embed(const std::string& text) override { return embed_batch({text}).front(); }

  std::vector<Eigen::VectorXd> embed_batch(const std::vector<std::string>& texts) override {
    if (texts.empty()) return {};
    nlohmann::json body = {{"texts", texts}};
    nlohmann::json j;
    {
      std::lock_guard lock(mu_);
      j = detail::parse_response<FormatError>(client_->Post(prefix_ + "/embed", body.dump(), "application/json"),
                                              "embedding request");
    }
    try {
      if (j.at("dim").get<std::size_t>() != dim_) throw FormatError("embedding response dim changed");
      const auto& vectors = j.at("vectors");
      if (vectors.size() != texts.size()) throw FormatError("embedding response has the wrong number of vectors");
      std::vector<Eigen::VectorXd> out;
      out.reserve(texts.size());
      for (const auto& v : vectors) {
        auto values = v.get<std::vector<double>>();
        if (values.size() != dim_) throw FormatError("embedding vector has the wrong length");
        out.push_back(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
      }
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("embedding response: ") + e.what());
    }
  }

 private:
  std::unique_ptr<httplib::Client> client_;
  std::string prefix_;
  std::size_t dim_ = 0;
  std::mutex mu_;
};

/// POST /complete {"prompt", "max_tokens", "temperature", "top_p",
/// "repetition_penalty"} returns {"text": ...}.
class HttpCompletionClient : public CompletionClient {
 public:
  explicit HttpCompletionClient(const std::string& url, std::chrono::seconds timeout = std::chrono::seconds(300))
      : url_(url), timeout_(timeout) {
    auto parts = detail::split_url(url);
    origin_ = parts.first;
    prefix_ = parts.second;
  }

  std::string complete(const std::string& prompt, const GenerationParams& params) override {
    httplib::Client client(origin_);
    client.set_read_timeout(timeout_);
    client.set_connection_timeout(std::chrono::seconds(10));
    nlohmann::json body = to_json(params);
    body["prompt"] = prompt;
    auto j = detail::parse_response<CompletionError>(client.Post(prefix_ + "/complete", body.dump(), "application/json"),
                                                     "completion request to " + url_);
    if (!j.contains("text") || !j.at("text").is_string()) throw CompletionError("completion response lacks \"text\"");
    return j.at("text").get<std::string>();
  }

 private:
  std::string url_;
  std::string origin_;
  std::string prefix_;
  std::chrono::seconds timeout_;
};

}  // namespace citegraph
