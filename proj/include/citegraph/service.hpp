#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <semaphore>
#include <sstream>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include "citegraph/embedding.hpp"
#include "citegraph/error.hpp"
#include "citegraph/graph.hpp"
#include "citegraph/http_clients.hpp"
#include "citegraph/index.hpp"
#include "citegraph/instructions.hpp"
#include "citegraph/pipeline.hpp"

namespace citegraph {

struct ServiceConfig {
  std::filesystem::path graph_path;
  std::filesystem::path embeddings_path;
  std::filesystem::path checkpoint_path;
  std::size_t k_default = 10;
  std::optional<std::string> client_endpoint;  // completion service URL
  std::optional<std::filesystem::path> script_path;  // ScriptedClient JSON, used when no endpoint is set
  std::optional<std::string> embed_endpoint;  // embedding service URL; the stub encoder otherwise
  std::string bind_address = "127.0.0.1:8080";
  std::size_t max_inflight_completions = 4;

  void set(const std::string& key, const std::string& value) {
    try {
      if (key == "graph_path") {
        graph_path = value;
      } else if (key == "embeddings_path") {
        embeddings_path = value;
      } else if (key == "checkpoint_path") {
        checkpoint_path = value;
      } else if (key == "k_default") {
        k_default = std::stoul(value);
      } else if (key == "client_endpoint") {
        client_endpoint = value;
      } else if (key == "script_path") {
        script_path = value;
      } else if (key == "embed_endpoint") {
        embed_endpoint = value;
      } else if (key == "bind_address") {
        bind_address = value;
      } else if (key == "max_inflight_completions") {
        max_inflight_completions = std::stoul(value);
      } else {
        throw InvalidArgument("unknown config key: " + key);
      }
    } catch (const std::logic_error&) {
      throw InvalidArgument("bad value for " + key + ": " + value);
    }
  }

  /// JSON object or key=value lines ('#' starts a comment).
  static ServiceConfig parse(const std::string& text) {
    ServiceConfig c;
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
      }
      for (const auto& [k, v] : j.items()) c.set(k, v.is_string() ? v.get<std::string>() : v.dump());
      return c;
    }
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto b = line.find_first_not_of(" \t\r");
      if (b == std::string::npos) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key=value");
      auto trim = [](std::string s) {
        auto l = s.find_first_not_of(" \t\r");
        auto r = s.find_last_not_of(" \t\r");
        return l == std::string::npos ? std::string() : s.substr(l, r - l + 1);
      };
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
  }

  static ServiceConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  /// CITEGRAPH_<KEY> variables override file values.
  void apply_env() {
    for (const char* key : {"graph_path", "embeddings_path", "checkpoint_path", "k_default", "client_endpoint",
                            "script_path", "embed_endpoint", "bind_address", "max_inflight_completions"}) {
      std::string var = "CITEGRAPH_";
      for (const char* p = key; *p; ++p) var += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
      if (const char* v = std::getenv(var.c_str())) set(key, v);
    }
  }

  void validate() const {
    if (k_default < 1) throw InvalidArgument("k_default must be >= 1");
    if (max_inflight_completions < 1) throw InvalidArgument("max_inflight_completions must be >= 1");
    for (const auto& p : {graph_path, embeddings_path, checkpoint_path}) {
      if (p.empty() || !std::filesystem::exists(p)) throw NotFound("missing artifact: " + p.string());
    }
    if (script_path && !std::filesystem::exists(*script_path)) throw NotFound("missing script: " + script_path->string());
  }

  std::pair<std::string, int> host_port() const {
    auto colon = bind_address.rfind(':');
    if (colon == std::string::npos) throw InvalidArgument("bind_address must be host:port");
    try {
      return {bind_address.substr(0, colon), std::stoi(bind_address.substr(colon + 1))};
    } catch (const std::logic_error&) {
      throw InvalidArgument("bad port in bind_address: " + bind_address);
    }
  }
};

/// Graph, embeddings, parameters and the candidate index, loaded once and
/// never modified. The CLI and the service both score through this.
struct Artifacts {
  CitationGraph graph;
  Eigen::MatrixXd Z;
  RetrieverParams params;
  RetrievalIndex index;
  std::unique_ptr<EmbeddingProvider> provider;

  RetrievalContext context() const { return {graph, params, index, *provider}; }
};

/// Queries are embedded with the stub encoder at the table's dimension
/// unless an embedding endpoint is given. The index uses every graph edge.
inline Artifacts load_artifacts(const std::filesystem::path& graph_dir, const std::filesystem::path& embeddings,
                                const std::filesystem::path& checkpoint,
                                const std::optional<std::string>& embed_endpoint = std::nullopt) {
  CitationGraph g = load_graph(graph_dir);
  EmbeddingTable table = load_embeddings(embeddings);
  Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.params.d() != table.dim()) {
    throw InvalidArgument("checkpoint dimension " + std::to_string(ck.params.d()) + " does not match embeddings " +
                          std::to_string(table.dim()));
  }
  Eigen::MatrixXd Z = embedding_matrix(table, g);
  std::unique_ptr<EmbeddingProvider> provider;
  if (embed_endpoint) {
    provider = std::make_unique<HttpEmbeddingProvider>(*embed_endpoint);
    if (provider->dim() != table.dim()) throw InvalidArgument("embedding service dimension does not match the table");
  } else {
    provider = std::make_unique<StubProvider>(table.dim());
  }
  RetrievalIndex idx = build_index(ck.params, g, Z, g.adjacency());
  return {std::move(g), std::move(Z), std::move(ck.params), std::move(idx), std::move(provider)};
}

inline nlohmann::json to_json(const RetrievalResult& r) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : r) out.push_back({{"id", s.id}, {"score", s.score}});
  return out;
}

struct Response {
  int status = 200;
  nlohmann::json body;
};

/// Request handling over immutable artifacts. handle() is independent of
/// the HTTP server so it can be exercised directly.
class Service {
 public:
  Service(Artifacts artifacts, std::unique_ptr<CompletionClient> client, std::size_t k_default,
          std::size_t max_inflight)
      : art_(std::move(artifacts)), client_(std::move(client)), k_default_(k_default),
        inflight_(static_cast<std::ptrdiff_t>(max_inflight)) {}

  static std::unique_ptr<Service> from_config(const ServiceConfig& cfg) {
    cfg.validate();
    Artifacts art = load_artifacts(cfg.graph_path, cfg.embeddings_path, cfg.checkpoint_path, cfg.embed_endpoint);
    std::unique_ptr<CompletionClient> client;
    if (cfg.client_endpoint) {
      client = std::make_unique<HttpCompletionClient>(*cfg.client_endpoint);
    } else if (cfg.script_path) {
      client = std::make_unique<ScriptedClient>(ScriptedClient::from_file(*cfg.script_path));
    }
    return std::make_unique<Service>(std::move(art), std::move(client), cfg.k_default, cfg.max_inflight_completions);
  }

  const Artifacts& artifacts() const { return art_; }

  Response handle(const std::string& method, const std::string& path, const std::string& body) {
    try {
      return route(method, path, body);
    } catch (const NotFound& e) {
      return {404, {{"error", e.what()}}};
    } catch (const InvalidArgument& e) {
      return {400, {{"error", e.what()}}};
    } catch (const nlohmann::json::exception& e) {
      return {400, {{"error", e.what()}}};
    } catch (const CompletionError& e) {
      return {502, {{"error", e.what()}}};
    } catch (const std::exception& e) {
      return {500, {{"error", e.what()}}};
    }
  }

  /// Binds and serves until stop(). Throws if the address is unavailable.
  void serve(const std::string& host, int port, const std::function<void(int)>& on_ready = {}) {
    server_ = std::make_unique<httplib::Server>();
    auto adapt = [this](const httplib::Request& req, httplib::Response& res) {
      Response r = handle(req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server_->Get(".*", adapt);
    server_->Post(".*", adapt);
    // The library default enables SO_REUSEPORT, which would let a second
    // server silently share a busy port.
    server_->set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    int bound = port;
    if (port == 0) {
      bound = server_->bind_to_any_port(host);
      if (bound < 0) throw Error("cannot bind " + host);
    } else if (!server_->bind_to_port(host, port)) {
      throw Error("cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
    }
    if (on_ready) on_ready(bound);
    if (!server_->listen_after_bind()) throw Error("server stopped with an error");
  }

  void stop() {
    if (server_) server_->stop();
  }

 private:
  static nlohmann::json parse_body(const std::string& body) {
    if (body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(body);
    if (!j.is_object()) throw InvalidArgument("request body must be a JSON object");
    return j;
  }

  std::size_t k_from(const nlohmann::json& j) const {
    if (!j.contains("k")) return k_default_;
    if (!j.at("k").is_number_integer() || j.at("k").get<long long>() < 0) {
      throw InvalidArgument("k must be a non-negative integer");
    }
    return j.at("k").get<std::size_t>();
  }

  CompletionClient& client() {
    if (!client_) throw InvalidArgument("no completion client configured");
    return *client_;
  }

  template <class F>
  auto with_completion_slot(F&& fn) {
    inflight_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{inflight_};
    return fn();
  }

  Response route(const std::string& method, const std::string& path, const std::string& body) {
    if (method == "GET" && path == "/health") {
      return {200, {{"status", "ok"}, {"papers", art_.graph.size()}, {"edges", art_.graph.edges().size()}}};
    }
    if (method == "GET" && path.starts_with("/papers/")) {
      std::string id = path.substr(8);
      auto j = to_json(art_.graph.paper(art_.graph.index_of(id)));
      j["neighbors"] = neighbors(art_.graph, id);
      return {200, j};
    }
    if (method == "POST" && path == "/retrieve") {
      auto j = parse_body(body);
      if (!j.contains("query") || !j.at("query").is_string()) throw InvalidArgument("\"query\" must be a string");
      std::size_t k = k_from(j);
      if (k < 1) throw InvalidArgument("k must be >= 1");
      auto result = retrieve_text(art_.context(), j.at("query").get<std::string>(), k);
      return {200, {{"results", to_json(result)}}};
    }
    if (method == "POST" && path.starts_with("/tasks/")) {
      Task task = parse_task(path.substr(7));
      auto j = parse_body(body);
      TaskInputs in;
      in.title = j.value("title", "");
      in.abstract = j.value("abstract", "");
      in.abstract_prefix = j.value("abstract_prefix", "");
      in.title_b = j.value("title_b", "");
      in.abstract_b = j.value("abstract_b", "");
      if (j.contains("candidates")) in.candidates = j.at("candidates").get<std::vector<std::string>>();
      std::size_t k = k_from(j);
      auto ctx = art_.context();
      auto result = with_completion_slot([&] { return run_task(task, in, &ctx, client(), k); });
      return {200, to_json(result)};
    }
    if (method == "POST" && path == "/related-work") {
      auto j = parse_body(body);
      if (!j.contains("text") || !j.at("text").is_string()) throw InvalidArgument("\"text\" must be a string");
      std::size_t k = k_from(j);
      std::size_t k2 = j.value("k2", std::min<std::size_t>(k, 5));
      auto draft = with_completion_slot(
          [&] { return generate_related_work(art_.context(), client(), j.at("text").get<std::string>(), k, k2); });
      return {200, to_json(draft)};
    }
    throw NotFound("no route for " + method + " " + path);
  }

  Artifacts art_;
  std::unique_ptr<CompletionClient> client_;
  std::size_t k_default_;
  std::counting_semaphore<> inflight_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace citegraph
