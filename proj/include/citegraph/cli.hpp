#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "citegraph/corpus.hpp"
#include "citegraph/embedding.hpp"
#include "citegraph/error.hpp"
#include "citegraph/evaluation.hpp"
#include "citegraph/graph.hpp"
#include "citegraph/http_clients.hpp"
#include "citegraph/index.hpp"
#include "citegraph/instructions.hpp"
#include "citegraph/metrics.hpp"
#include "citegraph/pipeline.hpp"
#include "citegraph/service.hpp"
#include "citegraph/training.hpp"

namespace citegraph {

namespace cli {

inline std::string read_text(const std::filesystem::path& path) { return detail::read_file(path); }

/// Completion client from --endpoint or --script; null when neither is set.
inline std::unique_ptr<CompletionClient> make_client(const std::string& endpoint, const std::string& script) {
  if (!endpoint.empty()) return std::make_unique<HttpCompletionClient>(endpoint);
  if (!script.empty()) return std::make_unique<ScriptedClient>(ScriptedClient::from_file(script));
  return nullptr;
}

inline std::optional<std::string> opt_string(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

struct ArtifactOptions {
  std::string graph, embeddings, checkpoint, embed_endpoint;

  void add_to(CLI::App* app, bool checkpoint_required = true) {
    app->add_option("--graph", graph, "directory with nodes.jsonl and edges.jsonl")->required();
    app->add_option("--embeddings", embeddings, "CGEM embedding file")->required();
    auto* ck = app->add_option("--checkpoint", checkpoint, "CGRP checkpoint");
    if (checkpoint_required) ck->required();
    app->add_option("--embed-endpoint", embed_endpoint, "embedding service URL for query text (default: stub encoder)");
  }

  Artifacts load() const { return load_artifacts(graph, embeddings, checkpoint, opt_string(embed_endpoint)); }
};

}  // namespace cli

/// Entry point of the `citegraph` tool. Returns 0 on success, 2 on a usage
/// error and 1 on a runtime error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Citation-graph retrieval, instruction building and related-work generation", "citegraph"};
  app.require_subcommand(1);
  app.fallthrough(false);
  std::function<void()> action;

  // ingest
  std::string in_dir, out_dir, format = "latex";
  auto* ingest = app.add_subcommand("ingest", "extract papers and citation edges into nodes.jsonl/edges.jsonl");
  ingest->add_option("--in", in_dir, "input directory")->required();
  ingest->add_option("--format", format, "latex or jsonl")->check(CLI::IsMember({"latex", "jsonl"}));
  ingest->add_option("--out", out_dir, "output directory")->required();
  ingest->callback([&] {
    action = [&] {
      CitationGraph g;
      nlohmann::json report;
      if (format == "latex") {
        Corpus corpus = build_corpus(load_latex_dir(in_dir));
        for (const auto& w : corpus.stats.warnings) err << "warning: " << w << "\n";
        g = build_graph(std::move(corpus.papers), std::move(corpus.edges));
        report = to_json(corpus.stats);
      } else {
        g = load_graph(in_dir);
      }
      save_graph(out_dir, g);
      report["papers"] = g.size();
      report["graph_edges"] = g.edges().size();
      report["duplicate_edges"] = g.duplicate_edges();
      report["self_loops"] = g.self_loops();
      out << report.dump() << "\n";
    };
  });

  // build-graph
  std::string graph_dir, split_out;
  std::uint64_t seed = 0;
  std::vector<double> ratios = {0.7, 0.15, 0.15};
  long long test_nodes = 0;
  auto* bg = app.add_subcommand("build-graph", "validate a graph and write a seeded train/val/test edge split");
  bg->add_option("--graph", graph_dir, "graph directory")->required();
  bg->add_option("--out", split_out, "split manifest (JSON)")->required();
  bg->add_option("--seed", seed, "random seed");
  bg->add_option("--ratios", ratios, "train,val,test ratios")->delimiter(',')->expected(3);
  bg->add_option("--test-nodes", test_nodes, "hold out a connected subgraph of this many nodes");
  bg->callback([&] {
    action = [&] {
      CitationGraph g = load_graph(graph_dir);
      Diagnostics diag;
      auto split = make_split(g, {ratios[0], ratios[1], ratios[2]}, seed, test_nodes, &diag);
      for (const auto& w : diag.warnings) err << "warning: " << w << "\n";
      save_split(split_out, split);
      out << nlohmann::json{{"papers", g.size()},
                            {"edges", g.edges().size()},
                            {"train", split.train.size()},
                            {"val", split.val.size()},
                            {"test", split.test.size()},
                            {"excluded", split.excluded.size()},
                            {"test_nodes", split.test_nodes.size()},
                            {"components", connected_components(g.adjacency()).size()}}
                 .dump()
          << "\n";
    };
  });

  // embed
  std::string emb_out, embed_endpoint;
  std::size_t stub_dim = 768, embed_batch = 64;
  auto* embed = app.add_subcommand("embed", "compute z = LM(title) + LM(abstract) for every paper");
  embed->add_option("--graph", graph_dir, "graph directory")->required();
  embed->add_option("--out", emb_out, "CGEM output file")->required();
  embed->add_option("--dim", stub_dim, "stub encoder dimension")->check(CLI::PositiveNumber);
  embed->add_option("--endpoint", embed_endpoint, "embedding service URL (default: stub encoder)");
  embed->add_option("--batch", embed_batch, "texts per request")->check(CLI::PositiveNumber);
  embed->callback([&] {
    action = [&] {
      CitationGraph g = load_graph(graph_dir);
      std::unique_ptr<EmbeddingProvider> provider;
      if (!embed_endpoint.empty()) {
        provider = std::make_unique<HttpEmbeddingProvider>(embed_endpoint);
      } else {
        provider = std::make_unique<StubProvider>(stub_dim);
      }
      EmbeddingTable table = embed_papers(*provider, g.papers(), embed_batch);
      save_embeddings(table, emb_out);
      out << nlohmann::json{{"count", table.size()}, {"dim", table.dim()}}.dump() << "\n";
    };
  });

  // train
  cli::ArtifactOptions art;
  std::string split_path, ckpt_out, history_out;
  std::vector<std::string> ablate;
  TrainConfig tc;
  auto* train_cmd = app.add_subcommand("train", "train the retriever with early stopping on validation P@5");
  train_cmd->add_option("--graph", art.graph, "graph directory")->required();
  train_cmd->add_option("--embeddings", art.embeddings, "CGEM embedding file")->required();
  train_cmd->add_option("--split", split_path, "split manifest")->required();
  train_cmd->add_option("--out", ckpt_out, "checkpoint output")->required();
  train_cmd->add_option("--history", history_out, "training history (JSON lines)");
  train_cmd->add_option("--seed", tc.seed, "random seed");
  train_cmd->add_option("--lr", tc.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", tc.epochs_max, "maximum epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--patience", tc.patience, "early-stopping patience")->check(CLI::PositiveNumber);
  train_cmd->add_option("--negatives", tc.num_negatives, "negatives per anchor")->check(CLI::PositiveNumber);
  train_cmd->add_option("--max-neighbors", tc.max_neighbors, "neighbor cap")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lambda", tc.lambda_re, "weight of the reconstruction loss")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch-size", tc.batch_size, "anchors per optimizer step")->check(CLI::PositiveNumber);
  train_cmd->add_flag("--include-positive", tc.infonce_include_positive, "add the positive to the InfoNCE denominator");
  train_cmd->add_option("--ablate", ablate, "pseudo_query and/or neighbor_aware")
      ->check(CLI::IsMember({"pseudo_query", "neighbor_aware"}));
  train_cmd->callback([&] {
    action = [&] {
      for (const auto& a : ablate) {
        (a == "pseudo_query" ? tc.ablate_pseudo_query : tc.ablate_neighbor_aware) = true;
      }
      CitationGraph g = load_graph(art.graph);
      EmbeddingTable table = load_embeddings(art.embeddings);
      SplitAssignment split = load_split(split_path);
      validate_split(g, split);
      Eigen::MatrixXd Z = embedding_matrix(table, g);
      TrainResult r = train(g, Z, split, tc);
      save_checkpoint(ckpt_out, r.params, tc.hash());
      if (!history_out.empty()) save_history(history_out, r.history);
      for (const auto& h : r.history) out << to_json(h).dump() << "\n";
      out << nlohmann::json{{"best_epoch", r.best_epoch},
                            {"stopped_early", r.stopped_early},
                            {"epochs", r.history.size()}}
                 .dump()
          << "\n";
    };
  });

  // retrieve
  std::string query;
  std::size_t k = 10;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "rank papers for a query text; one JSON line per result");
  art.add_to(retrieve_cmd);
  retrieve_cmd->add_option("--query", query, "query text")->required();
  retrieve_cmd->add_option("--k", k, "number of results")->check(CLI::PositiveNumber);
  retrieve_cmd->callback([&] {
    action = [&] {
      Artifacts a = art.load();
      for (const auto& s : retrieve_text(a.context(), query, k)) {
        out << nlohmann::json{{"id", s.id}, {"score", s.score}}.dump() << "\n";
      }
    };
  });

  // eval
  std::vector<std::size_t> ks = {5, 10};
  bool include_train_neighbors = false;
  auto* eval_cmd = app.add_subcommand("eval", "held-out P@k for the full model and requested ablations");
  eval_cmd->add_option("--graph", art.graph, "graph directory")->required();
  eval_cmd->add_option("--embeddings", art.embeddings, "CGEM embedding file")->required();
  eval_cmd->add_option("--checkpoint", art.checkpoint, "CGRP checkpoint")->required();
  eval_cmd->add_option("--split", split_path, "split manifest")->required();
  eval_cmd->add_option("--k", ks, "cutoffs")->delimiter(',')->check(CLI::PositiveNumber);
  eval_cmd->add_option("--ablate", ablate, "pseudo_query and/or neighbor_aware")
      ->check(CLI::IsMember({"pseudo_query", "neighbor_aware"}));
  eval_cmd->add_flag("--include-train-neighbors", include_train_neighbors, "rank train neighbors too");
  eval_cmd->callback([&] {
    action = [&] {
      CitationGraph g = load_graph(art.graph);
      EmbeddingTable table = load_embeddings(art.embeddings);
      Checkpoint ck = load_checkpoint(art.checkpoint);
      SplitAssignment split = load_split(split_path);
      validate_split(g, split);
      RetrieverEvalOptions opt;
      opt.ks = ks;
      opt.exclude_train_neighbors = !include_train_neighbors;
      for (const auto& a : ablate) opt.variants.push_back(parse_variant(a));
      for (const auto& r : eval_retriever(g, embedding_matrix(table, g), split, ck.params, opt)) {
        out << to_json(r).dump() << "\n";
      }
    };
  });

  // build-instructions
  std::string instr_out;
  InstructionOptions io;
  auto* bi = app.add_subcommand("build-instructions", "write instructions.jsonl for the five graph tasks");
  bi->add_option("--graph", graph_dir, "graph directory")->required();
  bi->add_option("--out", instr_out, "output JSONL")->required();
  bi->add_option("--seed", io.seed, "random seed");
  bi->add_option("--budget", io.node_budget, "number of sampled nodes")->check(CLI::PositiveNumber);
  bi->add_option("--candidates", io.recommendation_candidates, "recommendation candidate set size (10 or 11)")
      ->check(CLI::Range(2, 1000));
  bi->add_option("--abstract-fraction", io.abstract_fraction, "abstract prefix fraction")->check(CLI::Range(0.0, 1.0));
  bi->callback([&] {
    action = [&] {
      CitationGraph g = load_graph(graph_dir);
      InstructionReport rep;
      auto records = build_training_set(g, io, &rep);
      write_instructions(instr_out, records);
      auto j = to_json(rep);
      j["records"] = records.size();
      out << j.dump() << "\n";
    };
  });

  // run-task
  std::string task_name, input_path, endpoint, script;
  std::size_t task_k = 5;
  auto* rt = app.add_subcommand("run-task", "run one task with retrieved references");
  rt->add_option("--task", task_name, "title_generation, abstract_completion, link_prediction, recommendation, "
                                      "citation_sentence")
      ->required();
  rt->add_option("--input", input_path, "JSON with title, abstract, abstract_prefix, title_b, abstract_b, candidates")
      ->required();
  rt->add_option("--k", task_k, "references to retrieve (0 disables retrieval)");
  rt->add_option("--graph", art.graph, "graph directory");
  rt->add_option("--embeddings", art.embeddings, "CGEM embedding file");
  rt->add_option("--checkpoint", art.checkpoint, "CGRP checkpoint");
  rt->add_option("--embed-endpoint", art.embed_endpoint, "embedding service URL for query text");
  rt->add_option("--endpoint", endpoint, "completion service URL");
  rt->add_option("--script", script, "ScriptedClient JSON");
  rt->callback([&] {
    action = [&] {
      Task task = parse_task(task_name);
      auto j = nlohmann::json::parse(cli::read_text(input_path));
      TaskInputs in;
      in.title = j.value("title", "");
      in.abstract = j.value("abstract", "");
      in.abstract_prefix = j.value("abstract_prefix", "");
      in.title_b = j.value("title_b", "");
      in.abstract_b = j.value("abstract_b", "");
      if (j.contains("candidates")) in.candidates = j.at("candidates").get<std::vector<std::string>>();
      auto client = cli::make_client(endpoint, script);
      if (!client) throw InvalidArgument("run-task needs --endpoint or --script");
      std::optional<Artifacts> a;
      std::optional<RetrievalContext> ctx;
      if (task_k > 0) {
        if (art.graph.empty() || art.embeddings.empty() || art.checkpoint.empty()) {
          throw InvalidArgument("--k > 0 needs --graph, --embeddings and --checkpoint");
        }
        a.emplace(art.load());
        ctx.emplace(a->context());
      }
      out << to_json(run_task(task, in, ctx ? &*ctx : nullptr, *client, task_k)).dump() << "\n";
    };
  });

  // related-work
  std::string text, text_file;
  std::size_t rw_k = 10, rw_k2 = 5;
  auto* rw = app.add_subcommand("related-work", "generate a related-work section through the six-step chain");
  art.add_to(rw);
  rw->add_option("--text", text, "query text (title, abstract or draft)");
  rw->add_option("--text-file", text_file, "read the query text from a file");
  rw->add_option("--k", rw_k, "papers to retrieve")->check(CLI::PositiveNumber);
  rw->add_option("--k2", rw_k2, "papers to cite")->check(CLI::PositiveNumber);
  rw->add_option("--endpoint", endpoint, "completion service URL");
  rw->add_option("--script", script, "ScriptedClient JSON");
  rw->callback([&] {
    action = [&] {
      if (!text_file.empty()) text = cli::read_text(text_file);
      auto client = cli::make_client(endpoint, script);
      if (!client) throw InvalidArgument("related-work needs --endpoint or --script");
      Artifacts a = art.load();
      out << to_json(generate_related_work(a.context(), *client, text, rw_k, rw_k2)).dump() << "\n";
    };
  });

  // stats
  std::vector<std::string> text_files;
  std::string marker = default_marker_pattern();
  auto* stats = app.add_subcommand("stats", "L, NP, NC and RPC for related-work texts, plus their mean");
  stats->add_option("--text-file", text_files, "text files");
  stats->add_option("--graph", graph_dir, "use the related_work field of every paper in this graph");
  stats->add_option("--marker", marker, "citation marker regex");
  stats->callback([&] {
    action = [&] {
      std::vector<std::pair<std::string, std::string>> texts;
      for (const auto& f : text_files) texts.emplace_back(f, cli::read_text(f));
      if (!graph_dir.empty()) {
        CitationGraph g = load_graph(graph_dir);
        for (const auto& p : g.papers()) {
          if (p.related_work && !split_paragraphs(*p.related_work).empty()) texts.emplace_back(p.id, *p.related_work);
        }
      }
      if (texts.empty()) throw InvalidArgument("stats needs --text-file or a graph with related-work sections");
      std::vector<RelatedWorkStats> all;
      for (const auto& [name, t] : texts) {
        all.push_back(related_work_stats(t, marker));
        auto j = to_json(all.back());
        j["source"] = name;
        out << j.dump() << "\n";
      }
      auto mean = to_json(mean_stats(all));
      mean["source"] = "mean";
      mean["count"] = all.size();
      out << mean.dump() << "\n";
    };
  });

  // serve
  std::string config_path, bind;
  std::size_t serve_k = 0;
  auto* serve = app.add_subcommand("serve", "HTTP service over loaded artifacts");
  serve->add_option("--config", config_path, "key=value or JSON config");
  serve->add_option("--graph", art.graph, "graph directory");
  serve->add_option("--embeddings", art.embeddings, "CGEM embedding file");
  serve->add_option("--checkpoint", art.checkpoint, "CGRP checkpoint");
  serve->add_option("--embed-endpoint", art.embed_endpoint, "embedding service URL for query text");
  serve->add_option("--endpoint", endpoint, "completion service URL");
  serve->add_option("--script", script, "ScriptedClient JSON");
  serve->add_option("--bind", bind, "host:port");
  serve->add_option("--k", serve_k, "default k")->check(CLI::PositiveNumber);
  serve->callback([&] {
    action = [&] {
      ServiceConfig cfg = config_path.empty() ? ServiceConfig{} : ServiceConfig::load(config_path);
      cfg.apply_env();
      if (!art.graph.empty()) cfg.graph_path = art.graph;
      if (!art.embeddings.empty()) cfg.embeddings_path = art.embeddings;
      if (!art.checkpoint.empty()) cfg.checkpoint_path = art.checkpoint;
      if (!art.embed_endpoint.empty()) cfg.embed_endpoint = art.embed_endpoint;
      if (!endpoint.empty()) cfg.client_endpoint = endpoint;
      if (!script.empty()) cfg.script_path = script;
      if (!bind.empty()) cfg.bind_address = bind;
      if (serve_k > 0) cfg.k_default = serve_k;
      auto [host, port] = cfg.host_port();
      auto service = Service::from_config(cfg);
      service->serve(host, port, [&](int p) {
        err << "listening on " << host << ":" << p << std::endl;
      });
    };
  });

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    err << "error: unknown subcommand: " << argv[1] << "\n\n" << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    out << (sub ? sub->help() : app.help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return 2;
  }

  try {
    if (action) action();
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace citegraph
