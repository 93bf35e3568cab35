#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

#include <CLI11.hpp>

#include "quadgfm/cli.hpp"
#include "quadgfm/embed.hpp"
#include "quadgfm/io/jsonl.hpp"
#include "quadgfm/partition.hpp"

namespace quadgfm::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const char* what) {
    if (p.empty()) throw ConfigError(std::string("no ") + what + " path configured");
    if (!fs::exists(p)) throw DomainError(std::string(what) + " not found: " + p.string());
}

std::unique_ptr<embed::EmbeddingProvider> make_provider(const RunConfig& c) {
    if (c.embed_provider == "hash") return std::make_unique<embed::HashProvider>(c.train.dim, c.hash_seed);
    require_file(c.paths.embeddings, "embeddings");
    auto nodes = embed::load_embeddings(c.paths.embeddings);
    embed::EmbeddingTable queries;
    if (!c.paths.query_embeddings.empty()) {
        require_file(c.paths.query_embeddings, "query embeddings");
        queries = embed::load_embeddings(c.paths.query_embeddings);
    }
    if (nodes.dim() != c.train.dim) {
        throw DomainError("embedding table " + c.paths.embeddings.string() + " has dimension " +
                          std::to_string(nodes.dim()) + " but train.dim is " + std::to_string(c.train.dim));
    }
    return std::make_unique<embed::FileProvider>(std::move(nodes), std::move(queries));
}

graph::QuadGraph load_graph_checked(const RunConfig& c) {
    require_file(c.paths.graph, "graph");
    return graph::load_graph(c.paths.graph);
}

json stats_json(const graph::GraphStats& s) {
    json by_type = json::object();
    for (auto t : graph::kNodeTypes) by_type[std::string(graph::to_string(t))] = s.count(t);
    return {{"nodes", s.node_count},
            {"relations", s.relation_count},
            {"edges", s.edge_count},
            {"cross_layer_edges", s.cross_layer_edge_count},
            {"nodes_by_type", by_type}};
}

// ---- retrieval and answer files -------------------------------------------

json retrieval_json(const reason::RetrievalResult& r, const std::vector<graph::NodeId>& seeds) {
    json by_type = json::object();
    for (auto t : graph::kNodeTypes) {
        json list = json::array();
        for (const auto& s : r.of(t)) list.push_back({s.id, s.score});
        by_type[std::string(graph::to_string(t))] = list;
    }
    return {{"query_id", r.query_id}, {"seeds", seeds}, {"results", by_type}};
}

std::vector<reason::RetrievalResult> load_retrievals(const fs::path& path) {
    require_file(path, "retrievals");
    std::vector<reason::RetrievalResult> out;
    io::for_each_jsonl(path, [&](std::size_t, const json& row) {
        reason::RetrievalResult r;
        r.query_id = io::require_string(row, "query_id");
        for (auto t : graph::kNodeTypes) {
            for (const auto& pair : row.at("results").at(std::string(graph::to_string(t))))
                r.by_type[static_cast<std::size_t>(t)].push_back({pair.at(0).get<graph::NodeId>(), pair.at(1).get<double>()});
        }
        out.push_back(std::move(r));
    });
    return out;
}

std::vector<reason::AnswerRecord> load_answers(const fs::path& path) {
    std::vector<reason::AnswerRecord> out;
    io::for_each_jsonl(path, [&](std::size_t, const json& row) {
        out.push_back({io::require_string(row, "query_id"), io::require_string(row, "raw"),
                       io::require_string(row, "answer"), row.at("parsed").get<bool>(), row.at("latency_s").get<double>()});
    });
    return out;
}

json metrics_json(const reason::Metrics& m) {
    json recall = json::object();
    for (const auto& [k, v] : m.recall) recall["R@" + std::to_string(k)] = v;
    return {{"queries", m.queries}, {"em", m.em}, {"f1", m.f1}, {"recall", recall}, {"evidence_recall", m.evidence_recall}};
}

// ---- subcommands ------------------------------------------------------------

struct Context {
    RunConfig config;
    RunReport report;
};

struct IngestArgs {
    std::string format = "layered";
    std::string triples, docs, links, layers;
};

void cmd_ingest(Context& ctx, const IngestArgs& a) {
    const auto& c = ctx.config;
    if (c.paths.graph.empty()) throw ConfigError("ingest needs --out (or paths.graph)");
    graph::QuadGraph g;
    if (a.format == "kg") {
        for (const auto& [p, what] : {std::pair{a.triples, "triples"}, {a.docs, "documents"}, {a.links, "links"}})
            require_file(p, what);
        g = graph::ingest_kg_docs(a.triples, a.docs, a.links);
    } else {
        require_file(a.layers, "layered records");
        g = graph::ingest_quad_layers(a.layers);
    }
    if (c.paths.graph.has_parent_path()) fs::create_directories(c.paths.graph.parent_path());
    graph::save_graph(g, c.paths.graph);
    ctx.report.result = {{"graph", c.paths.graph.string()}, {"stats", stats_json(graph::graph_stats(g))}};
}

void cmd_embed(Context& ctx, const std::string& from) {
    const auto& c = ctx.config;
    if (c.paths.embeddings.empty()) throw ConfigError("embed needs --embeddings (or paths.embeddings) as output");
    const auto g = load_graph_checked(c);
    embed::EmbeddingTable table;
    if (c.embed_provider == "hash") {
        table = embed::graph_table(g, embed::HashProvider(c.train.dim, c.hash_seed));
    } else {
        require_file(from, "source embedding table (--from)");
        auto src = embed::load_embeddings(from);
        if (src.dim() != c.train.dim) {
            throw DomainError(from + " has dimension " + std::to_string(src.dim()) + ", expected " +
                              std::to_string(c.train.dim));
        }
        table = embed::graph_table(g, embed::FileProvider(std::move(src), {}));
    }
    if (c.paths.embeddings.has_parent_path()) fs::create_directories(c.paths.embeddings.parent_path());
    embed::save_embeddings(table, c.paths.embeddings);
    ctx.report.result = {{"embeddings", c.paths.embeddings.string()}, {"rows", table.rows()}, {"dim", table.dim()}};
}

void cmd_train(Context& ctx) {
    const auto& c = ctx.config;
    require_file(c.paths.manifest, "manifest");
    const auto entries = train::load_manifest(c.paths.manifest);
    if (entries.empty()) throw DomainError("manifest " + c.paths.manifest.string() + " has no samples");

    std::map<fs::path, std::size_t> graph_index;
    std::vector<std::unique_ptr<graph::QuadGraph>> graphs;
    std::vector<train::QuerySample> samples;
    for (const auto& e : entries) {
        auto [it, fresh] = graph_index.emplace(e.graph_path, graphs.size());
        if (fresh) {
            require_file(e.graph_path, "graph");
            graphs.push_back(std::make_unique<graph::QuadGraph>(graph::load_graph(e.graph_path)));
        }
        samples.push_back(e.sample);
        samples.back().graph = it->second;
    }
    if (c.embed_provider == "file" && graphs.size() > 1) {
        throw ConfigError("the file embedding provider serves one graph; the manifest references " +
                          std::to_string(graphs.size()));
    }
    const auto provider = make_provider(c);
    std::vector<train::TrainingGraph<float>> prepared;
    for (const auto& g : graphs) prepared.push_back(train::prepare_graph(*g, *provider));

    auto tc = c.train;
    tc.checkpoint_dir = c.paths.output_dir / "checkpoints";
    const auto result = train::fit(samples, prepared, tc, *provider);
    const auto out = c.checkpoint_path();
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    gfm::save_checkpoint(result.params, out);

    json history = json::array();
    for (const auto& h : result.history) {
        history.push_back({{"epoch", h.epoch},
                           {"total", h.mean.total},
                           {"nll", h.mean.nll},
                           {"kl", h.mean.kl},
                           {"ranking", h.mean.ranking},
                           {"grad_norm", h.mean.grad_norm}});
    }
    ctx.report.result = {{"checkpoint", out.string()},
                         {"samples", samples.size()},
                         {"graphs", graphs.size()},
                         {"parameters", result.params.parameter_count()},
                         {"history", history}};
}

void cmd_partition(Context& ctx) {
    const auto& c = ctx.config;
    const auto g = load_graph_checked(c);
    const auto plan = partition::partition_graph(g, c.workers, c.seed);
    const auto path = c.plan_path();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    partition::save_plan(plan, path);
    const auto st = partition::plan_stats(g, plan);
    ctx.report.result = {{"plan", path.string()},
                         {"parts", plan.n_parts},
                         {"part_sizes", plan.part_sizes},
                         {"edge_cut", st.edge_cut},
                         {"balance", st.balance},
                         {"boundary_messages", st.boundary_messages}};
}

template <class T>
std::vector<double> score_query(const gfm::GfmParams<T>& params, const train::TrainingGraph<float>& tg,
                                const numerics::Matrix<T>& nodes, const numerics::Matrix<T>& relations, std::span<const float> q,
                                const std::vector<graph::NodeId>& seeds, const RunConfig& c,
                                const partition::PartitionPlan* plan) {
    const std::vector<T> query(q.begin(), q.end());
    const gfm::QueryInputs<T> in{nodes, relations, query, seeds};
    if (plan) return partition::distributed_forward(params, tg.view, *plan, in, c.train.reduction).scores;
    return gfm::forward(params, tg.view, in, {c.train.reduction, c.precision == Precision::Bf16}).scores;
}

void cmd_retrieve(Context& ctx) {
    const auto& c = ctx.config;
    const auto ckpt = c.checkpoint_path();
    if (!fs::exists(ckpt)) throw DomainError("checkpoint not found: " + ckpt.string());
    const auto g = load_graph_checked(c);
    require_file(c.paths.dataset, "dataset");
    const auto dataset = reason::load_dataset(c.paths.dataset, g);
    const auto params = gfm::load_checkpoint(ckpt);
    if (params.dim != c.train.dim) {
        throw DomainError("checkpoint " + ckpt.string() + " has d=" + std::to_string(params.dim) + " but train.dim is " +
                          std::to_string(c.train.dim));
    }
    const auto provider = make_provider(c);
    const auto tg = train::prepare_graph(g, *provider);

    std::optional<partition::PartitionPlan> plan;
    if (c.workers > 1) {
        if (c.precision == Precision::Bf16) throw ConfigError("bf16 precision is single-worker only");
        plan = fs::exists(c.plan_path()) ? partition::load_plan(g, c.plan_path())
                                         : partition::partition_graph(g, c.workers, c.seed);
        if (plan->n_parts != c.workers) {
            throw DomainError("plan " + c.plan_path().string() + " has " + std::to_string(plan->n_parts) +
                              " parts but workers is " + std::to_string(c.workers));
        }
    }
    const auto params64 = c.precision == Precision::Fp64 ? params.cast<double>() : gfm::GfmParams<double>{};
    const auto nodes64 = c.precision == Precision::Fp64 ? tg.nodes.cast<double>() : numerics::Matrix<double>{};
    const auto rels64 = c.precision == Precision::Fp64 ? tg.relations.cast<double>() : numerics::Matrix<double>{};

    std::vector<json> rows;
    for (const auto& item : dataset) {
        const auto q = embed::encode_query(*provider, item.query_id, item.query);
        const auto seeds = train::select_seed_nodes(item.query, q, g, tg.nodes, c.train.seed_top_m);
        const auto* pp = plan ? &*plan : nullptr;
        const auto scores = c.precision == Precision::Fp64
                                ? score_query(params64, tg, nodes64, rels64, q, seeds, c, pp)
                                : score_query(params, tg, tg.nodes, tg.relations, q, seeds, c, pp);
        auto r = reason::topk_per_type(scores, g, c.k);
        r.query_id = item.query_id;
        rows.push_back(retrieval_json(r, seeds));
    }
    const auto path = c.paths.output_dir / "retrievals.jsonl";
    io::write_jsonl(path, rows);
    ctx.report.result = {{"retrievals", path.string()}, {"queries", rows.size()}, {"k", c.k}, {"workers", c.workers}};
}

void cmd_answer(Context& ctx) {
    const auto& c = ctx.config;
    const auto g = load_graph_checked(c);
    require_file(c.paths.dataset, "dataset");
    const auto dataset = reason::load_dataset(c.paths.dataset, g);
    const auto retrievals = load_retrievals(c.paths.output_dir / "retrievals.jsonl");
    if (retrievals.size() != dataset.size()) {
        throw DomainError("retrievals cover " + std::to_string(retrievals.size()) + " queries, dataset has " +
                          std::to_string(dataset.size()));
    }
    std::vector<reason::PromptJob> jobs;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (retrievals[i].query_id != dataset[i].query_id) {
            throw DomainError("retrieval " + std::to_string(i) + " is for query " + retrievals[i].query_id +
                              ", dataset has " + dataset[i].query_id);
        }
        jobs.push_back({dataset[i].query_id,
                        reason::build_prompt(dataset[i].query, retrievals[i], g, {c.prompt_extra_sections}).text});
    }
    const auto answers = reason::answer_all(jobs, c.llm);
    std::vector<json> rows;
    std::size_t unparsed = 0;
    for (const auto& a : answers) {
        unparsed += !a.parsed;
        rows.push_back({{"query_id", a.query_id},
                        {"raw", a.raw},
                        {"answer", a.answer},
                        {"parsed", a.parsed},
                        {"latency_s", a.latency_s}});
    }
    const auto path = c.paths.output_dir / "answers.jsonl";
    io::write_jsonl(path, rows);
    if (unparsed) ctx.report.warnings.push_back(std::to_string(unparsed) + " replies had no \"Answer:\" marker");
    ctx.report.result = {{"answers", path.string()}, {"queries", rows.size()}, {"unparsed", unparsed}};
}

void cmd_eval(Context& ctx) {
    const auto& c = ctx.config;
    const auto g = load_graph_checked(c);
    require_file(c.paths.dataset, "dataset");
    const auto dataset = reason::load_dataset(c.paths.dataset, g);
    const auto retrievals = load_retrievals(c.paths.output_dir / "retrievals.jsonl");
    std::vector<reason::AnswerRecord> answers;
    const auto answer_path = c.paths.output_dir / "answers.jsonl";
    if (fs::exists(answer_path)) {
        answers = load_answers(answer_path);
    } else {
        ctx.report.warnings.push_back("no answers.jsonl; EM and F1 are reported as 0");
    }
    const std::vector<std::size_t> ks{2, 5};
    const auto m = reason::evaluate_run(dataset, retrievals, answers, ks);
    ctx.report.result = metrics_json(m);
    std::cout << ctx.report.result.dump(2) << "\n";
}

void cmd_estimate(Context& ctx, std::uint64_t nodes, std::uint64_t dim, double mem) {
    const auto n = partition::estimate_workers(nodes, dim, mem);
    std::cout << n << "\n";
    ctx.report.result = {{"nodes", nodes}, {"dim", dim}, {"mem_gb", mem}, {"workers", n}};
}

// Registers an option whose value, when given, lands at `pointer` in the
// override layer.
template <class T>
CLI::Option* override_opt(CLI::App* app, json& overrides, const std::string& flag, const std::string& pointer,
                          const std::string& help) {
    return app->add_option_function<T>(
        flag, [&overrides, pointer](const T& v) { overrides[json::json_pointer(pointer)] = v; }, help);
}

struct Common {
    std::string config_path;
    bool lax = false;
    json overrides = json::object();
};

void add_common(CLI::App* sub, Common& common) {
    sub->add_option("--config", common.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_flag("--lax", common.lax, "Ignore unknown config keys");
    override_opt<std::string>(sub, common.overrides, "--output-dir", "/paths/output_dir", "Run output directory");
    override_opt<std::uint64_t>(sub, common.overrides, "--seed", "/seed", "Run seed");
    override_opt<std::string>(sub, common.overrides, "--graph", "/paths/graph", "QuadGraph file");
    override_opt<std::string>(sub, common.overrides, "--embeddings", "/paths/embeddings", "Graph embedding table");
    override_opt<std::string>(sub, common.overrides, "--query-embeddings", "/paths/query_embeddings",
                              "Query embedding table");
    override_opt<std::string>(sub, common.overrides, "--dataset", "/paths/dataset", "Evaluation dataset (JSONL)");
    override_opt<std::string>(sub, common.overrides, "--precision", "/precision", "fp32, bf16 or fp64")
        ->check(CLI::IsMember({"fp32", "bf16", "fp64"}));
}

}  // namespace

int run_command(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_command(args);
}

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"Graph-structured retrieval and reasoning with a query-dependent GNN", "quadgfm"};
    app.require_subcommand(1);

    Common common;
    auto& ov = common.overrides;
    IngestArgs ingest;
    std::string embed_from;
    std::uint64_t est_nodes = 0, est_dim = 0;
    double est_mem = 0;

    auto* s_ingest = app.add_subcommand("ingest", "Build a QuadGraph from raw records");
    s_ingest->add_option("--format", ingest.format, "kg or layered")->check(CLI::IsMember({"kg", "layered"}));
    s_ingest->add_option("--triples", ingest.triples, "Triples JSONL (kg format)");
    s_ingest->add_option("--docs", ingest.docs, "Documents JSONL (kg format)");
    s_ingest->add_option("--links", ingest.links, "Entity-document links JSONL (kg format)");
    s_ingest->add_option("--layers", ingest.layers, "Layered records JSONL (layered format)");
    override_opt<std::string>(s_ingest, ov, "--out", "/paths/graph", "Output graph file");

    auto* s_embed = app.add_subcommand("embed", "Write the graph embedding table");
    override_opt<std::string>(s_embed, ov, "--provider", "/embed/provider", "hash or file")
        ->check(CLI::IsMember({"hash", "file"}));
    override_opt<std::size_t>(s_embed, ov, "--dim", "/train/dim", "Embedding dimension");
    s_embed->add_option("--from", embed_from, "Precomputed table to import (file provider)");

    auto* s_train = app.add_subcommand("train", "Train the GFM on a manifest");
    override_opt<std::string>(s_train, ov, "--manifest", "/paths/manifest", "Training manifest (JSONL)");
    override_opt<std::size_t>(s_train, ov, "--epochs", "/train/epochs", "Epochs");
    override_opt<std::size_t>(s_train, ov, "--dim", "/train/dim", "Model dimension");
    override_opt<std::size_t>(s_train, ov, "--layers", "/train/layers", "Message-passing layers");
    override_opt<std::string>(s_train, ov, "--checkpoint", "/paths/checkpoint", "Where to write the model");

    auto* s_part = app.add_subcommand("partition", "Partition the graph for multi-worker inference");
    override_opt<std::size_t>(s_part, ov, "--n", "/workers", "Number of parts")->required();
    override_opt<std::string>(s_part, ov, "--plan", "/paths/plan", "Output plan file");

    auto* s_retrieve = app.add_subcommand("retrieve", "Score nodes and keep the top k per type");
    override_opt<std::size_t>(s_retrieve, ov, "--k", "/k", "Nodes kept per type");
    override_opt<std::string>(s_retrieve, ov, "--checkpoint", "/paths/checkpoint", "Model checkpoint");
    override_opt<std::size_t>(s_retrieve, ov, "--workers", "/workers", "Worker threads (partitioned forward)");
    override_opt<std::string>(s_retrieve, ov, "--plan", "/paths/plan", "Partition plan");

    auto* s_answer = app.add_subcommand("answer", "Prompt the LLM with retrieved context");
    override_opt<std::string>(s_answer, ov, "--endpoint", "/llm/endpoint", "Chat-completions URL");
    override_opt<std::string>(s_answer, ov, "--model", "/llm/model", "Model name");

    auto* s_eval = app.add_subcommand("eval", "EM, F1 and recall of a run");

    auto* s_est = app.add_subcommand("estimate", "Workers needed for a graph and model size");
    s_est->add_option("--nodes", est_nodes, "Graph nodes")->required()->check(CLI::PositiveNumber);
    s_est->add_option("--dim", est_dim, "Model dimension")->required()->check(CLI::PositiveNumber);
    s_est->add_option("--mem", est_mem, "Memory per worker (GB)")->required()->check(CLI::PositiveNumber);

    for (auto* sub : {s_ingest, s_embed, s_train, s_part, s_retrieve, s_answer, s_eval, s_est}) add_common(sub, common);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }

    CLI::App* chosen = app.get_subcommands().front();
    const auto start = std::chrono::steady_clock::now();
    try {
        Context ctx;
        const std::optional<fs::path> cfg = common.config_path.empty() ? std::nullopt
                                                                       : std::optional<fs::path>(common.config_path);
        ctx.config = load_config(cfg, ov, common.lax);
        ctx.report.command = chosen->get_name();
        ctx.report.config = to_json(ctx.config);

        if (chosen == s_ingest) cmd_ingest(ctx, ingest);
        else if (chosen == s_embed) cmd_embed(ctx, embed_from);
        else if (chosen == s_train) cmd_train(ctx);
        else if (chosen == s_part) cmd_partition(ctx);
        else if (chosen == s_retrieve) cmd_retrieve(ctx);
        else if (chosen == s_answer) cmd_answer(ctx);
        else if (chosen == s_eval) cmd_eval(ctx);
        else cmd_estimate(ctx, est_nodes, est_dim, est_mem);

        ctx.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const auto path = write_report(ctx.report, ctx.config.paths.output_dir);
        std::cerr << "report: " << path.string() << "\n";
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "quadgfm " << chosen->get_name() << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "quadgfm " << chosen->get_name() << ": " << e.what() << "\n";
        return 1;
    }
}

}  // namespace quadgfm::cli
