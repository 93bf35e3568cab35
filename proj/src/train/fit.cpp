#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "quadgfm/io/jsonl.hpp"
#include "quadgfm/train.hpp"

namespace quadgfm::train {

TrainingGraph<float> prepare_graph(const graph::QuadGraph& graph, const embed::EmbeddingProvider& provider) {
    return prepare_graph<float>(graph, embed::embed_graph(graph, provider));
}

template <class T> TrainingGraph<T> prepare_graph(const graph::QuadGraph& graph, const embed::GraphEmbeddings& emb) {
    TrainingGraph<T> g;
    g.graph = &graph;
    g.view = gfm::augment_with_inverses(graph);
    g.nodes = emb.nodes.template cast<T>();
    g.relations = emb.relations.template cast<T>();
    return g;
}

template <class T>
PreparedSample<T> prepare_sample(const QuerySample& sample, const TrainingGraph<T>& g, std::span<const float> query,
                                 std::size_t seed_top_m) {
    const std::size_t n = g.view.node_count;
    for (NodeId v : sample.positives) {
        if (v >= n) {
            throw TrainingError("sample " + sample.id + ": positive node " + std::to_string(v) + " out of range (" +
                                std::to_string(n) + " nodes)");
        }
    }
    for (NodeId v : sample.seeds) {
        if (v >= n) throw TrainingError("sample " + sample.id + ": seed node " + std::to_string(v) + " out of range");
    }
    if (sample.labeled && sample.positives.empty()) throw TrainingError("sample " + sample.id + " has no positives");
    if (query.size() != g.nodes.cols()) {
        throw TrainingError("sample " + sample.id + ": query embedding has dimension " + std::to_string(query.size()) +
                            ", graph embeddings " + std::to_string(g.nodes.cols()));
    }
    PreparedSample<T> ps;
    ps.sample = &sample;
    ps.query.assign(query.begin(), query.end());
    ps.teacher = embed::teacher_scores(g.nodes, std::span<const T>(ps.query));
    if (!sample.seeds.empty()) {
        ps.seeds = sample.seeds;
    } else if constexpr (std::is_same_v<T, float>) {
        ps.seeds = select_seed_nodes(sample.query, query, *g.graph, g.nodes, seed_top_m);
    } else {
        ps.seeds = select_seed_nodes(sample.query, query, *g.graph, g.nodes.template cast<float>(), seed_top_m);
    }
    return ps;
}

template <class T>
SampleResult<T> loss_and_gradients(const gfm::GfmParams<T>& params, const TrainingGraph<T>& g,
                                   const PreparedSample<T>& ps, const TrainingConfig& config,
                                   std::span<const RankingPair> pairs) {
    const gfm::QueryInputs<T> inputs{g.nodes, g.relations, ps.query, ps.seeds};
    auto fwd = gfm::forward(params, g.view, inputs, {config.reduction, false});
    SampleResult<T> out;
    std::vector<double> dscores;
    out.loss = total_loss(fwd.scores, ps.teacher, *ps.sample, config, pairs, &dscores);
    out.scores = std::move(fwd.scores);
    out.grads = gfm::backward(params, g.view, inputs, fwd.trace, dscores).params;
    return out;
}

namespace {

double grad_norm(const gfm::GfmParams<float>& grads) {
    double sq = 0;
    for (const auto& b : grads.blocks())
        for (float v : b.values) sq += static_cast<double>(v) * v;
    return std::sqrt(sq);
}

}  // namespace

FitResult fit(std::span<const QuerySample> samples, std::span<const TrainingGraph<float>> graphs,
              const TrainingConfig& config, const embed::EmbeddingProvider& provider, FitOptions options) {
    config.validate();
    FitResult result;
    result.params = options.initial ? std::move(*options.initial)
                                    : gfm::GfmParams<float>::create(config.layers, config.dim, config.seed);
    auto& params = result.params;
    if (params.layers != config.layers || params.dim != config.dim) {
        throw TrainingError("initial parameters have L=" + std::to_string(params.layers) + ", d=" +
                            std::to_string(params.dim) + "; config asks for L=" + std::to_string(config.layers) +
                            ", d=" + std::to_string(config.dim));
    }
    if (provider.dim() != config.dim) {
        throw TrainingError("embedding dimension " + std::to_string(provider.dim()) + " differs from model dimension " +
                            std::to_string(config.dim));
    }

    std::vector<PreparedSample<float>> prepared;
    prepared.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.graph >= graphs.size()) {
            throw TrainingError("sample " + s.id + " refers to graph " + std::to_string(s.graph) + " but only " +
                                std::to_string(graphs.size()) + " are loaded");
        }
        const auto q = embed::encode_query(provider, s.id, s.query);
        prepared.push_back(prepare_sample(s, graphs[s.graph], q, config.seed_top_m));
    }
    if (config.epochs > 0 && prepared.empty()) throw TrainingError("no training samples");
    if (config.checkpoint_dir) std::filesystem::create_directories(*config.checkpoint_dir);

    numerics::AdamW opt({config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochReport report;
        report.epoch = epoch;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            auto batch_grads = gfm::GfmParams<float>::zeros(config.layers, config.dim);
            auto sum_blocks = batch_grads.blocks();
            for (std::size_t i = start; i < end; ++i) {
                const auto& ps = prepared[order[i]];
                const auto& g = graphs[ps.sample->graph];
                std::vector<RankingPair> pairs;
                if (ps.sample->labeled && config.ranking) {
                    pairs = sample_negatives(g.view.node_count, ps.sample->positives, config.negatives, rng);
                }
                auto step = loss_and_gradients(params, g, ps, config, pairs);
                if (!std::isfinite(step.loss.total)) {
                    throw TrainingError("non-finite loss on sample " + ps.sample->id + " in epoch " +
                                        std::to_string(epoch));
                }
                const auto blocks = step.grads.blocks();
                for (std::size_t b = 0; b < blocks.size(); ++b)
                    for (std::size_t k = 0; k < blocks[b].values.size(); ++k)
                        sum_blocks[b].values[k] += blocks[b].values[k];
                report.mean.total += step.loss.total;
                report.mean.nll += step.loss.nll;
                report.mean.kl += step.loss.kl;
                report.mean.ranking += step.loss.ranking;
            }
            const float scale = 1.0f / static_cast<float>(end - start);
            for (auto& b : sum_blocks)
                for (auto& v : b.values) v *= scale;
            const double norm = grad_norm(batch_grads);
            if (!std::isfinite(norm)) {
                throw TrainingError("non-finite gradient in epoch " + std::to_string(epoch) + " (batch starting with " +
                                    prepared[order[start]].sample->id + ")");
            }
            report.mean.grad_norm += norm;
            ++batches;
            auto param_blocks = params.blocks();
            opt.step<float>(param_blocks, batch_grads.blocks());
        }
        const double n = static_cast<double>(prepared.size());
        report.mean.total /= n;
        report.mean.nll /= n;
        report.mean.kl /= n;
        report.mean.ranking /= n;
        report.mean.grad_norm /= static_cast<double>(batches);
        result.history.push_back(report);
        if (config.checkpoint_dir) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch-%03zu.gfm", epoch);
            gfm::save_checkpoint(params, *config.checkpoint_dir / name);
        }
        if (options.on_epoch && !options.on_epoch(report, params)) break;
    }
    return result;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::vector<ManifestEntry> out;
    const auto base = path.parent_path();
    io::for_each_jsonl(path, [&](std::size_t, const nlohmann::json& row) {
        ManifestEntry e;
        e.sample.id = io::require_string(row, "query_id");
        e.sample.query = io::require_string(row, "query");
        std::filesystem::path g = io::require_string(row, "graph");
        e.graph_path = g.is_absolute() ? g : base / g;
        if (!row.contains("positives") || !row.at("positives").is_array()) {
            throw io::InputError("missing array field \"positives\"");
        }
        e.sample.positives = row.at("positives").get<std::vector<NodeId>>();
        if (e.sample.positives.empty()) throw io::InputError("query " + e.sample.id + " has no positives");
        if (row.contains("seeds") && !row.at("seeds").is_null()) {
            e.sample.seeds = row.at("seeds").get<std::vector<NodeId>>();
        }
        out.push_back(std::move(e));
    });
    return out;
}

template TrainingGraph<float> prepare_graph<float>(const graph::QuadGraph&, const embed::GraphEmbeddings&);
template TrainingGraph<double> prepare_graph<double>(const graph::QuadGraph&, const embed::GraphEmbeddings&);
template PreparedSample<float> prepare_sample(const QuerySample&, const TrainingGraph<float>&, std::span<const float>,
                                              std::size_t);
template PreparedSample<double> prepare_sample(const QuerySample&, const TrainingGraph<double>&,
                                               std::span<const float>, std::size_t);
template SampleResult<float> loss_and_gradients(const gfm::GfmParams<float>&, const TrainingGraph<float>&,
                                                const PreparedSample<float>&, const TrainingConfig&,
                                                std::span<const RankingPair>);
template SampleResult<double> loss_and_gradients(const gfm::GfmParams<double>&, const TrainingGraph<double>&,
                                                 const PreparedSample<double>&, const TrainingConfig&,
                                                 std::span<const RankingPair>);

}  // namespace quadgfm::train
