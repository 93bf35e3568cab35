#include <algorithm>
#include <cmath>

#include "quadgfm/embed.hpp"
#include "quadgfm/gfm.hpp"

namespace quadgfm::gfm {

namespace {

using numerics::MlpCache;

template <class T> Matrix<T> concat_cols(const Matrix<T>& a, const Matrix<T>& b) {
    numerics::require_shape(a.rows() == b.rows(), "concat: row counts differ");
    Matrix<T> out(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto o = out.row(i);
        std::copy(a.row(i).begin(), a.row(i).end(), o.begin());
        std::copy(b.row(i).begin(), b.row(i).end(), o.begin() + static_cast<std::ptrdiff_t>(a.cols()));
    }
    return out;
}

template <class T>
Matrix<T> init_input(const Matrix<T>& features, std::span<const T> query, std::span<const NodeId> seeds) {
    const std::size_t n = features.rows(), d = features.cols();
    if (query.size() != d) {
        throw ModelError("query embedding has dimension " + std::to_string(query.size()) + ", expected " +
                         std::to_string(d));
    }
    Matrix<T> x(n, 2 * d);
    for (std::size_t v = 0; v < n; ++v) std::copy(features.row(v).begin(), features.row(v).end(), x.row(v).begin());
    for (NodeId s : seeds) {
        if (s >= n) throw ModelError("seed node " + std::to_string(s) + " out of range (" + std::to_string(n) + " nodes)");
        std::copy(query.begin(), query.end(), x.row(s).begin() + static_cast<std::ptrdiff_t>(d));
    }
    return x;
}

template <class T>
Matrix<T> predictor_input(const std::vector<NodeId>& rows, const Matrix<T>& final_states,
                          const Matrix<T>& features, std::span<const T> query) {
    const std::size_t d = final_states.cols();
    Matrix<T> z(rows.size(), 3 * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto o = z.row(i).begin();
        const auto h = final_states.row(rows[i]);
        const auto f = features.row(rows[i]);
        std::copy(h.begin(), h.end(), o);
        std::copy(f.begin(), f.end(), o + static_cast<std::ptrdiff_t>(d));
        std::copy(query.begin(), query.end(), o + static_cast<std::ptrdiff_t>(2 * d));
    }
    return z;
}

std::array<std::vector<NodeId>, graph::kNodeTypeCount> rows_by_type(std::span<const NodeType> types) {
    std::array<std::vector<NodeId>, graph::kNodeTypeCount> rows;
    for (std::size_t v = 0; v < types.size(); ++v) rows[static_cast<std::size_t>(types[v])].push_back(static_cast<NodeId>(v));
    return rows;
}

double to_score(double logit) { return embed::clamp_probability(embed::sigmoid(logit)); }

void check_layer(const GfmParams<float>& p, std::size_t l) {
    if (l < 1 || l > p.layers) throw ModelError("layer " + std::to_string(l) + " outside 1.." + std::to_string(p.layers));
}
void check_layer(const GfmParams<double>& p, std::size_t l) {
    if (l < 1 || l > p.layers) throw ModelError("layer " + std::to_string(l) + " outside 1.." + std::to_string(p.layers));
}

template <class T> void check_inputs(const GfmParams<T>& params, const ModelView& view, const QueryInputs<T>& in) {
    const std::size_t d = params.dim;
    if (in.node_features.rows() != view.node_count || in.node_features.cols() != d) {
        throw ModelError("node features are " + std::to_string(in.node_features.rows()) + "x" +
                         std::to_string(in.node_features.cols()) + ", expected " + std::to_string(view.node_count) +
                         "x" + std::to_string(d));
    }
    if (in.relation_features.rows() != view.relation_count || in.relation_features.cols() != d) {
        throw ModelError("relation features are " + std::to_string(in.relation_features.rows()) + "x" +
                         std::to_string(in.relation_features.cols()) + ", expected " +
                         std::to_string(view.relation_count) + "x" + std::to_string(d));
    }
    if (in.query.size() != d) throw ModelError("query embedding dimension differs from the model dimension");
}

// Messages stored as bf16, summed in float.
Matrix<float> aggregate_bf16(const ModelView& view, const Matrix<float>& states, const Matrix<float>& rel_states) {
    const std::size_t d = states.cols();
    Matrix<numerics::Bf16> messages(view.edge_count(), d);
    for (std::size_t e = 0; e < view.edge_count(); ++e) {
        const auto h = states.row(view.neighbor[e]);
        const auto r = rel_states.row(view.rel[e]);
        auto m = messages.row(e);
        for (std::size_t c = 0; c < d; ++c) m[c] = numerics::Bf16(h[c] * r[c]);
    }
    return numerics::segment_sum(messages, view.by_target, Reduction::Fast);
}

template <class T> void maybe_quantize(Matrix<T>& m, bool on) {
    if constexpr (std::is_same_v<T, float>) {
        if (on) numerics::quantize_bf16(m);
    }
}

}  // namespace

ModelView augment_with_inverses(const graph::QuadGraph& graph) {
    ModelView view;
    view.node_count = graph.node_count();
    view.relation_count = 2 * graph.relation_count();
    const std::size_t e_count = graph.edge_count();
    const auto r_count = static_cast<std::uint32_t>(graph.relation_count());
    view.target.resize(2 * e_count);
    view.neighbor.resize(2 * e_count);
    view.rel.resize(2 * e_count);
    for (std::size_t i = 0; i < e_count; ++i) {
        const auto& e = graph.edges()[i];
        view.target[i] = e.src;
        view.neighbor[i] = e.dst;
        view.rel[i] = e.rel;
        view.target[e_count + i] = e.dst;
        view.neighbor[e_count + i] = e.src;
        view.rel[e_count + i] = e.rel + r_count;
    }
    view.types.reserve(graph.node_count());
    for (const auto& n : graph.nodes()) view.types.push_back(n.type);
    view.by_target = numerics::SegmentIndex::build(view.target, view.node_count);
    view.by_neighbor = numerics::SegmentIndex::build(view.neighbor, view.node_count);
    view.by_rel = numerics::SegmentIndex::build(view.rel, view.relation_count);
    return view;
}

template <class T>
Matrix<T> init_node_states(const GfmParams<T>& params, const Matrix<T>& node_features, std::span<const T> query,
                           std::span<const NodeId> seeds) {
    return numerics::mlp_apply(params.init, init_input(node_features, query, seeds));
}

template <class T>
Matrix<T> relation_embed_layer(const GfmParams<T>& params, const Matrix<T>& relation_features, std::size_t l) {
    check_layer(params, l);
    return numerics::mlp_apply(params.relation[l - 1], relation_features);
}

template <class T>
Matrix<T> aggregate_messages(const ModelView& view, const Matrix<T>& states, const Matrix<T>& relation_states,
                             Reduction reduction) {
    numerics::require_shape(states.rows() == view.node_count, "aggregate: state rows differ from node count");
    numerics::require_shape(relation_states.rows() == view.relation_count,
                            "aggregate: relation rows differ from relation count");
    numerics::require_shape(states.cols() == relation_states.cols(), "aggregate: state and relation widths differ");
    return numerics::gather_product_sum(states, view.neighbor, relation_states, view.rel, view.by_target, reduction);
}

template <class T>
Matrix<T> update_states(const GfmParams<T>& params, std::size_t l, const Matrix<T>& previous,
                        const Matrix<T>& aggregate) {
    check_layer(params, l);
    return numerics::mlp_apply(params.update[l - 1], concat_cols(previous, aggregate));
}

template <class T>
Matrix<T> propagate_layer(const GfmParams<T>& params, const ModelView& view, const Matrix<T>& previous,
                          const Matrix<T>& relation_states, std::size_t l, Reduction reduction) {
    return update_states(params, l, previous, aggregate_messages(view, previous, relation_states, reduction));
}

template <class T>
std::vector<double> predict_scores(const GfmParams<T>& params, std::span<const NodeType> types,
                                   const Matrix<T>& final_states, const Matrix<T>& node_features,
                                   std::span<const T> query) {
    numerics::require_shape(types.size() == final_states.rows() && types.size() == node_features.rows(),
                            "predict_scores: row counts differ");
    std::vector<double> scores(types.size());
    const auto rows = rows_by_type(types);
    for (std::size_t t = 0; t < rows.size(); ++t) {
        if (rows[t].empty()) continue;
        const Matrix<T> logits =
            numerics::mlp_apply(params.predictor[t], predictor_input(rows[t], final_states, node_features, query));
        for (std::size_t i = 0; i < rows[t].size(); ++i) scores[rows[t][i]] = to_score(static_cast<double>(logits(i, 0)));
    }
    return scores;
}

template <class T>
ForwardResult<T> forward(const GfmParams<T>& params_in, const ModelView& view, const QueryInputs<T>& inputs,
                         const ForwardOptions& options) {
    check_inputs(params_in, view, inputs);
    const bool bf16 = options.bf16_storage && std::is_same_v<T, float>;
    if (options.bf16_storage && !bf16) throw ModelError("bf16 storage requires a float model");

    // bf16 mode works on rounded copies of everything that is stored.
    GfmParams<T> rounded;
    Matrix<T> features_q, relations_q;
    std::vector<T> query_q;
    const GfmParams<T>* p = &params_in;
    const Matrix<T>* features = &inputs.node_features;
    const Matrix<T>* relations = &inputs.relation_features;
    std::span<const T> query = inputs.query;
    if constexpr (std::is_same_v<T, float>) {
        if (bf16) {
            rounded = params_in;
            for (auto& b : rounded.blocks()) numerics::quantize_bf16(b.values);
            features_q = inputs.node_features;
            relations_q = inputs.relation_features;
            query_q.assign(inputs.query.begin(), inputs.query.end());
            numerics::quantize_bf16(features_q);
            numerics::quantize_bf16(relations_q);
            numerics::quantize_bf16(std::span<float>(query_q));
            p = &rounded;
            features = &features_q;
            relations = &relations_q;
            query = query_q;
        }
    }

    ForwardResult<T> result;
    auto& tr = result.trace;
    tr.params = &params_in;
    tr.params_version = params_in.version();

    tr.init_input = init_input(*features, query, inputs.seeds);
    auto init_fwd = numerics::mlp_forward(p->init, tr.init_input);
    tr.init_cache = std::move(init_fwd.cache);
    maybe_quantize(init_fwd.output, bf16);
    tr.states.push_back(std::move(init_fwd.output));

    for (std::size_t l = 1; l <= p->layers; ++l) {
        auto rel_fwd = numerics::mlp_forward(p->relation[l - 1], *relations);
        maybe_quantize(rel_fwd.output, bf16);
        const Matrix<T>& prev = tr.states.back();
        Matrix<T> agg;
        if constexpr (std::is_same_v<T, float>) {
            agg = bf16 ? aggregate_bf16(view, prev, rel_fwd.output)
                       : aggregate_messages(view, prev, rel_fwd.output, options.reduction);
        } else {
            agg = aggregate_messages(view, prev, rel_fwd.output, options.reduction);
        }
        maybe_quantize(agg, bf16);
        auto upd_fwd = numerics::mlp_forward(p->update[l - 1], concat_cols(prev, agg));
        maybe_quantize(upd_fwd.output, bf16);
        tr.relation_states.push_back(std::move(rel_fwd.output));
        tr.relation_caches.push_back(std::move(rel_fwd.cache));
        tr.update_caches.push_back(std::move(upd_fwd.cache));
        tr.states.push_back(std::move(upd_fwd.output));
    }

    const std::size_t n = view.node_count;
    tr.type_rows = rows_by_type(view.types);
    tr.logits.assign(n, 0.0);
    tr.scores.assign(n, 0.0);
    for (std::size_t t = 0; t < graph::kNodeTypeCount; ++t) {
        const auto& rows = tr.type_rows[t];
        if (rows.empty()) continue;
        auto pred = numerics::mlp_forward(p->predictor[t], predictor_input(rows, tr.states.back(), *features, query));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            tr.logits[rows[i]] = static_cast<double>(pred.output(i, 0));
            tr.scores[rows[i]] = to_score(tr.logits[rows[i]]);
        }
        tr.predictor_caches[t] = std::move(pred.cache);
    }
    result.scores = tr.scores;
    return result;
}

template <class T>
GfmGradients<T> backward(const GfmParams<T>& params, const ModelView& view, const QueryInputs<T>& inputs,
                         const ForwardTrace<T>& trace, std::span<const double> dscores) {
    if (dscores.size() != trace.scores.size()) throw ModelError("backward: score gradient has the wrong length");
    std::vector<double> dlogits(dscores.size());
    for (std::size_t v = 0; v < dscores.size(); ++v) {
        const double s = embed::sigmoid(trace.logits[v]);
        const bool clamped = s < embed::kProbEps || s > 1.0 - embed::kProbEps;
        dlogits[v] = clamped ? 0.0 : dscores[v] * s * (1.0 - s);
    }
    return backward_from_logits(params, view, inputs, trace, dlogits);
}

template <class T>
GfmGradients<T> backward_from_logits(const GfmParams<T>& params, const ModelView& view,
                                     const QueryInputs<T>& inputs, const ForwardTrace<T>& trace,
                                     std::span<const double> dlogits) {
    if (trace.params != &params || trace.params_version != params.version()) {
        throw ModelError("backward: stale trace (parameters changed since the forward pass)");
    }
    if (dlogits.size() != view.node_count || trace.states.size() != params.layers + 1) {
        throw ModelError("backward: trace does not match this model and graph");
    }
    const std::size_t n = view.node_count, d = params.dim;
    GfmGradients<T> grads;
    grads.params = GfmParams<T>::zeros(params.layers, d);
    grads.params.seed = params.seed;
    grads.query.assign(d, T{0});

    // Predictors.
    Matrix<T> d_state(n, d);
    for (std::size_t t = 0; t < graph::kNodeTypeCount; ++t) {
        const auto& rows = trace.type_rows[t];
        if (rows.empty()) continue;
        Matrix<T> dy(rows.size(), 1);
        for (std::size_t i = 0; i < rows.size(); ++i) dy(i, 0) = static_cast<T>(dlogits[rows[i]]);
        auto back = numerics::mlp_backward(params.predictor[t], trace.predictor_caches[t], dy);
        grads.params.predictor[t] = std::move(back.param_grads);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto g = back.input_grad.row(i);
            auto ds = d_state.row(rows[i]);
            for (std::size_t c = 0; c < d; ++c) {
                ds[c] += g[c];
                grads.query[c] += g[2 * d + c];
            }
        }
    }

    // Message-passing layers, last to first.
    for (std::size_t l = params.layers; l >= 1; --l) {
        const Matrix<T>& prev = trace.states[l - 1];
        const Matrix<T>& rel_states = trace.relation_states[l - 1];
        auto upd = numerics::mlp_backward(params.update[l - 1], trace.update_caches[l - 1], d_state);
        grads.params.update[l - 1] = std::move(upd.param_grads);
        Matrix<T> d_prev(n, d), d_agg(n, d);
        for (std::size_t v = 0; v < n; ++v) {
            const auto g = upd.input_grad.row(v);
            std::copy(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(d), d_prev.row(v).begin());
            std::copy(g.begin() + static_cast<std::ptrdiff_t>(d), g.end(), d_agg.row(v).begin());
        }
        // dH[u] += sum_{e: neighbor=u} dA[target] * R[rel]
        const Matrix<T> d_from_msgs =
            numerics::gather_product_sum(d_agg, view.target, rel_states, view.rel, view.by_neighbor);
        for (std::size_t i = 0; i < d_prev.size(); ++i) d_prev.data()[i] += d_from_msgs.data()[i];
        // dR[r] = sum_{e: rel=r} dA[target] * H[neighbor]
        const Matrix<T> d_rel = numerics::gather_product_sum(d_agg, view.target, prev, view.neighbor, view.by_rel);
        auto rel_back = numerics::mlp_backward(params.relation[l - 1], trace.relation_caches[l - 1], d_rel);
        grads.params.relation[l - 1] = std::move(rel_back.param_grads);
        d_state = std::move(d_prev);
    }

    auto init_back = numerics::mlp_backward(params.init, trace.init_cache, d_state);
    grads.params.init = std::move(init_back.param_grads);
    for (NodeId s : inputs.seeds) {
        const auto g = init_back.input_grad.row(s);
        for (std::size_t c = 0; c < d; ++c) grads.query[c] += g[d + c];
    }
    // A seed listed twice still contributes once.
    std::vector<NodeId> seeds(inputs.seeds.begin(), inputs.seeds.end());
    std::sort(seeds.begin(), seeds.end());
    for (std::size_t i = 1; i < seeds.size(); ++i) {
        if (seeds[i] == seeds[i - 1]) {
            const auto g = init_back.input_grad.row(seeds[i]);
            for (std::size_t c = 0; c < d; ++c) grads.query[c] -= g[d + c];
        }
    }
    return grads;
}

#define QUADGFM_GFM_INSTANTIATE(T)                                                                                  \
    template Matrix<T> init_node_states(const GfmParams<T>&, const Matrix<T>&, std::span<const T>,                 \
                                        std::span<const NodeId>);                                                  \
    template Matrix<T> relation_embed_layer(const GfmParams<T>&, const Matrix<T>&, std::size_t);                   \
    template Matrix<T> aggregate_messages(const ModelView&, const Matrix<T>&, const Matrix<T>&, Reduction);        \
    template Matrix<T> update_states(const GfmParams<T>&, std::size_t, const Matrix<T>&, const Matrix<T>&);        \
    template Matrix<T> propagate_layer(const GfmParams<T>&, const ModelView&, const Matrix<T>&, const Matrix<T>&,  \
                                       std::size_t, Reduction);                                                    \
    template std::vector<double> predict_scores(const GfmParams<T>&, std::span<const NodeType>, const Matrix<T>&,  \
                                                const Matrix<T>&, std::span<const T>);                             \
    template ForwardResult<T> forward(const GfmParams<T>&, const ModelView&, const QueryInputs<T>&,                \
                                      const ForwardOptions&);                                                      \
    template GfmGradients<T> backward(const GfmParams<T>&, const ModelView&, const QueryInputs<T>&,                \
                                      const ForwardTrace<T>&, std::span<const double>);                            \
    template GfmGradients<T> backward_from_logits(const GfmParams<T>&, const ModelView&, const QueryInputs<T>&,    \
                                                  const ForwardTrace<T>&, std::span<const double>);

QUADGFM_GFM_INSTANTIATE(float)
QUADGFM_GFM_INSTANTIATE(double)

}  // namespace quadgfm::gfm
