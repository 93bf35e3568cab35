#pragma once

// Query-dependent graph foundation model: node-state initialization from
// text and query embeddings, L layers of relational message passing with
// per-layer relation MLPs, and one relevance predictor per node type.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "quadgfm/numerics/kernels.hpp"
#include "quadgfm/numerics/mlp.hpp"
#include "quadgfm/quadgraph.hpp"

namespace quadgfm::gfm {

using graph::NodeId;
using graph::NodeType;
using numerics::Matrix;
using numerics::Mlp;
using numerics::ParamBlock;
using numerics::Reduction;

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Graph as seen by the model: every edge (u, r, w) also appears as
// (w, r^-1, u), with r^-1 = r + |R|. View edge i routes the state of
// neighbor[i] to target[i] through relation rel[i]. Original edges come
// first, in graph order, followed by their inverses.
struct ModelView {
    std::size_t node_count = 0;
    std::size_t relation_count = 0;  // 2|R|
    std::vector<std::uint32_t> target;
    std::vector<std::uint32_t> neighbor;
    std::vector<std::uint32_t> rel;
    std::vector<NodeType> types;
    numerics::SegmentIndex by_target;
    numerics::SegmentIndex by_neighbor;
    numerics::SegmentIndex by_rel;

    std::size_t edge_count() const { return target.size(); }
};

ModelView augment_with_inverses(const graph::QuadGraph& graph);

template <class T> struct GfmParams {
    std::size_t layers = 0;
    std::size_t dim = 0;
    std::uint64_t seed = 0;
    Mlp<T> init;                                         // 2d -> d, single affine layer
    std::vector<Mlp<T>> relation;                        // per layer: d -> d -> d
    std::vector<Mlp<T>> update;                          // per layer: 2d -> d -> d
    std::array<Mlp<T>, graph::kNodeTypeCount> predictor;  // per type: 3d -> 1

    // Kaiming-uniform weights, zero biases.
    static GfmParams create(std::size_t layers, std::size_t dim, std::uint64_t seed);
    static GfmParams zeros(std::size_t layers, std::size_t dim);

    // Closed form: 2d^2 + d + L(5d^2 + 4d) + 4(3d + 1).
    static std::size_t count(std::size_t layers, std::size_t dim);
    std::size_t parameter_count() const;

    // Mutable views over every tensor, in a fixed order. Taking mutable
    // views marks existing forward traces as stale.
    std::vector<ParamBlock<T>> blocks();
    std::vector<ParamBlock<const T>> blocks() const;

    std::uint64_t version() const { return version_; }

    template <class U> GfmParams<U> cast() const {
        GfmParams<U> out;
        out.layers = layers;
        out.dim = dim;
        out.seed = seed;
        out.init = init.template cast<U>();
        for (const auto& m : relation) out.relation.push_back(m.template cast<U>());
        for (const auto& m : update) out.update.push_back(m.template cast<U>());
        for (std::size_t t = 0; t < predictor.size(); ++t) out.predictor[t] = predictor[t].template cast<U>();
        return out;
    }

private:
    std::uint64_t version_ = 0;
};

struct ForwardOptions {
    Reduction reduction = Reduction::Fast;
    // Store parameters, inputs, node states and messages as bfloat16 while
    // accumulating in float. Only meaningful for float models.
    bool bf16_storage = false;
};

// Per-query inputs. node_features: |V| x d, relation_features: 2|R| x d.
template <class T> struct QueryInputs {
    const Matrix<T>& node_features;
    const Matrix<T>& relation_features;
    std::span<const T> query;
    std::span<const NodeId> seeds;
};

template <class T> struct ForwardTrace {
    const GfmParams<T>* params = nullptr;
    std::uint64_t params_version = 0;
    Matrix<T> init_input;
    numerics::MlpCache<T> init_cache;
    std::vector<Matrix<T>> states;            // H^0 .. H^L
    std::vector<Matrix<T>> relation_states;   // H_R^1 .. H_R^L
    std::vector<numerics::MlpCache<T>> relation_caches;
    std::vector<numerics::MlpCache<T>> update_caches;
    std::array<std::vector<NodeId>, graph::kNodeTypeCount> type_rows;
    std::array<numerics::MlpCache<T>, graph::kNodeTypeCount> predictor_caches;
    std::vector<double> logits;
    std::vector<double> scores;
};

template <class T> struct ForwardResult {
    std::vector<double> scores;  // clamped to [1e-7, 1 - 1e-7]
    ForwardTrace<T> trace;
};

template <class T> struct GfmGradients {
    GfmParams<T> params;
    std::vector<T> query;
};

// ---- individual stages --------------------------------------------------

// h_v^0 = Init([h_v ; 1{v in V_q} h_q]) for every row of node_features.
template <class T>
Matrix<T> init_node_states(const GfmParams<T>& params, const Matrix<T>& node_features,
                           std::span<const T> query, std::span<const NodeId> seeds);

// H_R^l = g^l(H_R), always from the base relation embeddings; 1 <= l <= L.
template <class T>
Matrix<T> relation_embed_layer(const GfmParams<T>& params, const Matrix<T>& relation_features, std::size_t l);

// Sum of DistMult messages h_{v'} (*) h_r into each target v.
template <class T>
Matrix<T> aggregate_messages(const ModelView& view, const Matrix<T>& states, const Matrix<T>& relation_states,
                             Reduction reduction);

// h^l = Update_l([h^{l-1} ; aggregate]).
template <class T>
Matrix<T> update_states(const GfmParams<T>& params, std::size_t l, const Matrix<T>& previous,
                        const Matrix<T>& aggregate);

template <class T>
Matrix<T> propagate_layer(const GfmParams<T>& params, const ModelView& view, const Matrix<T>& previous,
                          const Matrix<T>& relation_states, std::size_t l, Reduction reduction = Reduction::Fast);

// p(v) = sigmoid(Predictor_{type(v)}([h_v^L ; h_v ; h_q])), clamped.
template <class T>
std::vector<double> predict_scores(const GfmParams<T>& params, std::span<const NodeType> types,
                                   const Matrix<T>& final_states, const Matrix<T>& node_features,
                                   std::span<const T> query);

// ---- full model --------------------------------------------------------

template <class T>
ForwardResult<T> forward(const GfmParams<T>& params, const ModelView& view, const QueryInputs<T>& inputs,
                         const ForwardOptions& options = {});

// Gradients of a scalar loss given dL/dp for every node.
template <class T>
GfmGradients<T> backward(const GfmParams<T>& params, const ModelView& view, const QueryInputs<T>& inputs,
                         const ForwardTrace<T>& trace, std::span<const double> dscores);

// Same, given dL/dlogit directly.
template <class T>
GfmGradients<T> backward_from_logits(const GfmParams<T>& params, const ModelView& view,
                                     const QueryInputs<T>& inputs, const ForwardTrace<T>& trace,
                                     std::span<const double> dlogits);

// ---- checkpoints -------------------------------------------------------

// "GFM1" | u64 header_bytes | JSON {layers, dim, seed, blocks} | f32 blocks
void save_checkpoint(const GfmParams<float>& params, const std::filesystem::path& path);
GfmParams<float> load_checkpoint(const std::filesystem::path& path);
// Rejects a checkpoint whose (layers, dim) differ from the expected shape.
GfmParams<float> load_checkpoint(const std::filesystem::path& path, std::size_t layers, std::size_t dim);

}  // namespace quadgfm::gfm
