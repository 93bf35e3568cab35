#include <array>

#include "quadgfm/gfm.hpp"

namespace quadgfm::gfm {

namespace {

template <class T, class Make> GfmParams<T> assemble(std::size_t layers, std::size_t dim, Make make) {
    if (layers < 1) throw ModelError("the model needs at least one message-passing layer");
    if (dim < 1) throw ModelError("hidden dimension must be positive");
    GfmParams<T> p;
    p.layers = layers;
    p.dim = dim;
    const std::array<std::size_t, 2> init_w{2 * dim, dim};
    const std::array<std::size_t, 3> rel_w{dim, dim, dim};
    const std::array<std::size_t, 3> upd_w{2 * dim, dim, dim};
    const std::array<std::size_t, 2> pred_w{3 * dim, 1};
    p.init = make(std::span<const std::size_t>(init_w));
    for (std::size_t l = 0; l < layers; ++l) {
        p.relation.push_back(make(std::span<const std::size_t>(rel_w)));
        p.update.push_back(make(std::span<const std::size_t>(upd_w)));
    }
    for (auto& pred : p.predictor) pred = make(std::span<const std::size_t>(pred_w));
    return p;
}

}  // namespace

template <class T> GfmParams<T> GfmParams<T>::create(std::size_t layers, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto p = assemble<T>(layers, dim, [&](std::span<const std::size_t> w) { return Mlp<T>::kaiming(w, rng); });
    p.seed = seed;
    return p;
}

template <class T> GfmParams<T> GfmParams<T>::zeros(std::size_t layers, std::size_t dim) {
    return assemble<T>(layers, dim, [](std::span<const std::size_t> w) { return Mlp<T>::zeros(w); });
}

template <class T> std::size_t GfmParams<T>::count(std::size_t layers, std::size_t dim) {
    const std::size_t d = dim;
    return 2 * d * d + d + layers * (5 * d * d + 4 * d) + graph::kNodeTypeCount * (3 * d + 1);
}

template <class T> std::size_t GfmParams<T>::parameter_count() const {
    std::size_t n = init.parameter_count();
    for (const auto& m : relation) n += m.parameter_count();
    for (const auto& m : update) n += m.parameter_count();
    for (const auto& m : predictor) n += m.parameter_count();
    return n;
}

namespace {

template <class M, class V>
void add_mlp(M& mlp, const std::string& prefix, std::vector<ParamBlock<V>>& out) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        out.push_back({prefix + "." + std::to_string(i) + ".w", mlp.layers[i].weight.values()});
        out.push_back({prefix + "." + std::to_string(i) + ".b", std::span<V>(mlp.layers[i].bias)});
    }
}

template <class P, class V> std::vector<ParamBlock<V>> collect(P& p) {
    std::vector<ParamBlock<V>> out;
    add_mlp(p.init, "init", out);
    for (std::size_t l = 0; l < p.layers; ++l) {
        add_mlp(p.relation[l], "relation" + std::to_string(l + 1), out);
        add_mlp(p.update[l], "update" + std::to_string(l + 1), out);
    }
    for (NodeType t : graph::kNodeTypes) {
        add_mlp(p.predictor[static_cast<std::size_t>(t)], "predictor." + std::string(graph::to_string(t)), out);
    }
    return out;
}

}  // namespace

template <class T> std::vector<ParamBlock<T>> GfmParams<T>::blocks() {
    ++version_;
    return collect<GfmParams<T>, T>(*this);
}

template <class T> std::vector<ParamBlock<const T>> GfmParams<T>::blocks() const {
    return collect<const GfmParams<T>, const T>(*this);
}

template struct GfmParams<float>;
template struct GfmParams<double>;

}  // namespace quadgfm::gfm
