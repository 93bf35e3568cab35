#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "quadgfm/numerics/matrix.hpp"

namespace quadgfm::numerics {

// Affine layer y = x W + b with W stored input-major (in x out).
template <class T> struct Linear {
    Matrix<T> weight;
    std::vector<T> bias;

    std::size_t in_dim() const { return weight.rows(); }
    std::size_t out_dim() const { return weight.cols(); }
    std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

// ReLU between layers, identity after the last one.
template <class T> struct Mlp {
    std::vector<Linear<T>> layers;

    // Zero-valued MLP with the given layer widths, e.g. {2d, d, d}.
    static Mlp zeros(std::span<const std::size_t> widths);
    // Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases.
    static Mlp kaiming(std::span<const std::size_t> widths, std::mt19937_64& rng);

    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }
    std::size_t parameter_count() const;
    Mlp zeros_like() const;

    template <class U> Mlp<U> cast() const {
        Mlp<U> out;
        for (const auto& l : layers) {
            out.layers.push_back({l.weight.template cast<U>(), std::vector<U>(l.bias.begin(), l.bias.end())});
        }
        return out;
    }
};

template <class T> struct MlpCache {
    std::vector<Matrix<T>> inputs;     // input seen by each layer
    std::vector<Matrix<T>> preact;     // pre-activation of each hidden layer
};

template <class T> struct MlpForward {
    Matrix<T> output;
    MlpCache<T> cache;
};

template <class T> struct MlpBackward {
    Matrix<T> input_grad;
    Mlp<T> param_grads;
};

template <class T> MlpForward<T> mlp_forward(const Mlp<T>& params, const Matrix<T>& x);
// Forward without keeping a cache.
template <class T> Matrix<T> mlp_apply(const Mlp<T>& params, const Matrix<T>& x);
template <class T>
MlpBackward<T> mlp_backward(const Mlp<T>& params, const MlpCache<T>& cache, const Matrix<T>& dy);

// Round all weights through bf16 storage (float only).
void quantize_bf16(Mlp<float>& params);

// Named view over one contiguous parameter tensor.
template <class T> struct ParamBlock {
    std::string name;
    std::span<T> values;
};

// Appends the weight and bias blocks of `mlp` as "<prefix>.<layer>.w/.b".
template <class T>
void append_blocks(Mlp<T>& mlp, const std::string& prefix, std::vector<ParamBlock<T>>& out) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        out.push_back({prefix + "." + std::to_string(i) + ".w", mlp.layers[i].weight.values()});
        out.push_back({prefix + "." + std::to_string(i) + ".b", mlp.layers[i].bias});
    }
}

}  // namespace quadgfm::numerics
