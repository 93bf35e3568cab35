#include "quadgfm/numerics/mlp.hpp"

#include <cmath>

#include "quadgfm/numerics/kernels.hpp"

namespace quadgfm::numerics {

template <class T> Mlp<T> Mlp<T>::zeros(std::span<const std::size_t> widths) {
    require_shape(widths.size() >= 2, "mlp needs at least an input and an output width");
    Mlp<T> mlp;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        mlp.layers.push_back({Matrix<T>(widths[i], widths[i + 1]), std::vector<T>(widths[i + 1], T{0})});
    }
    return mlp;
}

template <class T> Mlp<T> Mlp<T>::kaiming(std::span<const std::size_t> widths, std::mt19937_64& rng) {
    Mlp<T> mlp = zeros(widths);
    for (auto& layer : mlp.layers) {
        const double bound = std::sqrt(6.0 / static_cast<double>(layer.in_dim()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (T& w : layer.weight.values()) w = static_cast<T>(dist(rng));
    }
    return mlp;
}

template <class T> std::size_t Mlp<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
}

template <class T> Mlp<T> Mlp<T>::zeros_like() const {
    Mlp<T> out;
    for (const auto& l : layers) {
        out.layers.push_back({Matrix<T>(l.weight.rows(), l.weight.cols()), std::vector<T>(l.bias.size(), T{0})});
    }
    return out;
}

namespace {

template <class T> Matrix<T> affine(const Linear<T>& layer, const Matrix<T>& x) {
    Matrix<T> y = matmul(x, layer.weight);
    add_row_vector<T>(y, layer.bias);
    return y;
}

template <class T> Matrix<T> relu(const Matrix<T>& x) {
    Matrix<T> y = x;
    for (T& v : y.values()) v = v > T{0} ? v : T{0};
    return y;
}

}  // namespace

template <class T> MlpForward<T> mlp_forward(const Mlp<T>& params, const Matrix<T>& x) {
    require_shape(x.cols() == params.in_dim(), "mlp_forward: input has " + std::to_string(x.cols()) +
                                                    " columns, mlp expects " +
                                                    std::to_string(params.in_dim()));
    MlpForward<T> fwd;
    Matrix<T> h = x;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        fwd.cache.inputs.push_back(h);
        Matrix<T> z = affine(params.layers[i], h);
        if (i + 1 < params.layers.size()) {
            h = relu(z);
            fwd.cache.preact.push_back(std::move(z));
        } else {
            h = std::move(z);
        }
    }
    fwd.output = std::move(h);
    return fwd;
}

template <class T> Matrix<T> mlp_apply(const Mlp<T>& params, const Matrix<T>& x) {
    require_shape(x.cols() == params.in_dim(), "mlp_apply: input width mismatch");
    Matrix<T> h = affine(params.layers[0], x);
    for (std::size_t i = 1; i < params.layers.size(); ++i) h = affine(params.layers[i], relu(h));
    return h;
}

template <class T>
MlpBackward<T> mlp_backward(const Mlp<T>& params, const MlpCache<T>& cache, const Matrix<T>& dy) {
    require_shape(cache.inputs.size() == params.layers.size(), "mlp_backward: cache from a different mlp");
    require_shape(dy.cols() == params.out_dim() && dy.rows() == cache.inputs.front().rows(),
                  "mlp_backward: output gradient shape mismatch");
    MlpBackward<T> back;
    back.param_grads.layers.resize(params.layers.size());
    Matrix<T> g = dy;
    for (std::size_t i = params.layers.size(); i-- > 0;) {
        const auto& layer = params.layers[i];
        auto& grad = back.param_grads.layers[i];
        grad.weight = matmul_tn(cache.inputs[i], g);
        grad.bias = column_sums(g);
        Matrix<T> dx = matmul_nt(g, layer.weight);
        if (i > 0) {
            const Matrix<T>& z = cache.preact[i - 1];
            for (std::size_t k = 0; k < dx.size(); ++k) {
                if (!(z.data()[k] > T{0})) dx.data()[k] = T{0};
            }
        }
        g = std::move(dx);
    }
    back.input_grad = std::move(g);
    return back;
}

void quantize_bf16(Mlp<float>& params) {
    for (auto& l : params.layers) {
        quantize_bf16(l.weight);
        quantize_bf16(std::span<float>(l.bias));
    }
}

template struct Mlp<float>;
template struct Mlp<double>;
template MlpForward<float> mlp_forward(const Mlp<float>&, const Matrix<float>&);
template MlpForward<double> mlp_forward(const Mlp<double>&, const Matrix<double>&);
template Matrix<float> mlp_apply(const Mlp<float>&, const Matrix<float>&);
template Matrix<double> mlp_apply(const Mlp<double>&, const Matrix<double>&);
template MlpBackward<float> mlp_backward(const Mlp<float>&, const MlpCache<float>&, const Matrix<float>&);
template MlpBackward<double> mlp_backward(const Mlp<double>&, const MlpCache<double>&, const Matrix<double>&);

}  // namespace quadgfm::numerics
