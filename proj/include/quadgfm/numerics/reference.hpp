#pragma once

// Serial reference kernels, kept for equivalence tests and benchmarks.

#include <cstdint>
#include <span>

#include "quadgfm/numerics/bf16.hpp"
#include "quadgfm/numerics/matrix.hpp"

namespace quadgfm::numerics::ref {

template <class S> Matrix<accum_t<S>> matmul(const Matrix<S>& x, const Matrix<S>& w) {
    require_shape(x.cols() == w.rows(), "matmul: inner dimensions differ");
    Matrix<accum_t<S>> y(x.rows(), w.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) {
            accum_t<S> acc{0};
            for (std::size_t k = 0; k < x.cols(); ++k) acc += widen(x(i, k)) * widen(w(k, j));
            y(i, j) = acc;
        }
    return y;
}

template <class S> Matrix<accum_t<S>> matmul_tn(const Matrix<S>& x, const Matrix<S>& dy) {
    require_shape(x.rows() == dy.rows(), "matmul_tn: row counts differ");
    Matrix<accum_t<S>> out(x.cols(), dy.cols());
    for (std::size_t k = 0; k < x.cols(); ++k)
        for (std::size_t j = 0; j < dy.cols(); ++j) {
            accum_t<S> acc{0};
            for (std::size_t i = 0; i < x.rows(); ++i) acc += widen(x(i, k)) * widen(dy(i, j));
            out(k, j) = acc;
        }
    return out;
}

template <class S> Matrix<accum_t<S>> matmul_nt(const Matrix<S>& dy, const Matrix<S>& w) {
    require_shape(dy.cols() == w.cols(), "matmul_nt: column counts differ");
    Matrix<accum_t<S>> out(dy.rows(), w.rows());
    for (std::size_t i = 0; i < dy.rows(); ++i)
        for (std::size_t k = 0; k < w.rows(); ++k) {
            accum_t<S> acc{0};
            for (std::size_t j = 0; j < dy.cols(); ++j) acc += widen(dy(i, j)) * widen(w(k, j));
            out(i, k) = acc;
        }
    return out;
}

// Scatter in ascending edge order.
template <class S>
Matrix<accum_t<S>> segment_sum(const Matrix<S>& messages, std::span<const std::uint32_t> dst,
                               std::size_t n_nodes) {
    require_shape(messages.rows() == dst.size(), "segment_sum: one destination per message row");
    Matrix<accum_t<S>> out(n_nodes, messages.cols());
    for (std::size_t e = 0; e < dst.size(); ++e) {
        if (dst[e] >= n_nodes) throw std::out_of_range("segment_sum: destination id out of range");
        for (std::size_t c = 0; c < messages.cols(); ++c) out(dst[e], c) += widen(messages(e, c));
    }
    return out;
}

template <class T>
Matrix<T> gather_product_sum(const Matrix<T>& a, std::span<const std::uint32_t> a_idx,
                             const Matrix<T>& b, std::span<const std::uint32_t> b_idx,
                             std::span<const std::uint32_t> group_of, std::size_t n_groups) {
    Matrix<T> out(n_groups, a.cols());
    for (std::size_t e = 0; e < group_of.size(); ++e)
        for (std::size_t c = 0; c < a.cols(); ++c)
            out(group_of[e], c) += a(a_idx[e], c) * b(b_idx[e], c);
    return out;
}

}  // namespace quadgfm::numerics::ref
