#include "quadgfm/numerics/kernels.hpp"

#include <stdexcept>

#include "quadgfm/numerics/exact_sum.hpp"

namespace quadgfm::numerics {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 14;

}  // namespace

SegmentIndex SegmentIndex::build(std::span<const std::uint32_t> keys, std::size_t n_segments) {
    SegmentIndex index;
    index.offsets_.assign(n_segments + 1, 0);
    for (std::uint32_t k : keys) {
        if (k >= n_segments) {
            throw std::out_of_range("segment key " + std::to_string(k) + " >= " +
                                    std::to_string(n_segments));
        }
        ++index.offsets_[k + 1];
    }
    for (std::size_t s = 0; s < n_segments; ++s) index.offsets_[s + 1] += index.offsets_[s];
    index.items_.resize(keys.size());
    std::vector<std::size_t> cursor(index.offsets_.begin(), index.offsets_.end() - 1);
    for (std::size_t e = 0; e < keys.size(); ++e) {
        index.items_[cursor[keys[e]]++] = static_cast<std::uint32_t>(e);
    }
    return index;
}

template <class S> Matrix<accum_t<S>> matmul(const Matrix<S>& x, const Matrix<S>& w) {
    using A = accum_t<S>;
    require_shape(x.cols() == w.rows(), "matmul: inner dimensions differ (" +
                                            std::to_string(x.cols()) + " vs " +
                                            std::to_string(w.rows()) + ")");
    const std::size_t n = x.rows(), k_dim = x.cols(), m = w.cols();
    Matrix<A> y(n, m);
    const bool par = n * k_dim * m > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t i = 0; i < n; ++i) {
        A* out = y.data() + i * m;
        const S* xi = x.data() + i * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const A xv = widen(xi[k]);
            const S* wk = w.data() + k * m;
            for (std::size_t j = 0; j < m; ++j) out[j] += xv * widen(wk[j]);
        }
    }
    return y;
}

template <class S> Matrix<accum_t<S>> matmul_tn(const Matrix<S>& x, const Matrix<S>& dy) {
    using A = accum_t<S>;
    require_shape(x.rows() == dy.rows(), "matmul_tn: row counts differ");
    const std::size_t n = x.rows(), k_dim = x.cols(), m = dy.cols();
    Matrix<A> out(k_dim, m);
    const bool par = n * k_dim * m > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t k = 0; k < k_dim; ++k) {
        A* o = out.data() + k * m;
        for (std::size_t i = 0; i < n; ++i) {
            const A xv = widen(x(i, k));
            if (xv == A{0}) continue;
            const S* g = dy.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += xv * widen(g[j]);
        }
    }
    return out;
}

template <class S> Matrix<accum_t<S>> matmul_nt(const Matrix<S>& dy, const Matrix<S>& w) {
    using A = accum_t<S>;
    require_shape(dy.cols() == w.cols(), "matmul_nt: column counts differ");
    const std::size_t n = dy.rows(), m = dy.cols(), k_dim = w.rows();
    Matrix<A> out(n, k_dim);
    const bool par = n * k_dim * m > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t i = 0; i < n; ++i) {
        const S* g = dy.data() + i * m;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const S* wk = w.data() + k * m;
            A acc{0};
            for (std::size_t j = 0; j < m; ++j) acc += widen(g[j]) * widen(wk[j]);
            out(i, k) = acc;
        }
    }
    return out;
}

template <class T> void add_row_vector(Matrix<T>& y, std::span<const T> bias) {
    require_shape(bias.size() == y.cols(), "add_row_vector: bias length differs from columns");
    for (std::size_t i = 0; i < y.rows(); ++i) {
        T* r = y.data() + i * y.cols();
        for (std::size_t j = 0; j < y.cols(); ++j) r[j] += bias[j];
    }
}

template <class S> std::vector<accum_t<S>> column_sums(const Matrix<S>& m) {
    std::vector<accum_t<S>> sums(m.cols(), accum_t<S>{0});
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) sums[j] += widen(m(i, j));
    return sums;
}

template <class T> Matrix<T> distmult_message(const Matrix<T>& src, const Matrix<T>& rel) {
    require_shape(src.rows() == rel.rows() && src.cols() == rel.cols(),
                  "distmult_message: operand shapes differ");
    Matrix<T> out(src.rows(), src.cols());
    const auto a = src.values();
    const auto b = rel.values();
    auto o = out.values();
#pragma omp parallel for schedule(static) if (o.size() > kParallelWork)
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
    return out;
}

template <class S>
Matrix<accum_t<S>> segment_sum(const Matrix<S>& messages, const SegmentIndex& groups,
                               Reduction mode) {
    using A = accum_t<S>;
    require_shape(groups.item_count() == messages.rows(),
                  "segment_sum: index covers a different number of messages");
    const std::size_t d = messages.cols();
    Matrix<A> out(groups.segments(), d);
    const bool par = messages.size() > kParallelWork;
    if (mode == Reduction::Fast) {
#pragma omp parallel for schedule(static) if (par)
        for (std::size_t v = 0; v < groups.segments(); ++v) {
            A* o = out.data() + v * d;
            for (std::uint32_t e : groups.segment(v)) {
                const S* m = messages.data() + std::size_t{e} * d;
                for (std::size_t c = 0; c < d; ++c) o[c] += widen(m[c]);
            }
        }
    } else {
#pragma omp parallel for schedule(static) if (par)
        for (std::size_t v = 0; v < groups.segments(); ++v) {
            ExactSum<A> acc;
            for (std::size_t c = 0; c < d; ++c) {
                acc.clear();
                for (std::uint32_t e : groups.segment(v)) acc.add(widen(messages(e, c)));
                out(v, c) = acc.result();
            }
        }
    }
    return out;
}

template <class S>
Matrix<accum_t<S>> segment_sum(const Matrix<S>& messages, std::span<const std::uint32_t> dst,
                               std::size_t n_nodes, Reduction mode) {
    require_shape(messages.rows() == dst.size(), "segment_sum: one destination per message row");
    return segment_sum(messages, SegmentIndex::build(dst, n_nodes), mode);
}

template <class T>
Matrix<T> gather_product_sum(const Matrix<T>& a, std::span<const std::uint32_t> a_idx,
                             const Matrix<T>& b, std::span<const std::uint32_t> b_idx,
                             const SegmentIndex& groups, Reduction mode) {
    require_shape(a.cols() == b.cols(), "gather_product_sum: operand widths differ");
    require_shape(a_idx.size() == b_idx.size() && a_idx.size() == groups.item_count(),
                  "gather_product_sum: index lengths differ");
    const std::size_t d = a.cols();
    Matrix<T> out(groups.segments(), d);
    const bool par = groups.item_count() * d > kParallelWork;
    if (mode == Reduction::Fast) {
#pragma omp parallel for schedule(static) if (par)
        for (std::size_t s = 0; s < groups.segments(); ++s) {
            T* o = out.data() + s * d;
            for (std::uint32_t e : groups.segment(s)) {
                const T* x = a.data() + std::size_t{a_idx[e]} * d;
                const T* y = b.data() + std::size_t{b_idx[e]} * d;
                for (std::size_t c = 0; c < d; ++c) o[c] += x[c] * y[c];
            }
        }
    } else {
#pragma omp parallel for schedule(static) if (par)
        for (std::size_t s = 0; s < groups.segments(); ++s) {
            ExactSum<T> acc;
            for (std::size_t c = 0; c < d; ++c) {
                acc.clear();
                for (std::uint32_t e : groups.segment(s)) acc.add(a(a_idx[e], c) * b(b_idx[e], c));
                out(s, c) = acc.result();
            }
        }
    }
    return out;
}

void quantize_bf16(std::span<float> values) {
    for (float& v : values) v = round_bf16(v);
}

void quantize_bf16(Matrix<float>& m) { quantize_bf16(m.values()); }

Matrix<Bf16> to_bf16(const Matrix<float>& m) {
    Matrix<Bf16> out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = Bf16(m.data()[i]);
    return out;
}

#define QUADGFM_STORAGE_KERNELS(S)                                                               \
    template Matrix<accum_t<S>> matmul(const Matrix<S>&, const Matrix<S>&);                      \
    template Matrix<accum_t<S>> matmul_tn(const Matrix<S>&, const Matrix<S>&);                   \
    template Matrix<accum_t<S>> matmul_nt(const Matrix<S>&, const Matrix<S>&);                   \
    template std::vector<accum_t<S>> column_sums(const Matrix<S>&);                              \
    template Matrix<accum_t<S>> segment_sum(const Matrix<S>&, std::span<const std::uint32_t>,    \
                                            std::size_t, Reduction);                             \
    template Matrix<accum_t<S>> segment_sum(const Matrix<S>&, const SegmentIndex&, Reduction);

#define QUADGFM_VALUE_KERNELS(T)                                                                 \
    template void add_row_vector(Matrix<T>&, std::span<const T>);                                \
    template Matrix<T> distmult_message(const Matrix<T>&, const Matrix<T>&);                     \
    template Matrix<T> gather_product_sum(const Matrix<T>&, std::span<const std::uint32_t>,      \
                                          const Matrix<T>&, std::span<const std::uint32_t>,      \
                                          const SegmentIndex&, Reduction);

QUADGFM_STORAGE_KERNELS(float)
QUADGFM_STORAGE_KERNELS(double)
QUADGFM_STORAGE_KERNELS(Bf16)
QUADGFM_VALUE_KERNELS(float)
QUADGFM_VALUE_KERNELS(double)

}  // namespace quadgfm::numerics
