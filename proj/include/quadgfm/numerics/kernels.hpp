#pragma once

// Dense and edge-list kernels. Every kernel here is OpenMP-parallel over
// output rows (or output segments); the reduction order inside one output
// element is fixed and ascending, so results do not depend on thread count.
// Serial reference versions live in reference.hpp.

#include <cstdint>
#include <span>
#include <vector>

#include "quadgfm/numerics/bf16.hpp"
#include "quadgfm/numerics/matrix.hpp"

namespace quadgfm::numerics {

// Fast: plain accumulation in ascending item order within each segment.
// Deterministic: exactly-rounded sums, independent of item order and of how
// the items are split across workers.
enum class Reduction { Fast, Deterministic };

// Items grouped by key; within a group items keep ascending id order.
class SegmentIndex {
public:
    SegmentIndex() = default;
    static SegmentIndex build(std::span<const std::uint32_t> keys, std::size_t n_segments);

    std::size_t segments() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
    std::span<const std::uint32_t> segment(std::size_t s) const {
        return {items_.data() + offsets_[s], offsets_[s + 1] - offsets_[s]};
    }
    std::size_t item_count() const { return items_.size(); }

private:
    std::vector<std::size_t> offsets_;
    std::vector<std::uint32_t> items_;
};

// y = x * w
template <class S> Matrix<accum_t<S>> matmul(const Matrix<S>& x, const Matrix<S>& w);
// x^T * dy, the weight-gradient product
template <class S> Matrix<accum_t<S>> matmul_tn(const Matrix<S>& x, const Matrix<S>& dy);
// dy * w^T, the input-gradient product
template <class S> Matrix<accum_t<S>> matmul_nt(const Matrix<S>& dy, const Matrix<S>& w);

template <class T> void add_row_vector(Matrix<T>& y, std::span<const T> bias);
template <class S> std::vector<accum_t<S>> column_sums(const Matrix<S>& m);

// Elementwise product of per-edge rows (DistMult message).
template <class T> Matrix<T> distmult_message(const Matrix<T>& src, const Matrix<T>& rel);

// out[v] = sum of messages[e] over edges with dst[e] == v.
template <class S>
Matrix<accum_t<S>> segment_sum(const Matrix<S>& messages, std::span<const std::uint32_t> dst,
                               std::size_t n_nodes, Reduction mode = Reduction::Fast);
template <class S>
Matrix<accum_t<S>> segment_sum(const Matrix<S>& messages, const SegmentIndex& groups,
                               Reduction mode = Reduction::Fast);

// Fused gather-multiply-scatter:
//   out[s] = sum over items e in group s of a[a_idx[e]] (*) b[b_idx[e]]
// Used for message aggregation and both of its gradients without
// materializing the per-edge message matrix.
template <class T>
Matrix<T> gather_product_sum(const Matrix<T>& a, std::span<const std::uint32_t> a_idx,
                             const Matrix<T>& b, std::span<const std::uint32_t> b_idx,
                             const SegmentIndex& groups, Reduction mode = Reduction::Fast);

// Round every entry through bf16 storage.
void quantize_bf16(Matrix<float>& m);
void quantize_bf16(std::span<float> values);
Matrix<Bf16> to_bf16(const Matrix<float>& m);

}  // namespace quadgfm::numerics
