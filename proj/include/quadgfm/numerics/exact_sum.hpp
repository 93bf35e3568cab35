#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace quadgfm::numerics {

// Exactly-rounded floating-point summation over non-overlapping partials
// (Shewchuk's grow-expansion with the fsum final rounding). The rounded
// result does not depend on the order in which terms or partial expansions
// are added. Requires round-to-nearest and no intermediate overflow.
template <class T> class ExactSum {
public:
    void add(T x) {
        std::size_t kept = 0;
        for (std::size_t j = 0; j < partials_.size(); ++j) {
            T y = partials_[j];
            if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
            const T hi = x + y;
            const T lo = y - (hi - x);
            if (lo != T{0}) partials_[kept++] = lo;
            x = hi;
        }
        partials_.resize(kept);
        partials_.push_back(x);
    }

    void merge(std::span<const T> other) {
        for (T x : other) add(x);
    }

    std::span<const T> partials() const { return partials_; }
    void clear() { partials_.clear(); }

    T result() const {
        std::size_t n = partials_.size();
        if (n == 0) return T{0};
        T hi = partials_[--n];
        T lo{0};
        while (n > 0) {
            const T x = hi;
            const T y = partials_[--n];
            hi = x + y;
            const T yr = hi - x;
            lo = y - yr;
            if (lo != T{0}) break;
        }
        // Half-way case: round-half-even may have gone the wrong way given
        // the sign of the remaining partials.
        if (n > 0 && ((lo < T{0} && partials_[n - 1] < T{0}) ||
                      (lo > T{0} && partials_[n - 1] > T{0}))) {
            const T y = lo * T{2};
            const T x = hi + y;
            const T yr = x - hi;
            if (y == yr) hi = x;
        }
        return hi;
    }

private:
    std::vector<T> partials_;
};

}  // namespace quadgfm::numerics
