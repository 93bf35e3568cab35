#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "quadgfm/numerics/mlp.hpp"

namespace quadgfm::numerics {

struct BlockCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<BlockCheck> blocks;
    double max_rel_error = 0.0;
    bool passed = true;
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    // Relative errors use max(|analytic|, |numeric|, abs_floor) as denominator
    // so entries whose true gradient is exactly zero do not divide by noise.
    double abs_floor = 1e-6;
    // Check at most this many entries per block (evenly strided); 0 = all.
    std::size_t max_entries_per_block = 0;
};

// Central differences of `loss` with respect to every entry of `params`,
// compared against `grads`. `loss` must read the current values in `params`;
// entries are perturbed in place and restored.
GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const ParamBlock<double>> params,
                                  std::span<const ParamBlock<double>> grads,
                                  const GradCheckOptions& options = {});

}  // namespace quadgfm::numerics
