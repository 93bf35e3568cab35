#include "quadgfm/numerics/finite_diff.hpp"

#include <algorithm>
#include <cmath>

namespace quadgfm::numerics {

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const ParamBlock<double>> params,
                                  std::span<const ParamBlock<double>> grads,
                                  const GradCheckOptions& options) {
    require_shape(params.size() == grads.size(), "finite_diff_check: block counts differ");
    GradCheckReport report;
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto p = params[b].values;
        auto g = grads[b].values;
        require_shape(p.size() == g.size(), "finite_diff_check: block " + params[b].name + " shape mismatch");
        BlockCheck check{params[b].name};
        std::size_t stride = 1;
        if (options.max_entries_per_block > 0 && p.size() > options.max_entries_per_block) {
            stride = (p.size() + options.max_entries_per_block - 1) / options.max_entries_per_block;
        }
        for (std::size_t i = 0; i < p.size(); i += stride) {
            const double saved = p[i];
            p[i] = saved + options.step;
            const double up = loss();
            p[i] = saved - options.step;
            const double down = loss();
            p[i] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double analytic = g[i];
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), options.abs_floor});
            const double rel = std::fabs(analytic - numeric) / denom;
            if (rel > check.max_rel_error || !std::isfinite(rel)) {
                check.max_rel_error = rel;
                check.worst_index = i;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
        report.blocks.push_back(std::move(check));
    }
    report.passed = report.max_rel_error < options.tolerance;
    return report;
}

}  // namespace quadgfm::numerics
