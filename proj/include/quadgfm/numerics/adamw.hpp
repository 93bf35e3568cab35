#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "quadgfm/numerics/mlp.hpp"

namespace quadgfm::numerics {

struct AdamWConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// AdamW with decoupled weight decay:
//   p <- p - lr * wd * p - lr * mhat / (sqrt(vhat) + eps)
// Moments are kept in double regardless of the parameter type.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    template <class T> void step(std::span<const ParamBlock<T>> params, std::span<const ParamBlock<T>> grads);

    std::uint64_t steps() const { return step_; }
    const AdamWConfig& config() const { return config_; }

private:
    AdamWConfig config_;
    std::uint64_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

// Convenience for a single scalar parameter.
double adamw_scalar_step(double p, double g, AdamW& opt);

}  // namespace quadgfm::numerics
