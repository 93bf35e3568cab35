#include "quadgfm/numerics/adamw.hpp"

#include <cmath>

namespace quadgfm::numerics {

template <class T>
void AdamW::step(std::span<const ParamBlock<T>> params, std::span<const ParamBlock<T>> grads) {
    require_shape(params.size() == grads.size(), "adamw: parameter and gradient block counts differ");
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.values.size(), 0.0);
            v_.emplace_back(p.values.size(), 0.0);
        }
    }
    require_shape(m_.size() == params.size(), "adamw: block count changed between steps");
    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto p = params[b].values;
        auto g = grads[b].values;
        require_shape(p.size() == g.size() && p.size() == m_[b].size(),
                      "adamw: shape mismatch in block " + params[b].name);
        auto& m = m_[b];
        auto& v = v_[b];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double pi = static_cast<double>(p[i]);
            pi -= config_.lr * config_.weight_decay * pi;
            pi -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
            p[i] = static_cast<T>(pi);
        }
    }
}

double adamw_scalar_step(double p, double g, AdamW& opt) {
    std::vector<ParamBlock<double>> params{{"p", std::span<double>(&p, 1)}};
    std::vector<ParamBlock<double>> grads{{"g", std::span<double>(&g, 1)}};
    opt.step<double>(params, grads);
    return p;
}

template void AdamW::step<float>(std::span<const ParamBlock<float>>, std::span<const ParamBlock<float>>);
template void AdamW::step<double>(std::span<const ParamBlock<double>>, std::span<const ParamBlock<double>>);

}  // namespace quadgfm::numerics
