#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace shapex {

// Adam over a fixed list of parameter blocks. Moment buffers are sized on the
// first step; the block layout must not change afterwards.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    template <typename Blocks>
    void step(const Blocks& params, const Blocks& grads) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.values.size(), 0.0);
                v_.emplace_back(p.values.size(), 0.0);
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, double(t_));
        const double c2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t b = 0; b < params.size(); ++b) {
            auto p = params[b].values;
            auto g = grads[b].values;
            auto& m = m_[b];
            auto& v = v_[b];
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
        }
    }

    std::size_t steps() const noexcept { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace shapex
