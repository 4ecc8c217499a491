#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fear/common.hpp"
#include "fear/layers.hpp"

namespace fear {

struct SgdConfig {
    double lr_max = 0.1;
    double lr_min = 0.0;
    double weight_decay = 0.0005;
    double momentum = 0.9;
    bool nesterov = true;
    std::int64_t total_steps = 1;

    void validate() const {
        if (!(0.0 <= lr_min && lr_min <= lr_max)) throw DomainError("sgd: need 0 <= lr_min <= lr_max");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("sgd: momentum must be in [0,1)");
        if (total_steps <= 0) throw DomainError("sgd: total_steps must be positive");
    }
};

// Cosine annealing from lr_max to lr_min over total_steps.
inline double cosine_lr(std::int64_t step, const SgdConfig& cfg) {
    if (step < 0 || step > cfg.total_steps)
        throw DomainError("cosine_lr: step out of [0, total_steps]");
    const double t = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Nesterov momentum with classic L2 decay added to the gradient. Decay applies
// to conv/linear weights and batchnorm affine parameters; biases are exempt.
// Frozen groups are untouched.
template <typename T>
void sgd_step(std::vector<ParamGroup<T>*>& params, double lr, const SgdConfig& cfg) {
    for (auto* p : params) {
        if (p->frozen) continue;
        const bool decayed = p->kind != ParamKind::linear_bias;
        const double wd = decayed ? cfg.weight_decay : 0.0;
        const double mu = cfg.momentum;
        for (std::size_t i = 0; i < p->value.values.size(); ++i) {
            double g = static_cast<double>(p->grad.values[i]) + wd * p->value.values[i];
            double v = mu * p->momentum.values[i] + g;
            p->momentum.values[i] = static_cast<T>(v);
            const double step = cfg.nesterov ? g + mu * v : v;
            p->value.values[i] = static_cast<T>(p->value.values[i] - lr * step);
        }
    }
}

}  // namespace fear
