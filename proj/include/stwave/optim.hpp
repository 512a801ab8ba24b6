#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stwave/error.hpp"
#include "stwave/tensor.hpp"

namespace stwave {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4; // L2 added to the gradient, not decoupled
};

// Scales `grads` in place so their concatenated L2 norm is at most max_norm.
// Returns the pre-clip norm. Norm accumulation is done in double regardless
// of T; gradients below the threshold are left bit-identical.
template <typename T>
double clip_global_norm(std::vector<std::vector<T>>& grads, double max_norm) {
    if (max_norm <= 0) throw ConfigError("clip_global_norm: max_norm must be positive");
    double sq = 0;
    for (const auto& g : grads)
        for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalFault("clip_global_norm: non-finite gradient norm");
    if (norm > max_norm) {
        double scale = max_norm / norm;
        for (auto& g : grads)
            for (T& v : g) v = static_cast<T>(static_cast<double>(v) * scale);
    }
    return norm;
}

// Adam with one first/second-moment buffer per parameter and a shared step
// counter, so bias correction matches the textbook recurrence exactly.
// Parameters that received no gradient this step (e.g. layers detached from
// the loss) are skipped entirely: no moment update, no weight decay.
template <typename T>
class Adam {
public:
    Adam(AdamConfig cfg, const std::vector<int64_t>& param_sizes) : cfg_(cfg) {
        m_.reserve(param_sizes.size());
        v_.reserve(param_sizes.size());
        for (int64_t n : param_sizes) {
            m_.emplace_back(static_cast<size_t>(n), T(0));
            v_.emplace_back(static_cast<size_t>(n), T(0));
        }
    }

    const AdamConfig& config() const { return cfg_; }
    int64_t step_count() const { return step_; }

    // One update over all parameters. `grads[i]` may be empty to mark
    // "no gradient"; `params[i]` is replaced with the updated tensor.
    void step(std::vector<Tensor<T>>& params, const std::vector<std::vector<T>>& grads, double lr) {
        if (params.size() != grads.size() || params.size() != m_.size())
            throw ContractError("Adam::step: parameter/gradient/state count mismatch");
        ++step_;
        double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (size_t p = 0; p < params.size(); ++p) {
            if (grads[p].empty()) continue;
            auto pd = params[p].data();
            if (grads[p].size() != pd.size())
                throw ContractError("Adam::step: gradient size mismatch at parameter " +
                                    std::to_string(p));
            std::vector<T> out(pd.size());
            auto& m = m_[p];
            auto& v = v_[p];
            for (size_t i = 0; i < pd.size(); ++i) {
                double g = static_cast<double>(grads[p][i]) +
                           cfg_.weight_decay * static_cast<double>(pd[i]);
                double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * g;
                double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                double mhat = mi / b1t;
                double vhat = vi / b2t;
                out[i] = static_cast<T>(static_cast<double>(pd[i]) -
                                        lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
            params[p] = Tensor<T>::from_data(params[p].shape(), std::move(out));
        }
    }

private:
    AdamConfig cfg_;
    std::vector<std::vector<T>> m_, v_;
    int64_t step_ = 0;
};

// Exponential schedule: lr(epoch) = base * decay^epoch, epoch counted from 0.
inline double scheduled_lr(double base_lr, double decay, int64_t epoch) {
    return base_lr * std::pow(decay, static_cast<double>(epoch));
}

} // namespace stwave
