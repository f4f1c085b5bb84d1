#pragma once

// AdamW with decoupled weight decay over a parameter registry. Moments are kept
// per real scalar, so complex parameters update Re and Im independently.

#include <cmath>
#include <vector>

#include "fseg/parameter.hpp"

namespace fseg {

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 1e-6;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;

    void validate() const
    {
        if (!(lr > 0)) throw ConfigError("lr must be > 0");
        if (!(eps > 0)) throw ConfigError("eps must be > 0");
        if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("betas must lie in [0, 1)");
    }
};

/// First and second moments for every parameter, in registry order.
struct AdamWState {
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m, v;
};

template <std::floating_point T>
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    const AdamWConfig& config() const { return cfg_; }
    AdamWState& state() { return state_; }
    const AdamWState& state() const { return state_; }

    /// One update from the gradients currently held by the registry. A
    /// non-finite gradient aborts the step before any parameter changes.
    void step(ParameterRegistry<T>& params)
    {
        auto& ps = params.entries();
        if (state_.m.empty()) {
            for (auto& p : ps) {
                state_.m.emplace_back(p.count(), 0.0);
                state_.v.emplace_back(p.count(), 0.0);
            }
        }
        if (state_.m.size() != ps.size()) throw ConfigError("optimizer state does not match the parameter registry");
        for (auto& p : ps)
            for (T g : p.flat_grad())
                if (!std::isfinite(static_cast<double>(g)))
                    throw NumericError("non-finite gradient in parameter " + p.name);

        ++state_.step;
        const double t = static_cast<double>(state_.step);
        const double c1 = 1.0 - std::pow(cfg_.beta1, t), c2 = 1.0 - std::pow(cfg_.beta2, t);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto w = ps[i].flat_values();
            auto g = ps[i].flat_grad();
            auto& m = state_.m[i];
            auto& v = state_.v[i];
            if (m.size() != w.size()) throw ConfigError("optimizer state size mismatch for " + ps[i].name);
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                double x = static_cast<double>(w[j]);
                x -= cfg_.lr * cfg_.weight_decay * x;
                x -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
                w[j] = static_cast<T>(x);
            }
        }
    }

private:
    AdamWConfig cfg_;
    AdamWState state_;
};

} // namespace fseg
