// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "cmid/nn/autodiff.hpp"

namespace cmid::nn {

struct AdamState {
    long step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam update; gradients are zeroed afterwards.
inline void adam_step(AdamState& state, std::span<Var> params) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ConfigError("adam: parameter list changed between steps");
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& value = params[i].mutable_value().values;
        auto& grad = params[i].mutable_grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != value.size()) throw ConfigError("adam: parameter shape changed between steps");
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            value[j] -= state.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
            grad[j] = 0.0;
        }
    }
}

/// An Adam state bound to a fixed parameter list.
class Adam {
   public:
    Adam() = default;
    Adam(std::vector<Var> params, double lr) : params_(std::move(params)) { state_.lr = lr; }

    void step() { adam_step(state_, params_); }
    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }
    AdamState& state() { return state_; }
    const std::vector<Var>& params() const { return params_; }

   private:
    std::vector<Var> params_;
    AdamState state_;
};

/// target ← (1 − new_weight)·target + new_weight·online, elementwise.
inline void soft_update(std::span<Var> target, std::span<const Var> online, double new_weight) {
    if (!(new_weight >= 0.0 && new_weight <= 1.0)) {
        throw ConfigError("soft_update: new_weight must lie in [0,1], got " + std::to_string(new_weight));
    }
    if (target.size() != online.size()) throw ConfigError("soft_update: parameter count mismatch");
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i].shape() != online[i].shape()) throw ConfigError("soft_update: shape mismatch");
        auto& t = target[i].mutable_value().values;
        const auto& o = online[i].value().values;
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = (1.0 - new_weight) * t[j] + new_weight * o[j];
    }
}

inline void soft_update(std::vector<Var> target, const std::vector<Var>& online, double new_weight) {
    soft_update(std::span<Var>(target), std::span<const Var>(online), new_weight);
}

}  // namespace cmid::nn
