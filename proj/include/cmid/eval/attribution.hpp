// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <vector>

#include "cmid/envs/point_mass.hpp"
#include "cmid/nn/mlp.hpp"

namespace cmid::eval {

struct AttributionMap {
    std::size_t feature = 0;
    std::vector<double> attribution;
    std::vector<double> baseline;
    int steps = 0;
    double f_input = 0.0;
    double f_baseline = 0.0;
    /// Σ attribution − (f(x) − f(baseline)).
    double residual = 0.0;
};

/// Maps a [rows × D] input to [rows × N] outputs.
using FeatureFn = std::function<nn::Var(const nn::Var&)>;

/// Integrated gradients by the midpoint rule. The path position t ∈ [0, 1]
/// is cut into `steps` equal intervals, further split at any breakpoints
/// where the gradient is known to jump, and
///   attr_i = (x_i − b_i) Σ_s (t_{s+1} − t_s) ∂f_n/∂x_i at b + ½(t_s + t_{s+1})(x − b).
inline AttributionMap integrated_gradients(const FeatureFn& f, std::size_t feature, const std::vector<double>& x,
                                           const std::vector<double>& baseline, int steps,
                                           const std::vector<double>& breakpoints = {}) {
    if (steps < 16) throw ConfigError("integrated_gradients: at least 16 steps required");
    if (x.size() != baseline.size()) throw ConfigError("integrated_gradients: baseline shape differs from input");
    std::vector<double> ts;
    for (int s = 0; s <= steps; ++s) ts.push_back(static_cast<double>(s) / steps);
    for (double t : breakpoints) {
        if (t > 0.0 && t < 1.0) ts.push_back(t);
    }
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

    const std::size_t D = x.size(), S = ts.size() - 1;
    nn::Tensor path = nn::Tensor::matrix(S, D);
    for (std::size_t s = 0; s < S; ++s) {
        const double t = 0.5 * (ts[s] + ts[s + 1]);
        for (std::size_t i = 0; i < D; ++i) path(s, i) = baseline[i] + t * (x[i] - baseline[i]);
    }
    auto input = nn::Var::parameter(std::move(path));
    auto out = f(input);
    if (feature >= out.cols()) throw ConfigError("integrated_gradients: feature index out of range");
    nn::backward(nn::sum(nn::slice_cols(out, feature, 1)));

    AttributionMap m;
    m.feature = feature;
    m.baseline = baseline;
    m.steps = steps;
    m.attribution.assign(D, 0.0);
    const auto& g = input.grad();
    for (std::size_t s = 0; s < S; ++s) {
        const double w = ts[s + 1] - ts[s];
        for (std::size_t i = 0; i < D; ++i) m.attribution[i] += w * g[s * D + i];
    }
    double total = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
        m.attribution[i] *= x[i] - baseline[i];
        total += m.attribution[i];
    }
    auto eval_at = [&](const std::vector<double>& v) {
        return f(nn::Var::constant(nn::Tensor::row(v))).value().values[feature];
    };
    m.f_input = eval_at(x);
    m.f_baseline = eval_at(baseline);
    m.residual = total - (m.f_input - m.f_baseline);
    return m;
}

/// Path positions in (0, 1) where a unit of the encoder's first layer
/// switches, if that layer is a ReLU. Its pre-activation is affine in t, so
/// these are exactly the kinks it contributes.
inline std::vector<double> first_layer_kinks(const nn::Mlp& encoder, const std::vector<double>& x,
                                             const std::vector<double>& baseline) {
    std::vector<double> out;
    if (encoder.spec().activations.front() != nn::Activation::relu) return out;
    const auto& layer = encoder.layers().front();
    const auto& w = layer.weight.value();
    const auto& bias = layer.bias.value().values;
    const std::size_t D = w.rows(), H = w.cols();
    if (x.size() != D) return out;
    for (std::size_t j = 0; j < H; ++j) {
        double at0 = bias[j], slope = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
            at0 += baseline[i] * w(i, j);
            slope += (x[i] - baseline[i]) * w(i, j);
        }
        if (slope != 0.0) out.push_back(-at0 / slope);
    }
    return out;
}

inline AttributionMap integrated_gradients(const nn::Mlp& encoder, std::size_t feature, const std::vector<double>& x,
                                           const std::vector<double>& baseline, int steps) {
    return integrated_gradients([&encoder](const nn::Var& in) { return encoder.forward(in, false); }, feature, x,
                                baseline, steps, first_layer_kinks(encoder, x, baseline));
}

/// One CSV per feature. Image inputs carry row, col and channel columns.
inline void write_attribution_csv(const std::filesystem::path& path, const AttributionMap& m) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    const bool image = m.attribution.size() == envs::kImageObsDim;
    os << (image ? "row,col,channel,attribution\n" : "index,attribution\n");
    char buf[64];
    for (std::size_t i = 0; i < m.attribution.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", m.attribution[i]);
        if (image) {
            os << i / (envs::kImageSide * 3) << ',' << (i / 3) % envs::kImageSide << ',' << i % 3 << ',' << buf << '\n';
        } else {
            os << i << ',' << buf << '\n';
        }
    }
}

}  // namespace cmid::eval
