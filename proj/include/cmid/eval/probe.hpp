// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "cmid/envs/point_mass.hpp"
#include "cmid/nn/mlp.hpp"

namespace cmid::eval {

enum class FactorKind { continuous, categorical };

struct ProbeData {
    nn::Tensor latents;  // [M × N]
    nn::Tensor factors;  // [M × F]
    std::vector<FactorKind> kinds;
    std::vector<std::string> names;
};

struct ProbeReport {
    nn::Tensor association;               // [N × F], each entry in [0, 1]
    std::vector<bool> constant_feature;   // excluded from modularity
    double modularity = 0.0;
};

inline constexpr int kProbeBins = 8;

namespace detail {

inline std::vector<double> column(const nn::Tensor& t, std::size_t j) {
    std::vector<double> out(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) out[i] = t(i, j);
    return out;
}

inline double abs_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0 || sbb <= 0) return 0.0;
    return std::abs(sab) / std::sqrt(saa * sbb);
}

/// Equal-mass bins by rank; tied values share the bin of their first rank.
inline std::vector<int> equal_mass_bins(const std::vector<double>& v, int bins) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<int> out(v.size());
    std::size_t first = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (r > 0 && v[order[r]] != v[order[r - 1]]) first = r;
        out[order[r]] = static_cast<int>(first * static_cast<std::size_t>(bins) / order.size());
    }
    return out;
}

/// Mutual information between two discrete labelings, divided by the
/// entropy of `y`.
inline double normalised_mi(const std::vector<int>& x, const std::vector<int>& y) {
    const int nx = *std::max_element(x.begin(), x.end()) + 1, ny = *std::max_element(y.begin(), y.end()) + 1;
    std::vector<double> joint(static_cast<std::size_t>(nx * ny), 0.0), px(nx, 0.0), py(ny, 0.0);
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        joint[static_cast<std::size_t>(x[i] * ny + y[i])] += 1.0 / n;
        px[x[i]] += 1.0 / n;
        py[y[i]] += 1.0 / n;
    }
    double mi = 0.0, hy = 0.0;
    for (int a = 0; a < nx; ++a)
        for (int b = 0; b < ny; ++b) {
            const double p = joint[static_cast<std::size_t>(a * ny + b)];
            if (p > 0) mi += p * std::log(p / (px[a] * py[b]));
        }
    for (double p : py)
        if (p > 0) hy -= p * std::log(p);
    return hy > 0 ? std::clamp(mi / hy, 0.0, 1.0) : 0.0;
}

}  // namespace detail

/// Association between every latent feature and every factor: absolute
/// correlation for continuous factors, and for categorical factors the
/// mutual information between the feature (in equal-mass bins) and the
/// factor, divided by the factor's entropy. Modularity is the mean over
/// non-constant features of the top factor's share of the feature's total
/// association, so 1 means every feature tracks a single factor.
inline ProbeReport latent_factor_probe(const nn::Tensor& latents, const nn::Tensor& factors,
                                       const std::vector<FactorKind>& kinds) {
    const std::size_t M = latents.rows(), N = latents.cols(), F = factors.cols();
    if (factors.rows() != M) throw ConfigError("probe: latents and factors disagree on sample count");
    if (kinds.size() != F) throw ConfigError("probe: one kind per factor required");
    if (M < 2) throw ConfigError("probe: need at least two samples");
    ProbeReport rep;
    rep.association = nn::Tensor::matrix(N, F);
    rep.constant_feature.assign(N, false);
    std::vector<std::vector<int>> factor_labels(F);
    for (std::size_t f = 0; f < F; ++f) {
        if (kinds[f] == FactorKind::categorical) {
            const auto col = detail::column(factors, f);
            std::vector<double> levels = col;
            std::sort(levels.begin(), levels.end());
            levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
            for (double v : col) {
                factor_labels[f].push_back(
                    static_cast<int>(std::lower_bound(levels.begin(), levels.end(), v) - levels.begin()));
            }
        }
    }
    double share_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t n = 0; n < N; ++n) {
        const auto z = detail::column(latents, n);
        const auto [lo, hi] = std::minmax_element(z.begin(), z.end());
        if (*hi - *lo < 1e-12) {
            rep.constant_feature[n] = true;
            continue;
        }
        const auto bins = detail::equal_mass_bins(z, kProbeBins);
        double total = 0.0, top = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
            const double a = kinds[f] == FactorKind::continuous
                                 ? detail::abs_correlation(z, detail::column(factors, f))
                                 : detail::normalised_mi(bins, factor_labels[f]);
            rep.association(n, f) = a;
            total += a;
            top = std::max(top, a);
        }
        if (total > 0) {
            share_sum += top / total;
            ++counted;
        }
    }
    rep.modularity = counted ? share_sum / static_cast<double>(counted) : 0.0;
    return rep;
}

/// Single-frame latents and factor labels (position, variant, colour) from
/// episodes played with uniform random actions.
inline ProbeData collect_probe_data(const nn::Mlp* encoder, const envs::EnvParams& params,
                                    const envs::CorrelationSpec& spec, int episodes, Rng& rng) {
    envs::PointMassEnv env(params, spec, substream(rng(), "probe-env"));
    std::vector<std::vector<double>> obs;
    std::vector<std::array<double, 3>> labels;
    for (int e = 0; e < episodes; ++e) {
        auto o = env.reset();
        while (true) {
            const auto& s = env.state();
            obs.push_back(o.values);
            labels.push_back({s.position, s.variant == envs::Variant::A ? 0.0 : 1.0,
                              s.colour_label == envs::ColourLabel::blue ? 0.0 : 1.0});
            if (s.done()) break;
            env.step(uniform(rng, -1.0, 1.0));
            o = env.observe();
        }
    }
    const std::size_t M = obs.size(), D = obs[0].size();
    nn::Tensor x = nn::Tensor::matrix(M, D);
    for (std::size_t i = 0; i < M; ++i) std::copy(obs[i].begin(), obs[i].end(), x.values.begin() + i * D);
    ProbeData out;
    out.latents = encoder ? encoder->forward(nn::Var::constant(x), false).value() : x;
    out.factors = nn::Tensor::matrix(M, 3);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t f = 0; f < 3; ++f) out.factors(i, f) = labels[i][f];
    out.kinds = {FactorKind::continuous, FactorKind::categorical, FactorKind::categorical};
    out.names = {"position", "variant", "colour"};
    return out;
}

}  // namespace cmid::eval
