// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cmid/auxiliary/knn_permute.hpp"
#include "cmid/nn/mlp.hpp"
#include "cmid/nn/optim.hpp"

namespace cmid::eval {

struct CmiConfig {
    std::size_t k = 5;
    std::size_t hidden = 32;
    int epochs = 200;
    double lr = 5e-3;
    /// Fraction of samples held out for the estimate.
    double holdout = 0.3;
    std::uint64_t seed = 0;

    void validate() const {
        if (k == 0) throw ConfigError("cmi.k must be at least 1");
        if (hidden == 0 || epochs <= 0 || !(lr > 0)) throw ConfigError("cmi: classifier settings must be positive");
        if (!(holdout > 0 && holdout < 1)) throw ConfigError("cmi.holdout must lie in (0, 1)");
    }
};

struct CmiEstimate {
    double estimate = 0.0;  // nats
    double accuracy = 0.5;  // held-out joint-vs-permuted accuracy
    std::size_t samples = 0;
    std::size_t k = 0;
    bool degenerate = false;
    std::string note;
};

namespace detail {

inline nn::Tensor take_rows(const nn::Tensor& t, std::size_t begin, std::size_t count) {
    nn::Tensor out = nn::Tensor::matrix(count, t.cols());
    std::copy_n(t.values.begin() + static_cast<std::ptrdiff_t>(begin * t.cols()), count * t.cols(),
                out.values.begin());
    return out;
}

/// Column-wise standardisation; returns false if any column is constant.
inline bool standardise(nn::Tensor& t) {
    const std::size_t r = t.rows(), c = t.cols();
    for (std::size_t j = 0; j < c; ++j) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < r; ++i) mean += t(i, j);
        mean /= static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i) sq += (t(i, j) - mean) * (t(i, j) - mean);
        const double sd = std::sqrt(sq / static_cast<double>(r));
        if (!(sd > 1e-12)) return false;
        for (std::size_t i = 0; i < r; ++i) t(i, j) = (t(i, j) - mean) / sd;
    }
    return true;
}

/// Rows [x | y | z] with y taken from `donors`.
inline nn::Tensor joint_rows(const nn::Tensor& x, const nn::Tensor& y, const nn::Tensor& z,
                             const std::vector<std::size_t>* donors) {
    const std::size_t n = x.rows(), w = x.cols() + y.cols() + z.cols();
    nn::Tensor out = nn::Tensor::matrix(n, w);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t yi = donors ? (*donors)[i] : i;
        std::size_t c = 0;
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, c++) = x(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j) out(i, c++) = y(yi, j);
        for (std::size_t j = 0; j < z.cols(); ++j) out(i, c++) = z(i, j);
    }
    return out;
}

/// Neighbour lists in z for every row (all other rows when z is empty).
inline std::vector<std::vector<std::size_t>> neighbour_lists(const nn::Tensor& z, std::size_t k) {
    std::vector<std::vector<std::size_t>> out(z.rows());
    if (z.cols() == 0) return out;
    for (std::size_t i = 0; i < z.rows(); ++i) out[i] = auxiliary::nearest_neighbours(z, i, k);
    return out;
}

inline std::vector<std::size_t> draw_donors(const std::vector<std::vector<std::size_t>>& nb, std::size_t n, Rng& rng) {
    std::vector<std::size_t> d(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (nb[i].empty()) {
            d[i] = uniform_index(rng, n - 1);
            if (d[i] >= i) ++d[i];
        } else {
            d[i] = nb[i][uniform_index(rng, nb[i].size())];
        }
    }
    return d;
}

}  // namespace detail

/// Classifier-based estimate of I(X;Y|Z). A network is trained to tell joint
/// samples (x, y, z) from samples whose y comes from one of the k nearest
/// neighbours in z, which approximates p(x,z)·p(y|z). With balanced classes
/// its logit estimates the log density ratio, so the estimate is the mean
/// logit over held-out joint samples. Rows are split in order; the last
/// `holdout` fraction is held out. An empty z gives the unconditional MI.
inline CmiEstimate estimate_cmi(const nn::Tensor& x_in, const nn::Tensor& y_in, const nn::Tensor& z_in,
                                const CmiConfig& cfg) {
    cfg.validate();
    const std::size_t n = x_in.rows();
    if (y_in.rows() != n || z_in.rows() != n) throw ConfigError("estimate_cmi: x, y, z disagree on sample count");
    if (x_in.cols() == 0 || y_in.cols() == 0) throw ConfigError("estimate_cmi: x and y need at least one column");
    CmiEstimate est;
    est.samples = n;
    est.k = cfg.k;

    nn::Tensor x = x_in, y = y_in, z = z_in;
    if (!detail::standardise(x) || !detail::standardise(y) || !detail::standardise(z)) {
        est.degenerate = true;
        est.note = "constant column";
        return est;
    }
    const auto n_test = static_cast<std::size_t>(std::round(cfg.holdout * static_cast<double>(n)));
    const std::size_t n_train = n - n_test;
    if (n_train <= cfg.k + 1 || n_test <= cfg.k + 1) throw ConfigError("estimate_cmi: too few samples for k");

    const auto xs = detail::take_rows(x, 0, n_train), ys = detail::take_rows(y, 0, n_train),
               zs = detail::take_rows(z, 0, n_train);
    const auto xt = detail::take_rows(x, n_train, n_test), yt = detail::take_rows(y, n_train, n_test),
               zt = detail::take_rows(z, n_train, n_test);

    Rng init_rng = substream(cfg.seed, "cmi-init");
    Rng perm_rng = substream(cfg.seed, "cmi-perm");
    const std::size_t width = x.cols() + y.cols() + z.cols();
    nn::Mlp clf({{width, cfg.hidden, cfg.hidden, 1}, {}, false, 1.0}, init_rng);
    nn::Adam opt(clf.parameters(), cfg.lr);

    const auto joint_train = nn::Var::constant(detail::joint_rows(xs, ys, zs, nullptr));
    const auto nb_train = detail::neighbour_lists(zs, cfg.k);
    for (int e = 0; e < cfg.epochs; ++e) {
        // fresh product-of-marginals samples every epoch
        const auto donors = detail::draw_donors(nb_train, n_train, perm_rng);
        const auto perm = nn::Var::constant(detail::joint_rows(xs, ys, zs, &donors));
        auto loss = nn::mean(nn::softplus(-clf(joint_train))) + nn::mean(nn::softplus(clf(perm)));
        nn::check_finite(loss, "cmi classifier loss");
        opt.zero_grad();
        nn::backward(loss);
        opt.step();
    }

    const auto d_joint = clf.forward(nn::Var::constant(detail::joint_rows(xt, yt, zt, nullptr)), false).value();
    const auto nb_test = detail::neighbour_lists(zt, cfg.k);
    const auto donors = detail::draw_donors(nb_test, n_test, perm_rng);
    const auto d_perm = clf.forward(nn::Var::constant(detail::joint_rows(xt, yt, zt, &donors)), false).value();
    double sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n_test; ++i) {
        sum += d_joint.values[i];
        correct += d_joint.values[i] > 0.0;
        correct += d_perm.values[i] <= 0.0;
    }
    est.estimate = sum / static_cast<double>(n_test);
    est.accuracy = static_cast<double>(correct) / static_cast<double>(2 * n_test);
    if (!std::isfinite(est.estimate)) throw NumericError("estimate_cmi: non-finite estimate");
    return est;
}

}  // namespace cmid::eval
