// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "cmid/nn/tensor.hpp"
#include "cmid/rng.hpp"

namespace cmid::auxiliary {

/// Conditioning vectors for feature n, one row per sample. With history h
/// the row is [slot_1 .. slot_h | a_1 .. a_h], where slot_j is an N-vector
/// holding z_{t-j}^n at position n and zeros elsewhere, and a_j = a_{t-j}.
///
/// `prev_latents[j]` is [B × N] from the momentum encoder on o_{t-1-j};
/// `prev_actions[j]` is [B × A] holding a_{t-1-j}.
inline nn::Tensor build_conditioning(const std::vector<nn::Tensor>& prev_latents,
                                     const std::vector<nn::Tensor>& prev_actions, std::size_t n, std::size_t h,
                                     std::size_t batch_size) {
    if (h == 0) return nn::Tensor::matrix(batch_size, 0);
    if (h > prev_latents.size() || h > prev_actions.size()) {
        throw ConfigError("conditioning: history " + std::to_string(h) + " exceeds the " +
                          std::to_string(std::min(prev_latents.size(), prev_actions.size())) + " stored steps");
    }
    const std::size_t N = prev_latents[0].cols(), A = prev_actions[0].cols();
    if (n >= N) throw ConfigError("conditioning: feature index out of range");
    const std::size_t width = h * (N + A);
    nn::Tensor c = nn::Tensor::matrix(batch_size, width);
    for (std::size_t b = 0; b < batch_size; ++b) {
        for (std::size_t j = 0; j < h; ++j) {
            c(b, j * N + n) = prev_latents[j](b, n);
            for (std::size_t d = 0; d < A; ++d) c(b, h * N + j * A + d) = prev_actions[j](b, d);
        }
    }
    return c;
}

inline double squared_distance(const nn::Tensor& rows, std::size_t i, std::size_t j) {
    const std::size_t c = rows.cols();
    double d = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        const double diff = rows.values[i * c + k] - rows.values[j * c + k];
        d += diff * diff;
    }
    return d;
}

/// The k samples j ≠ i whose conditioning rows are closest to row i in
/// Euclidean distance, nearest first; equal distances go to the lower index.
inline std::vector<std::size_t> nearest_neighbours(const nn::Tensor& cond, std::size_t i, std::size_t k) {
    const std::size_t B = cond.rows();
    if (k == 0 || k >= B) throw ConfigError("knn: need 1 <= k < batch size");
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(B - 1);
    for (std::size_t j = 0; j < B; ++j) {
        if (j != i) d.emplace_back(squared_distance(cond, i, j), j);
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::vector<std::size_t> out(k);
    for (std::size_t m = 0; m < k; ++m) out[m] = d[m].second;
    return out;
}

struct PermutedBatch {
    std::size_t feature = 0;
    nn::Tensor latents;               // [B × N]
    std::vector<std::size_t> donors;  // donor sample per row
};

/// For every sample i keeps z_i^n and takes z^{-n} from a donor drawn
/// uniformly among the k nearest neighbours of c_i. An empty conditioning
/// set (the unconditional variant) draws the donor from all other samples.
inline PermutedBatch knn_permute(const nn::Tensor& latents, const nn::Tensor& cond, std::size_t n, std::size_t k,
                                 Rng& rng) {
    const std::size_t B = latents.rows(), N = latents.cols();
    if (cond.rows() != B) throw ConfigError("knn_permute: latents and conditioning disagree on batch size");
    if (n >= N) throw ConfigError("knn_permute: feature index out of range");
    if (B <= k) throw ConfigError("knn_permute: batch size must exceed k");
    PermutedBatch out{n, latents, std::vector<std::size_t>(B)};
    for (std::size_t i = 0; i < B; ++i) {
        std::size_t donor;
        if (cond.cols() == 0) {
            donor = uniform_index(rng, B - 1);
            if (donor >= i) ++donor;
        } else {
            const auto nb = nearest_neighbours(cond, i, k);
            donor = nb[uniform_index(rng, k)];
        }
        out.donors[i] = donor;
        for (std::size_t m = 0; m < N; ++m) {
            if (m != n) out.latents(i, m) = latents(donor, m);
        }
    }
    return out;
}

}  // namespace cmid::auxiliary
