// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "cmid/envs/point_mass.hpp"
#include "cmid/nn/tensor.hpp"
#include "cmid/rng.hpp"

namespace cmid::rl {

/// Shifts a 16×16×3 frame by (dx, dy) pixels with edge replication, which is
/// the same as padding by replication and cropping at offset (pad+dx, pad+dy).
inline std::vector<double> shift_image(std::span<const double> img, int dx, int dy) {
    constexpr int side = static_cast<int>(envs::kImageSide);
    if (img.size() != envs::kImageObsDim) throw ConfigError("shift_image: expected a 16x16x3 frame");
    std::vector<double> out(img.size());
    for (int r = 0; r < side; ++r) {
        const int sr = std::clamp(r + dy, 0, side - 1);
        for (int c = 0; c < side; ++c) {
            const int sc = std::clamp(c + dx, 0, side - 1);
            for (int ch = 0; ch < 3; ++ch) out[(r * side + c) * 3 + ch] = img[(sr * side + sc) * 3 + ch];
        }
    }
    return out;
}

/// Random shift augmentation: pad by `pad` replicated pixels and crop back
/// at a uniform offset. Factor-vector observations pass through unchanged.
inline std::vector<double> random_shift_augment(std::span<const double> obs, envs::ObsMode mode, int pad, Rng& rng) {
    if (mode == envs::ObsMode::factors || pad == 0) return {obs.begin(), obs.end()};
    const int dx = static_cast<int>(uniform_index(rng, 2 * pad + 1)) - pad;
    const int dy = static_cast<int>(uniform_index(rng, 2 * pad + 1)) - pad;
    return shift_image(obs, dx, dy);
}

/// Augments every sample's frame stack with one shift per sample.
inline nn::Tensor augment_stacks(const nn::Tensor& stacks, std::size_t stack, envs::ObsMode mode, int pad, Rng& rng) {
    if (mode == envs::ObsMode::factors || pad == 0) return stacks;
    nn::Tensor out = stacks;
    const std::size_t dim = stacks.cols();
    const std::size_t samples = stacks.rows() / stack;
    for (std::size_t s = 0; s < samples; ++s) {
        const int dx = static_cast<int>(uniform_index(rng, 2 * pad + 1)) - pad;
        const int dy = static_cast<int>(uniform_index(rng, 2 * pad + 1)) - pad;
        for (std::size_t f = 0; f < stack; ++f) {
            const std::size_t row = s * stack + f;
            auto shifted = shift_image(std::span<const double>(stacks.values.data() + row * dim, dim), dx, dy);
            std::copy(shifted.begin(), shifted.end(), out.values.begin() + static_cast<std::ptrdiff_t>(row * dim));
        }
    }
    return out;
}

}  // namespace cmid::rl
