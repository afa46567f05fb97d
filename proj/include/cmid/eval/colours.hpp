// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "cmid/eval/rollout.hpp"

namespace cmid::eval {

struct ColourResult {
    envs::Rgb colour;
    double mean_return = 0.0;
};

struct ColourReport {
    std::vector<ColourResult> colours;
    double worst = 0.0;
    double best = 0.0;
    double average = 0.0;
};

/// Equally spaced RGB values, `grid` levels per channel, red slowest.
inline std::vector<envs::Rgb> colour_grid(int grid) {
    if (grid < 2) throw ConfigError("colour grid needs at least 2 levels per channel");
    std::vector<envs::Rgb> out;
    const double step = 1.0 / (grid - 1);
    for (int r = 0; r < grid; ++r)
        for (int g = 0; g < grid; ++g)
            for (int b = 0; b < grid; ++b) out.push_back({r * step, g * step, b * step});
    return out;
}

/// Mean return for every colour of the grid. Episodes alternate between the
/// variants, and every colour replays the same start positions.
inline ColourReport colour_robustness(const Policy& policy, const envs::EnvParams& params, bool greyscale, int grid,
                                      int episodes, std::uint64_t seed, std::size_t stack) {
    if (episodes <= 0) throw ConfigError("colours: episodes must be positive");
    ColourReport rep;
    rep.worst = std::numeric_limits<double>::infinity();
    rep.best = -std::numeric_limits<double>::infinity();
    for (const auto& rgb : colour_grid(grid)) {
        envs::PointMassEnv env(params, {0.5, envs::Phase::uncorrelated, greyscale}, substream(seed, "eval-colours"));
        double total = 0.0;
        for (int e = 0; e < episodes; ++e) {
            const auto v = e % 2 == 0 ? envs::Variant::A : envs::Variant::B;
            const auto first = env.reset_with(v, envs::ColourLabel::custom, rgb);
            total += run_episode(env, first, policy, stack);
        }
        const double mean = total / episodes;
        rep.colours.push_back({rgb, mean});
        rep.worst = std::min(rep.worst, mean);
        rep.best = std::max(rep.best, mean);
        rep.average += mean;
    }
    rep.average /= static_cast<double>(rep.colours.size());
    return rep;
}

inline void write_colour_csv(const std::filesystem::path& path, const ColourReport& rep) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "r,g,b,mean_return\n";
    char buf[128];
    for (const auto& c : rep.colours) {
        std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.6g,%.17g\n", c.colour.r, c.colour.g, c.colour.b, c.mean_return);
        os << buf;
    }
}

}  // namespace cmid::eval
