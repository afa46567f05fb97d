// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>

#include "cmid/nn/tensor.hpp"
#include "cmid/rng.hpp"

namespace cmid::envs {

enum class Variant { A, B };
enum class ColourLabel { blue, green, custom };
enum class Phase { train, reversed, uncorrelated };

struct Rgb {
    double r = 0.0, g = 0.0, b = 0.0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb kBlue{0.0, 0.0, 1.0};
inline constexpr Rgb kGreen{0.0, 1.0, 0.0};

inline Rgb colour_of(ColourLabel c) { return c == ColourLabel::green ? kGreen : kBlue; }

inline std::string to_string(Variant v) { return v == Variant::A ? "A" : "B"; }
inline std::string to_string(ColourLabel c) {
    switch (c) {
        case ColourLabel::blue: return "blue";
        case ColourLabel::green: return "green";
        case ColourLabel::custom: break;
    }
    return "custom";
}
inline std::string to_string(Phase p) {
    switch (p) {
        case Phase::train: return "train";
        case Phase::reversed: return "reversed";
        case Phase::uncorrelated: break;
    }
    return "uncorrelated";
}
inline Phase parse_phase(const std::string& s) {
    if (s == "train") return Phase::train;
    if (s == "reversed") return Phase::reversed;
    if (s == "uncorrelated") return Phase::uncorrelated;
    throw ConfigError("unknown correlation phase '" + s + "' (train|reversed|uncorrelated)");
}

/// Joint distribution over (variant, colour). Index as table[variant][colour]
/// with variant A=0, B=1 and colour blue=0, green=1.
using JointTable = std::array<std::array<double, 2>, 2>;

struct CorrelationSpec {
    /// Probability mass on the A-blue / B-green diagonal during training.
    double rho = 0.95;
    Phase phase = Phase::train;
    bool greyscale = false;

    void validate() const {
        if (!(rho >= 0.5 && rho <= 1.0)) {
            throw ConfigError("env.rho must lie in [0.5, 1], got " + std::to_string(rho));
        }
    }

    JointTable joint() const {
        validate();
        const double diag = rho / 2.0, off = (1.0 - rho) / 2.0;
        switch (phase) {
            case Phase::train: return {{{diag, off}, {off, diag}}};
            case Phase::reversed: return {{{off, diag}, {diag, off}}};
            case Phase::uncorrelated: break;
        }
        return {{{0.25, 0.25}, {0.25, 0.25}}};
    }
};

struct EpisodeFactors {
    Variant variant;
    ColourLabel colour;
};

/// Draws the variant uniformly, then the colour from the conditional implied
/// by the joint table.
inline EpisodeFactors sample_episode_factors(const CorrelationSpec& spec, Rng& rng) {
    const JointTable t = spec.joint();
    const Variant v = uniform(rng, 0.0, 1.0) < 0.5 ? Variant::A : Variant::B;
    const auto& row = t[v == Variant::A ? 0 : 1];
    const double p_blue = row[0] / (row[0] + row[1]);
    const ColourLabel c = uniform(rng, 0.0, 1.0) < p_blue ? ColourLabel::blue : ColourLabel::green;
    return {v, c};
}

}  // namespace cmid::envs
