// SPDX-License-Identifier: Apache-2.0
#pragma once

// A one-dimensional point mass that has to be driven to a goal position. The
// control gain flips sign between the two variants, so the correct action
// direction depends on which variant is being controlled. Each variant also
// has a distinct width cue, and the object is drawn in a colour that is
// correlated with the variant but never touches the dynamics.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cmid/envs/correlation.hpp"

namespace cmid::envs {

enum class ObsMode { factors, image16 };

inline ObsMode parse_obs_mode(const std::string& s) {
    if (s == "factors") return ObsMode::factors;
    if (s == "image16") return ObsMode::image16;
    throw ConfigError("unknown observation mode '" + s + "' (factors|image16)");
}
inline std::string to_string(ObsMode m) { return m == ObsMode::factors ? "factors" : "image16"; }

inline constexpr std::size_t kImageSide = 16;
inline constexpr std::size_t kFactorObsDim = 5;
inline constexpr std::size_t kImageObsDim = kImageSide * kImageSide * 3;

inline std::size_t obs_dim(ObsMode m) { return m == ObsMode::factors ? kFactorObsDim : kImageObsDim; }

struct EnvParams {
    double dt = 0.05;          // s
    double goal = 0.8;         // m
    int horizon = 100;         // steps
    double position_bound = 1.0;
    double velocity_bound = 2.0;
    double start_range = 0.25;  // initial position ~ U[-start_range, start_range]
    double gain_a = 1.0;
    double gain_b = -1.0;
    double width_a = 0.2;  // half-width of the drawn object, m
    double width_b = 0.4;
    ObsMode mode = ObsMode::factors;

    double gain(Variant v) const { return v == Variant::A ? gain_a : gain_b; }
    double width(Variant v) const { return v == Variant::A ? width_a : width_b; }

    void validate() const {
        if (!(dt > 0)) throw ConfigError("env.dt must be positive");
        if (horizon <= 0) throw ConfigError("env.horizon must be positive");
        if (!(position_bound > 0) || !(velocity_bound > 0)) throw ConfigError("env bounds must be positive");
        if (!(start_range >= 0 && start_range <= position_bound)) {
            throw ConfigError("env.start_range must lie in [0, position_bound]");
        }
    }
};

struct FactorState {
    Variant variant = Variant::A;
    ColourLabel colour_label = ColourLabel::blue;
    Rgb colour = kBlue;
    double position = 0.0;  // m
    double velocity = 0.0;  // m/s
    int step = 0;
    int horizon = 100;

    bool done() const { return step >= horizon; }
};

struct Observation {
    ObsMode mode = ObsMode::factors;
    std::vector<double> values;
};

struct StepResult {
    FactorState state;
    double reward = 0.0;
    bool done = false;
};

/// Pure transition function. Colour never enters the computation.
inline StepResult step(const EnvParams& p, const FactorState& s, double action) {
    if (s.done()) throw UsageError("step: episode already finished");
    const double a = std::clamp(action, -1.0, 1.0);
    FactorState n = s;
    n.velocity = std::clamp(s.velocity + p.gain(s.variant) * a * p.dt, -p.velocity_bound, p.velocity_bound);
    n.position = s.position + n.velocity * p.dt;
    if (std::abs(n.position) > p.position_bound) {
        n.position = std::clamp(n.position, -p.position_bound, p.position_bound);
        n.velocity = 0.0;
    }
    n.step = s.step + 1;
    return {n, -std::abs(n.position - p.goal), n.done()};
}

inline double luminance(const Rgb& c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

/// Factor mode: [position, width cue, r, g, b]. Image mode: a 16×16×3 (row,
/// column, channel) frame on black with the object drawn as a band of rows
/// 5..10 covering every column whose centre lies within position ± width.
inline Observation render(const EnvParams& p, const FactorState& s, ObsMode mode, bool greyscale) {
    Rgb c = s.colour;
    if (greyscale) {
        const double l = luminance(c);
        c = {l, l, l};
    }
    Observation o{mode, {}};
    if (mode == ObsMode::factors) {
        o.values = {s.position, p.width(s.variant), c.r, c.g, c.b};
        return o;
    }
    o.values.assign(kImageObsDim, 0.0);
    const double half = p.width(s.variant);
    const double px = 2.0 * p.position_bound / static_cast<double>(kImageSide);
    for (std::size_t col = 0; col < kImageSide; ++col) {
        const double centre = -p.position_bound + (static_cast<double>(col) + 0.5) * px;
        if (std::abs(centre - s.position) > half) continue;
        for (std::size_t row = 5; row <= 10; ++row) {
            double* pix = o.values.data() + (row * kImageSide + col) * 3;
            pix[0] = c.r;
            pix[1] = c.g;
            pix[2] = c.b;
        }
    }
    return o;
}

struct TraceRow {
    int episode;
    int step;
    Variant variant;
    ColourLabel colour;
    double position;
    double velocity;
    double action;
    double reward;
};

inline void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write trace " + path);
    os << "episode,step,variant,colour,position,velocity,action,reward\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%d,%s,%s,%.17g,%.17g,%.17g,%.17g\n", r.episode, r.step,
                      to_string(r.variant).c_str(), to_string(r.colour).c_str(), r.position, r.velocity, r.action,
                      r.reward);
        os << buf;
    }
}

/// Stateful wrapper owning its own random stream.
class PointMassEnv {
   public:
    PointMassEnv(EnvParams params, CorrelationSpec spec, Rng rng)
        : params_(params), spec_(spec), rng_(std::move(rng)) {
        params_.validate();
        spec_.validate();
        state_.horizon = params_.horizon;
        state_.step = params_.horizon;
    }

    /// Starts an episode with factors drawn from the correlation spec.
    Observation reset() {
        const EpisodeFactors f = sample_episode_factors(spec_, rng_);
        return reset_with(f.variant, f.colour, colour_of(f.colour));
    }

    /// Starts an episode with the given factors; the start position is still
    /// random.
    Observation reset_with(Variant v, ColourLabel label, Rgb colour) {
        state_ = FactorState{};
        state_.variant = v;
        state_.colour_label = label;
        state_.colour = colour;
        state_.position = uniform(rng_, -params_.start_range, params_.start_range);
        state_.velocity = 0.0;
        state_.step = 0;
        state_.horizon = params_.horizon;
        return observe();
    }

    StepResult step(double action) {
        StepResult r = envs::step(params_, state_, action);
        state_ = r.state;
        return r;
    }

    Observation observe() const { return render(params_, state_, params_.mode, spec_.greyscale); }

    const FactorState& state() const { return state_; }
    const EnvParams& params() const { return params_; }
    const CorrelationSpec& spec() const { return spec_; }
    void set_spec(const CorrelationSpec& s) {
        s.validate();
        spec_ = s;
    }
    std::size_t obs_dim() const { return envs::obs_dim(params_.mode); }

   private:
    EnvParams params_;
    CorrelationSpec spec_;
    Rng rng_;
    FactorState state_;
};

}  // namespace cmid::envs
