// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <vector>

#include "cmid/envs/point_mass.hpp"
#include "cmid/rl/sac.hpp"

namespace cmid::eval {

/// Maps the most recent frames (oldest first) to an action.
using Policy = std::function<std::vector<double>(const std::deque<std::vector<double>>& frames)>;

/// Plays one episode from an already reset environment and returns the
/// undiscounted return. The frame stack starts as copies of the first frame.
inline double run_episode(envs::PointMassEnv& env, const envs::Observation& first, const Policy& policy,
                          std::size_t stack) {
    std::deque<std::vector<double>> frames(stack, first.values);
    double ret = 0.0;
    while (!env.state().done()) {
        const auto a = policy(frames);
        const auto r = env.step(a.at(0));
        ret += r.reward;
        frames.pop_front();
        frames.push_back(env.observe().values);
    }
    return ret;
}

/// Deterministic (mean-action) policy of a trained agent.
inline Policy agent_policy(const rl::SacAgent& agent) {
    return [&agent](const std::deque<std::vector<double>>& frames) {
        Rng unused(0);
        return agent.act(frames, true, unused);
    };
}

inline Policy zero_policy() {
    return [](const std::deque<std::vector<double>>&) { return std::vector<double>{0.0}; };
}

/// PD controller on factor-vector observations. `sign_of` decides which way
/// the control gain points from the latest frame; velocity is the finite
/// difference of the last two positions.
inline Policy pd_policy(const envs::EnvParams& p, double kp, double kd,
                        std::function<double(const std::vector<double>&)> sign_of) {
    if (p.mode != envs::ObsMode::factors) throw ConfigError("hand-coded policies need factor-vector observations");
    return [p, kp, kd, sign_of = std::move(sign_of)](const std::deque<std::vector<double>>& frames) {
        const auto& cur = frames.back();
        const double x = cur[0];
        const double v = frames.size() > 1 ? (x - frames[frames.size() - 2][0]) / p.dt : 0.0;
        const double u = kp * (p.goal - x) - kd * v;
        return std::vector<double>{std::clamp(sign_of(cur) * u, -1.0, 1.0)};
    };
}

/// Reads the variant from the width cue, ignoring colour.
inline Policy width_oracle_policy(const envs::EnvParams& p, double kp, double kd) {
    const double threshold = 0.5 * (p.width_a + p.width_b);
    const double ga = p.gain_a, gb = p.gain_b;
    return pd_policy(p, kp, kd, [=](const std::vector<double>& o) { return o[1] < threshold ? ga : gb; });
}

/// Guesses the variant from colour alone: blue means A, anything else B.
inline Policy colour_only_policy(const envs::EnvParams& p, double kp, double kd) {
    const double ga = p.gain_a, gb = p.gain_b;
    return pd_policy(p, kp, kd, [=](const std::vector<double>& o) { return o[4] > o[3] ? ga : gb; });
}

}  // namespace cmid::eval
