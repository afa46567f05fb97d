// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cmid/eval/rollout.hpp"

namespace cmid::eval {

/// Mean and standard error (sample standard deviation over sqrt(n)); the
/// error is 0 for fewer than two values.
struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
    MeanSe out;
    if (v.empty()) return out;
    for (double x : v) out.mean += x;
    out.mean /= static_cast<double>(v.size());
    if (v.size() < 2) return out;
    double sq = 0.0;
    for (double x : v) sq += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(sq / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    return out;
}

struct ShiftEvalConfig {
    std::vector<envs::Phase> phases{envs::Phase::reversed};
    double rho = 0.95;
    bool greyscale = false;
    int episodes = 10;       // per seed and phase
    int cell_episodes = 10;  // per seed and cell; 0 skips the breakdown
    std::size_t stack = 3;
};

struct EpisodeRecord {
    std::string phase;  // phase name, or "cell" for the per-cell breakdown
    std::uint64_t seed = 0;
    int episode = 0;
    double ret = 0.0;
    envs::Variant variant = envs::Variant::A;
    envs::ColourLabel colour = envs::ColourLabel::blue;
};

struct PhaseStats {
    envs::Phase phase = envs::Phase::train;
    std::vector<double> seed_means;
    MeanSe ret;
};

struct CellStats {
    envs::Variant variant = envs::Variant::A;
    envs::ColourLabel colour = envs::ColourLabel::blue;
    std::vector<double> seed_means;
    MeanSe ret;
};

struct ShiftReport {
    std::vector<std::uint64_t> seeds;
    std::vector<PhaseStats> phases;
    std::vector<CellStats> cells;  // A-blue, A-green, B-blue, B-green
    std::vector<EpisodeRecord> episodes;
    std::vector<EpisodeRecord> cell_episodes;

    /// Mean return of the first listed phase, the zero-shot score when the
    /// policies are frozen at the shift point.
    double zero_shot_return() const { return phases.empty() ? 0.0 : phases.front().ret.mean; }
};

/// Seed-level means first, then mean and standard error across seeds.
/// Start positions come from a per-seed, per-phase stream, so policies
/// evaluated under the same seed face the same episodes.
inline ShiftReport shift_eval(const std::vector<std::pair<std::uint64_t, Policy>>& seeded, const envs::EnvParams& params,
                              const ShiftEvalConfig& cfg) {
    if (seeded.empty()) throw ConfigError("shift_eval: no seeds");
    if (cfg.episodes <= 0 || cfg.cell_episodes < 0) throw ConfigError("shift_eval: episode counts must be positive");
    ShiftReport rep;
    for (const auto& [seed, _] : seeded) rep.seeds.push_back(seed);

    for (const envs::Phase phase : cfg.phases) {
        PhaseStats ps;
        ps.phase = phase;
        for (const auto& [seed, policy] : seeded) {
            envs::PointMassEnv env(params, {cfg.rho, phase, cfg.greyscale}, substream(seed, "eval-" + envs::to_string(phase)));
            double total = 0.0;
            for (int e = 0; e < cfg.episodes; ++e) {
                const auto first = env.reset();
                const double ret = run_episode(env, first, policy, cfg.stack);
                total += ret;
                rep.episodes.push_back({envs::to_string(phase), seed, e, ret, env.state().variant, env.state().colour_label});
            }
            ps.seed_means.push_back(total / cfg.episodes);
        }
        ps.ret = mean_se(ps.seed_means);
        rep.phases.push_back(std::move(ps));
    }

    if (cfg.cell_episodes > 0) {
        for (const envs::Variant v : {envs::Variant::A, envs::Variant::B}) {
            for (const envs::ColourLabel c : {envs::ColourLabel::blue, envs::ColourLabel::green}) {
                CellStats cs;
                cs.variant = v;
                cs.colour = c;
                for (const auto& [seed, policy] : seeded) {
                    envs::PointMassEnv env(params, {cfg.rho, envs::Phase::uncorrelated, cfg.greyscale},
                                           substream(seed, "eval-cells"));
                    double total = 0.0;
                    for (int e = 0; e < cfg.cell_episodes; ++e) {
                        const auto first = env.reset_with(v, c, envs::colour_of(c));
                        const double ret = run_episode(env, first, policy, cfg.stack);
                        total += ret;
                        rep.cell_episodes.push_back({"cell", seed, e, ret, v, c});
                    }
                    cs.seed_means.push_back(total / cfg.cell_episodes);
                }
                cs.ret = mean_se(cs.seed_means);
                rep.cells.push_back(std::move(cs));
            }
        }
    }
    return rep;
}

inline void write_episode_csv(const std::filesystem::path& path, const std::vector<EpisodeRecord>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "phase,seed,episode,return,variant,colour\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g", r.ret);
        os << r.phase << ',' << r.seed << ',' << r.episode << ',' << buf << ',' << envs::to_string(r.variant) << ','
           << envs::to_string(r.colour) << '\n';
    }
}

inline nlohmann::json to_json(const MeanSe& m) { return {{"mean", m.mean}, {"se", m.se}}; }

inline nlohmann::json to_json(const ShiftReport& rep) {
    nlohmann::json j;
    j["seeds"] = rep.seeds;
    j["zero_shot_return"] = rep.zero_shot_return();
    for (const auto& p : rep.phases) {
        j["phases"].push_back(
            {{"phase", envs::to_string(p.phase)}, {"seed_means", p.seed_means}, {"return", to_json(p.ret)}});
    }
    for (const auto& c : rep.cells) {
        j["cells"].push_back({{"variant", envs::to_string(c.variant)},
                              {"colour", envs::to_string(c.colour)},
                              {"seed_means", c.seed_means},
                              {"return", to_json(c.ret)}});
    }
    return j;
}

/// Writes episodes.csv, cells.csv and summary.json into `dir`.
inline void write_shift_report(const std::filesystem::path& dir, const ShiftReport& rep) {
    std::filesystem::create_directories(dir);
    write_episode_csv(dir / "episodes.csv", rep.episodes);
    write_episode_csv(dir / "cells.csv", rep.cell_episodes);
    std::ofstream os(dir / "summary.json");
    os << to_json(rep).dump(2) << '\n';
}

}  // namespace cmid::eval
