// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cmid/envs/point_mass.hpp"

using namespace cmid;
using namespace cmid::envs;

namespace {

std::array<std::array<double, 2>, 2> frequencies(const CorrelationSpec& spec, int draws, std::uint64_t seed) {
    Rng rng(seed);
    std::array<std::array<double, 2>, 2> f{};
    for (int i = 0; i < draws; ++i) {
        const auto e = sample_episode_factors(spec, rng);
        f[e.variant == Variant::A ? 0 : 1][e.colour == ColourLabel::blue ? 0 : 1] += 1.0 / draws;
    }
    return f;
}

// Straight-line reimplementation of the dynamics used as an oracle.
struct OracleSim {
    double x, v;
    double gain;
    double step(double a) {
        a = a > 1 ? 1 : (a < -1 ? -1 : a);
        v += gain * a * 0.05;
        if (v > 2) v = 2;
        if (v < -2) v = -2;
        x += v * 0.05;
        if (x > 1) {
            x = 1;
            v = 0;
        } else if (x < -1) {
            x = -1;
            v = 0;
        }
        return -std::fabs(x - 0.8);
    }
};

}  // namespace

TEST(Correlation, TrainTableAtRho095) {
    const auto t = CorrelationSpec{0.95, Phase::train, false}.joint();
    EXPECT_NEAR(t[0][0], 0.475, 1e-15);
    EXPECT_NEAR(t[0][1], 0.025, 1e-15);
    EXPECT_NEAR(t[1][0], 0.025, 1e-15);
    EXPECT_NEAR(t[1][1], 0.475, 1e-15);
}

TEST(Correlation, RhoHalfEqualsUncorrelated) {
    const auto a = CorrelationSpec{0.5, Phase::train, false}.joint();
    const auto b = CorrelationSpec{0.9, Phase::uncorrelated, false}.joint();
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            EXPECT_DOUBLE_EQ(a[i][j], 0.25);
            EXPECT_DOUBLE_EQ(b[i][j], 0.25);
        }
}

TEST(Correlation, ReversedSwapsColourLabels) {
    for (double rho : {0.6, 0.9, 0.99}) {
        const auto t = CorrelationSpec{rho, Phase::train, false}.joint();
        const auto r = CorrelationSpec{rho, Phase::reversed, false}.joint();
        for (int v = 0; v < 2; ++v)
            for (int c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(r[v][c], t[v][1 - c]);
    }
}

TEST(Correlation, TablesAreDistributionsWithEquiprobableVariants) {
    for (double rho : {0.5, 0.7, 0.95, 1.0})
        for (Phase p : {Phase::train, Phase::reversed, Phase::uncorrelated}) {
            const auto t = CorrelationSpec{rho, p, false}.joint();
            EXPECT_NEAR(t[0][0] + t[0][1], 0.5, 1e-15);
            EXPECT_NEAR(t[1][0] + t[1][1], 0.5, 1e-15);
            for (auto& row : t)
                for (double x : row) EXPECT_GE(x, 0.0);
        }
}

TEST(Correlation, InvalidRhoIsConfigError) {
    EXPECT_THROW((CorrelationSpec{0.4, Phase::train, false}.validate()), ConfigError);
    EXPECT_THROW((CorrelationSpec{1.01, Phase::train, false}.validate()), ConfigError);
}

TEST(Correlation, MonteCarloFrequenciesAtRho09) {
    const CorrelationSpec spec{0.9, Phase::train, false};
    const auto f = frequencies(spec, 100000, 21);
    const auto t = spec.joint();
    for (int v = 0; v < 2; ++v)
        for (int c = 0; c < 2; ++c) EXPECT_NEAR(f[v][c], t[v][c], 0.01);
}

TEST(Correlation, ChiSquareAcrossPhases) {
    // 3 degrees of freedom; 11.345 is the 0.99 quantile
    for (Phase p : {Phase::train, Phase::reversed, Phase::uncorrelated}) {
        const CorrelationSpec spec{0.8, p, false};
        const auto f = frequencies(spec, 10000, 22 + static_cast<int>(p));
        const auto t = spec.joint();
        double chi2 = 0.0;
        for (int v = 0; v < 2; ++v)
            for (int c = 0; c < 2; ++c) {
                const double expected = 10000 * t[v][c], observed = 10000 * f[v][c];
                chi2 += (observed - expected) * (observed - expected) / expected;
            }
        EXPECT_LT(chi2, 11.345) << to_string(p);
    }
}

TEST(Dynamics, ZeroActionAtRestKeepsPosition) {
    EnvParams p;
    FactorState s;
    s.position = 0.3;
    const auto r = step(p, s, 0.0);
    EXPECT_EQ(r.state.position, 0.3);
    EXPECT_DOUBLE_EQ(r.reward, -std::abs(0.3 - 0.8));
}

TEST(Dynamics, VariantGainsAreMirrorImages) {
    EnvParams p;
    FactorState a, b;
    b.variant = Variant::B;
    const auto ra = step(p, a, 1.0), rb = step(p, b, 1.0);
    EXPECT_DOUBLE_EQ(ra.state.velocity, p.gain_a * p.dt);
    EXPECT_DOUBLE_EQ(rb.state.velocity, -ra.state.velocity);
    EXPECT_DOUBLE_EQ(rb.state.position, -ra.state.position);
}

TEST(Dynamics, ActionIsClippedAndWallsStopTheMass) {
    EnvParams p;
    FactorState s;
    const auto big = step(p, s, 7.0), one = step(p, s, 1.0);
    EXPECT_EQ(big.state.velocity, one.state.velocity);
    s.position = 0.99;
    s.velocity = 1.0;
    const auto w = step(p, s, 1.0);
    EXPECT_EQ(w.state.position, 1.0);
    EXPECT_EQ(w.state.velocity, 0.0);
}

TEST(Dynamics, StepAfterDoneIsUsageError) {
    EnvParams p;
    p.horizon = 2;
    PointMassEnv env(p, {}, Rng(1));
    env.reset();
    env.step(0.1);
    EXPECT_TRUE(env.step(0.1).done);
    EXPECT_THROW(env.step(0.1), UsageError);
}

TEST(Dynamics, ColourNeverAffectsKinematicsOrReward) {
    EnvParams p;
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        FactorState a;
        a.variant = trial % 2 ? Variant::A : Variant::B;
        a.position = uniform(rng, -1, 1);
        a.velocity = uniform(rng, -2, 2);
        FactorState b = a;
        b.colour_label = ColourLabel::custom;
        b.colour = {uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)};
        const double act = uniform(rng, -1, 1);
        const auto ra = step(p, a, act), rb = step(p, b, act);
        EXPECT_EQ(ra.state.position, rb.state.position);
        EXPECT_EQ(ra.state.velocity, rb.state.velocity);
        EXPECT_EQ(ra.reward, rb.reward);
    }
}

TEST(Dynamics, VariantChangesTrajectory) {
    EnvParams p;
    FactorState a, b;
    b.variant = Variant::B;
    for (int t = 0; t < 10; ++t) {
        a = step(p, a, 0.5).state;
        b = step(p, b, 0.5).state;
    }
    EXPECT_NE(a.position, b.position);
}

TEST(Dynamics, RandomPolicyReturnMatchesDuplicateSimulator) {
    EnvParams p;
    Rng rng(41);
    double total_env = 0.0, total_oracle = 0.0;
    for (int e = 0; e < 1000; ++e) {
        FactorState s;
        s.variant = e % 2 ? Variant::B : Variant::A;
        s.position = uniform(rng, -0.25, 0.25);
        OracleSim o{s.position, 0.0, s.variant == Variant::A ? 1.0 : -1.0};
        while (!s.done()) {
            const double a = uniform(rng, -1.2, 1.2);
            const auto r = step(p, s, a);
            s = r.state;
            total_env += r.reward;
            total_oracle += o.step(a);
        }
    }
    EXPECT_NEAR(total_env / 1000, total_oracle / 1000, 1e-9);
}

TEST(Render, FactorVectorForABlueAtOrigin) {
    EnvParams p;
    FactorState s;
    const auto o = render(p, s, ObsMode::factors, false);
    EXPECT_EQ(o.values, (std::vector<double>{0.0, 0.2, 0.0, 0.0, 1.0}));
}

TEST(Render, WiderVariantLightsMorePixels) {
    EnvParams p;
    for (double x : {-0.5, 0.0, 0.3, 0.8}) {
        FactorState a, b;
        a.position = b.position = x;
        b.variant = Variant::B;
        auto lit = [&](const FactorState& s) {
            const auto o = render(p, s, ObsMode::image16, false);
            int n = 0;
            for (std::size_t i = 0; i < o.values.size(); i += 3) n += (o.values[i] + o.values[i + 1] + o.values[i + 2]) > 0;
            return n;
        };
        EXPECT_GT(lit(b), lit(a)) << x;
    }
}

TEST(Render, ImagePixelsInUnitRangeAndDeterministic) {
    EnvParams p;
    FactorState s;
    s.position = 0.41;
    s.colour = {0.2, 0.6, 0.9};
    const auto a = render(p, s, ObsMode::image16, false), b = render(p, s, ObsMode::image16, false);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.values.size(), kImageObsDim);
    for (double v : a.values) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Render, GreyscaleCollapsesToLuminance) {
    EnvParams p;
    FactorState s;
    s.colour = kGreen;
    const auto o = render(p, s, ObsMode::factors, true);
    EXPECT_DOUBLE_EQ(o.values[2], 0.587);
    EXPECT_DOUBLE_EQ(o.values[3], 0.587);
    EXPECT_DOUBLE_EQ(o.values[4], 0.587);
}

TEST(Episode, FactorsFixedWithinEpisode) {
    PointMassEnv env({}, {0.9, Phase::train, false}, Rng(51));
    for (int e = 0; e < 20; ++e) {
        env.reset();
        const auto v = env.state().variant;
        const auto c = env.state().colour_label;
        while (!env.state().done()) {
            env.step(0.3);
            EXPECT_EQ(env.state().variant, v);
            EXPECT_EQ(env.state().colour_label, c);
        }
    }
}

TEST(Episode, TraceCsvHasOneRowPerStep) {
    PointMassEnv env({}, {}, Rng(52));
    env.reset();
    std::vector<TraceRow> rows;
    while (!env.state().done()) {
        const auto r = env.step(-0.2);
        rows.push_back({0, r.state.step, r.state.variant, r.state.colour_label, r.state.position, r.state.velocity,
                        -0.2, r.reward});
    }
    const auto path = std::filesystem::temp_directory_path() / "cmid_trace.csv";
    write_trace_csv(path.string(), rows);
    std::ifstream is(path);
    int lines = 0;
    for (std::string l; std::getline(is, l);) ++lines;
    EXPECT_EQ(lines, 101);
}
