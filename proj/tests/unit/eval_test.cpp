// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cmid/eval/attribution.hpp"
#include "cmid/eval/cmi.hpp"
#include "cmid/eval/colours.hpp"
#include "cmid/eval/probe.hpp"
#include "cmid/eval/rollout.hpp"
#include "cmid/eval/shift.hpp"

using namespace cmid;
using namespace cmid::eval;
using nn::Tensor;
using nn::Var;

namespace {

// Gaussian fixture: z ~ N(0,1), (u, v) standard normal with correlation 0.8,
// x = 0.7 z + u, y = −0.5 z + v. Partial correlation of x and y given z is
// 0.8, so I(x; y | z) = −½ ln(1 − 0.64).
struct Gaussian {
    Tensor x, y, z;
};

Gaussian load_fixture() {
    std::ifstream is(std::string(CMID_TEST_DATA_DIR) + "/gaussian_cmi.csv");
    EXPECT_TRUE(is.good());
    std::string line;
    std::getline(is, line);
    std::vector<double> xs, ys, zs;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string a, b, c;
        std::getline(ss, a, ',');
        std::getline(ss, b, ',');
        std::getline(ss, c, ',');
        xs.push_back(std::stod(a));
        ys.push_back(std::stod(b));
        zs.push_back(std::stod(c));
    }
    const std::size_t n = xs.size();
    return {Tensor({n, 1}, xs), Tensor({n, 1}, ys), Tensor({n, 1}, zs)};
}

double gaussian_oracle(double partial_correlation) { return -0.5 * std::log(1.0 - partial_correlation * partial_correlation); }

Tensor normal_column(std::size_t n, Rng& rng) {
    Tensor t = Tensor::matrix(n, 1);
    for (auto& v : t.values) v = normal(rng);
    return t;
}

std::size_t count_lines(const std::filesystem::path& p) {
    std::ifstream is(p);
    std::size_t n = 0;
    std::string line;
    while (std::getline(is, line)) ++n;
    return n;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("cmid_eval_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// CMI estimator

TEST(Cmi, OracleValue) { EXPECT_NEAR(gaussian_oracle(0.8), 0.5108, 1e-4); }

TEST(Cmi, GaussianFixtureMatchesOracle) {
    const auto g = load_fixture();
    ASSERT_EQ(g.x.rows(), 6000u);
    const auto est = estimate_cmi(g.x, g.y, g.z, {});
    EXPECT_NEAR(est.estimate, gaussian_oracle(0.8), 0.1);
    EXPECT_GT(est.accuracy, 0.6);
    EXPECT_FALSE(est.degenerate);
}

TEST(Cmi, IndependentCaseIsNearZero) {
    Rng rng(1);
    const auto z = normal_column(6000, rng), x = normal_column(6000, rng), y = normal_column(6000, rng);
    const auto est = estimate_cmi(x, y, z, {});
    EXPECT_LE(std::abs(est.estimate), 0.05);
    EXPECT_GE(est.estimate, -0.05);
}

TEST(Cmi, ConditionallyIndependentThroughCommonCause) {
    Rng rng(2);
    const std::size_t n = 6000;
    const auto z = normal_column(n, rng);
    Tensor x = Tensor::matrix(n, 1), y = Tensor::matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        x(i, 0) = z(i, 0) + 0.5 * normal(rng);
        y(i, 0) = -z(i, 0) + 0.5 * normal(rng);
    }
    // Marginally x and y are strongly dependent; given z they are not.
    EXPECT_LE(std::abs(estimate_cmi(x, y, z, {}).estimate), 0.05);
}

TEST(Cmi, DegenerateColumnIsFlagged) {
    Rng rng(3);
    const auto z = normal_column(200, rng), y = normal_column(200, rng);
    const auto est = estimate_cmi(Tensor::matrix(200, 1, 3.0), y, z, {});
    EXPECT_TRUE(est.degenerate);
    EXPECT_EQ(est.estimate, 0.0);
    EXPECT_FALSE(est.note.empty());
}

TEST(Cmi, InvalidInputsAreConfigErrors) {
    Rng rng(4);
    const auto a = normal_column(100, rng), b = normal_column(99, rng);
    EXPECT_THROW(estimate_cmi(a, b, a, {}), ConfigError);
    CmiConfig bad;
    bad.holdout = 1.0;
    EXPECT_THROW(estimate_cmi(a, a, a, bad), ConfigError);
}

// ---------------------------------------------------------------------------
// Shift evaluation

TEST(ShiftEval, MeanSeOfKnownSample) {
    const auto m = mean_se({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(m.mean, 2.5);
    EXPECT_NEAR(m.se, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
    EXPECT_EQ(mean_se({7.0}).se, 0.0);
}

TEST(ShiftEval, RecordCountsFollowSeedsAndEpisodes) {
    envs::EnvParams p;
    ShiftEvalConfig cfg;
    cfg.phases = {envs::Phase::reversed, envs::Phase::train};
    cfg.episodes = 5;
    cfg.cell_episodes = 2;
    std::vector<std::pair<std::uint64_t, Policy>> seeded;
    for (std::uint64_t s = 1; s <= 10; ++s) seeded.emplace_back(s, zero_policy());
    const auto rep = shift_eval(seeded, p, cfg);
    EXPECT_EQ(rep.episodes.size(), 10u * 5u * 2u);
    EXPECT_EQ(rep.cell_episodes.size(), 10u * 4u * 2u);
    ASSERT_EQ(rep.phases.size(), 2u);
    EXPECT_EQ(rep.phases[0].seed_means.size(), 10u);
    EXPECT_EQ(rep.zero_shot_return(), rep.phases[0].ret.mean);

    const auto dir = scratch("shift");
    write_shift_report(dir, rep);
    EXPECT_EQ(count_lines(dir / "episodes.csv"), 1u + 100u);
    EXPECT_EQ(count_lines(dir / "cells.csv"), 1u + 80u);
    std::ifstream js(dir / "summary.json");
    const auto summary = nlohmann::json::parse(js);
    EXPECT_TRUE(summary.contains("phases"));
}

TEST(ShiftEval, ColourBlindOracleIsEqualAcrossColourCells) {
    envs::EnvParams p;
    ShiftEvalConfig cfg;
    cfg.cell_episodes = 20;
    const auto rep = shift_eval({{1, width_oracle_policy(p, 10, 5)}}, p, cfg);
    ASSERT_EQ(rep.cells.size(), 4u);
    // Same variant, same start positions, colour never consulted.
    EXPECT_DOUBLE_EQ(rep.cells[0].ret.mean, rep.cells[1].ret.mean);
    EXPECT_DOUBLE_EQ(rep.cells[2].ret.mean, rep.cells[3].ret.mean);
}

TEST(ShiftEval, ColourOnlyPolicyFailsUnderFullReversal) {
    envs::EnvParams p;
    ShiftEvalConfig cfg;
    cfg.rho = 1.0;
    cfg.phases = {envs::Phase::train, envs::Phase::reversed};
    cfg.episodes = 40;
    cfg.cell_episodes = 0;
    const auto colour = shift_eval({{3, colour_only_policy(p, 10, 5)}}, p, cfg);
    const auto wrong = shift_eval({{3, pd_policy(p, 10, 5, [](const std::vector<double>& o) {
                                        return o[1] < 0.3 ? -1.0 : 1.0;
                                    })}},
                                  p, cfg);
    const auto right = shift_eval({{3, width_oracle_policy(p, 10, 5)}}, p, cfg);
    // In training the colour policy is as good as the oracle...
    EXPECT_NEAR(colour.phases[0].ret.mean, right.phases[0].ret.mean, 1e-9);
    // ...and after the reversal it acts with the wrong sign every episode.
    EXPECT_NEAR(colour.phases[1].ret.mean, wrong.phases[1].ret.mean, 1e-9);
    EXPECT_LT(colour.phases[1].ret.mean, -120.0);
}

TEST(ShiftEval, PinnedOracleReturns) {
    envs::EnvParams p;
    ShiftEvalConfig cfg;
    cfg.phases = {envs::Phase::uncorrelated};
    cfg.episodes = 200;
    cfg.cell_episodes = 0;
    const auto oracle = shift_eval({{1, width_oracle_policy(p, 10, 5)}}, p, cfg);
    const auto zero = shift_eval({{1, zero_policy()}}, p, cfg);
    EXPECT_NEAR(oracle.zero_shot_return(), -14.0837, 1e-3);
    EXPECT_NEAR(zero.zero_shot_return(), -80.1054, 1e-3);
}

TEST(ShiftEval, SameInputsGiveIdenticalReports) {
    envs::EnvParams p;
    ShiftEvalConfig cfg;
    cfg.episodes = 4;
    const auto a = shift_eval({{5, colour_only_policy(p, 10, 5)}}, p, cfg);
    const auto b = shift_eval({{5, colour_only_policy(p, 10, 5)}}, p, cfg);
    ASSERT_EQ(a.episodes.size(), b.episodes.size());
    for (std::size_t i = 0; i < a.episodes.size(); ++i) EXPECT_EQ(a.episodes[i].ret, b.episodes[i].ret);
}

// ---------------------------------------------------------------------------
// Colour robustness

TEST(Colours, GridOrderAndSize) {
    const auto g = colour_grid(6);
    ASSERT_EQ(g.size(), 216u);
    EXPECT_EQ(g[1].b, 0.2);
    EXPECT_EQ(g[6].g, 0.2);
    EXPECT_EQ(g[36].r, 0.2);
    EXPECT_THROW(colour_grid(1), ConfigError);
}

TEST(Colours, ColourBlindPolicyHasNoSpread) {
    envs::EnvParams p;
    const auto rep = colour_robustness(width_oracle_policy(p, 10, 5), p, false, 6, 4, 1, 3);
    EXPECT_EQ(rep.colours.size(), 216u);
    EXPECT_DOUBLE_EQ(rep.worst, rep.best);
    const auto dir = scratch("colours");
    write_colour_csv(dir / "colours.csv", rep);
    EXPECT_EQ(count_lines(dir / "colours.csv"), 217u);
}

TEST(Colours, ColourPolicySpreadsAcrossTheGrid) {
    envs::EnvParams p;
    const auto rep = colour_robustness(colour_only_policy(p, 10, 5), p, false, 3, 4, 1, 3);
    EXPECT_LT(rep.worst, rep.best);
}

// ---------------------------------------------------------------------------
// Latent-factor probe

TEST(Probe, IdentityEncoderOnFactorsIsModular) {
    envs::EnvParams p;
    Rng rng(6);
    const auto data = collect_probe_data(nullptr, p, {0.5, envs::Phase::uncorrelated, false}, 300, rng);
    // Observation columns are position, width and three colour channels;
    // factors are position, variant and colour.
    const auto rep = latent_factor_probe(data.latents, data.factors, data.kinds);
    EXPECT_NEAR(rep.association(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(rep.association(1, 1), 1.0, 1e-9);
    EXPECT_GT(rep.modularity, 0.9);
    for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t f = 0; f < 3; ++f) {
            EXPECT_GE(rep.association(n, f), 0.0);
            EXPECT_LE(rep.association(n, f), 1.0);
        }
}

TEST(Probe, RandomMixingLowersModularity) {
    envs::EnvParams p;
    Rng rng(7), init(8);
    const auto ident = collect_probe_data(nullptr, p, {0.5, envs::Phase::uncorrelated, false}, 20, rng);
    nn::Mlp enc({{5, 16, 6}, {}, true, 1.0}, init);
    Rng rng2(7);
    const auto mixed = collect_probe_data(&enc, p, {0.5, envs::Phase::uncorrelated, false}, 20, rng2);
    EXPECT_LT(latent_factor_probe(mixed.latents, mixed.factors, mixed.kinds).modularity,
              latent_factor_probe(ident.latents, ident.factors, ident.kinds).modularity);
}

TEST(Probe, ShuffledLabelsCarryNoAssociation) {
    Rng rng(9);
    const std::size_t M = 4000;
    Tensor z = Tensor::matrix(M, 2), f = Tensor::matrix(M, 2);
    for (std::size_t i = 0; i < M; ++i) {
        z(i, 0) = normal(rng);
        z(i, 1) = normal(rng);
        f(i, 0) = normal(rng);
        f(i, 1) = uniform_index(rng, 2);
    }
    const auto rep = latent_factor_probe(z, f, {FactorKind::continuous, FactorKind::categorical});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_LT(rep.association(n, j), 0.05);
}

TEST(Probe, FeatureOrderOnlyPermutesRows) {
    Rng rng(10);
    const std::size_t M = 500;
    Tensor z = Tensor::matrix(M, 3), zp = Tensor::matrix(M, 3), f = Tensor::matrix(M, 2);
    for (std::size_t i = 0; i < M; ++i) {
        f(i, 0) = normal(rng);
        f(i, 1) = uniform_index(rng, 2);
        z(i, 0) = f(i, 0) + 0.3 * normal(rng);
        z(i, 1) = f(i, 1) + 0.3 * normal(rng);
        z(i, 2) = normal(rng);
        zp(i, 0) = z(i, 2);
        zp(i, 1) = z(i, 0);
        zp(i, 2) = z(i, 1);
    }
    const std::vector<FactorKind> kinds{FactorKind::continuous, FactorKind::categorical};
    const auto a = latent_factor_probe(z, f, kinds), b = latent_factor_probe(zp, f, kinds);
    EXPECT_NEAR(a.modularity, b.modularity, 1e-12);
    for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_DOUBLE_EQ(a.association(0, j), b.association(1, j));
        EXPECT_DOUBLE_EQ(a.association(1, j), b.association(2, j));
        EXPECT_DOUBLE_EQ(a.association(2, j), b.association(0, j));
    }
}

TEST(Probe, ConstantFeatureIsExcluded) {
    Rng rng(11);
    Tensor z = Tensor::matrix(100, 2, 0.5), f = Tensor::matrix(100, 1);
    for (std::size_t i = 0; i < 100; ++i) {
        f(i, 0) = normal(rng);
        z(i, 1) = f(i, 0);
    }
    const auto rep = latent_factor_probe(z, f, {FactorKind::continuous});
    EXPECT_TRUE(rep.constant_feature[0]);
    EXPECT_FALSE(rep.constant_feature[1]);
    EXPECT_DOUBLE_EQ(rep.modularity, 1.0);
}

// ---------------------------------------------------------------------------
// Integrated gradients

TEST(IntegratedGradients, LinearFunctionIsExact) {
    const Tensor w({3, 1}, {0.5, -2.0, 3.0});
    auto f = [&](const Var& x) { return nn::matmul(x, Var::constant(w)); };
    const auto m = integrated_gradients(f, 0, {1.0, 2.0, 3.0}, {0.0, 0.0, 0.0}, 16);
    EXPECT_NEAR(m.attribution[0], 0.5, 1e-12);
    EXPECT_NEAR(m.attribution[1], -4.0, 1e-12);
    EXPECT_NEAR(m.attribution[2], 9.0, 1e-12);
    EXPECT_NEAR(m.residual, 0.0, 1e-12);
}

TEST(IntegratedGradients, InputAtBaselineHasZeroAttribution) {
    Rng rng(12);
    nn::Mlp enc({{5, 8, 3}, {}, true, 1.0}, rng);
    const std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5};
    const auto m = integrated_gradients(enc, 1, x, x, 32);
    for (double a : m.attribution) EXPECT_EQ(a, 0.0);
}

TEST(IntegratedGradients, CompletenessOnRandomImageEncoders) {
    Rng rng(13);
    for (int trial = 0; trial < 3; ++trial) {
        nn::Mlp enc({{envs::kImageObsDim, 32, 8}, {}, true, 1.0}, rng);
        envs::EnvParams p;
        p.mode = envs::ObsMode::image16;
        envs::PointMassEnv env(p, {0.5, envs::Phase::uncorrelated, false}, Rng(20 + trial));
        const auto obs = env.reset().values;
        const std::vector<double> black(obs.size(), 0.0);
        for (std::size_t n = 0; n < 8; ++n) {
            const auto m = integrated_gradients(enc, n, obs, black, 256);
            EXPECT_LT(std::abs(m.residual), 1e-3);
        }
    }
}

TEST(IntegratedGradients, ResidualShrinksWithMoreSteps) {
    Rng rng(14);
    nn::Mlp enc({{5, 16, 4}, {nn::Activation::tanh, nn::Activation::identity}, true, 1.0}, rng);
    const std::vector<double> x{0.9, -0.4, 1.0, 0.2, 0.7}, b(5, 0.0);
    double prev = std::abs(integrated_gradients(enc, 2, x, b, 16).residual);
    for (int steps : {32, 64, 128, 256}) {
        const double r = std::abs(integrated_gradients(enc, 2, x, b, steps).residual);
        EXPECT_LT(r, prev);
        prev = r;
    }
}

TEST(IntegratedGradients, ReluKinksAreIntegratedExactly) {
    Rng rng(15);
    // Without the layer-norm tail a ReLU net is piecewise linear along the
    // path, so splitting at the switching points leaves no quadrature error.
    nn::Mlp net({{6, 12, 3}, {}, false, 1.0}, rng);
    for (const auto& l : net.layers()) {
        nn::Var b = l.bias;
        for (auto& v : b.mutable_value().values) v = uniform(rng, -0.5, 0.5);
    }
    const std::vector<double> x{1.0, -0.5, 0.3, 0.8, -1.2, 0.4}, b(6, 0.0);
    EXPECT_FALSE(first_layer_kinks(net, x, b).empty());
    for (std::size_t n = 0; n < 3; ++n) EXPECT_LT(std::abs(integrated_gradients(net, n, x, b, 16).residual), 1e-12);
}

TEST(IntegratedGradients, TooFewStepsIsAConfigError) {
    auto f = [](const Var& x) { return x; };
    EXPECT_THROW(integrated_gradients(f, 0, {1.0}, {0.0}, 8), ConfigError);
}

TEST(IntegratedGradients, ImageCsvHasPixelCoordinates) {
    std::vector<double> x(envs::kImageObsDim, 0.5), b(envs::kImageObsDim, 0.0);
    auto f = [](const Var& in) { return nn::sum_cols(in); };
    const auto m = integrated_gradients(f, 0, x, b, 16);
    const auto dir = scratch("attr");
    write_attribution_csv(dir / "feature_0.csv", m);
    EXPECT_EQ(count_lines(dir / "feature_0.csv"), 1u + envs::kImageObsDim);
    std::ifstream is(dir / "feature_0.csv");
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "row,col,channel,attribution");
}
