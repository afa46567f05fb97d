// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cmid/nn/checkpoint.hpp"
#include "cmid/nn/mlp.hpp"
#include "cmid/nn/optim.hpp"
#include "gradcheck.hpp"

using namespace cmid;
using nn::Tensor;
using nn::Var;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::matrix(r, c);
    for (double& v : t.values) v = uniform(rng, lo, hi);
    return t;
}

// Plain triple-loop forward pass used as an independent oracle.
std::vector<double> hand_forward(const nn::Mlp& net, const Tensor& x) {
    std::vector<double> h = x.values;
    std::size_t width = x.cols();
    const auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& w = layers[l].weight.value();
        const auto& b = layers[l].bias.value();
        const std::size_t out = w.cols();
        std::vector<double> next(x.rows() * out);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            for (std::size_t j = 0; j < out; ++j) {
                double s = b.values[j];
                for (std::size_t k = 0; k < width; ++k) s += h[i * width + k] * w.values[k * out + j];
                next[i * out + j] = (l + 1 < layers.size()) ? std::max(0.0, s) : s;
            }
        }
        h = std::move(next);
        width = out;
    }
    return h;
}

}  // namespace

TEST(Forward, IdentityLinearLayerPassesInputThrough) {
    Rng rng(1);
    nn::Mlp net({{2, 2}, {}, false, 1.0}, rng);
    net.layers()[0].weight.node()->value.values = {1, 0, 0, 1};
    auto y = net(Var::constant(Tensor::row({1, 2})));
    EXPECT_EQ(y.value().values, (std::vector<double>{1, 2}));
}

TEST(Forward, ZeroWeightsGiveZeroOutput) {
    Rng rng(2);
    nn::Mlp net({{3, 4, 2}, {}, false, 1.0}, rng);
    for (auto& p : net.parameters()) std::fill(p.node()->value.values.begin(), p.node()->value.values.end(), 0.0);
    auto y = net(Var::constant(random_matrix(5, 3, rng)));
    for (double v : y.value().values) EXPECT_EQ(v, 0.0);
}

TEST(Forward, MatchesHandRolledMatrixOracle) {
    Rng rng(3);
    nn::Mlp net({{4, 7, 3}, {}, false, 1.0}, rng);
    const Tensor x = random_matrix(6, 4, rng);
    const auto y = net(Var::constant(x)).value().values;
    const auto expect = hand_forward(net, x);
    ASSERT_EQ(y.size(), expect.size());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-12);
}

TEST(Forward, WidthMismatchIsConfigError) {
    Rng rng(4);
    nn::Mlp net({{4, 3}, {}, false, 1.0}, rng);
    EXPECT_THROW(net(Var::constant(Tensor::matrix(2, 5))), ConfigError);
}

TEST(Forward, RepeatedPassIsBitIdentical) {
    Rng a(5), b(5);
    nn::Mlp n1({{4, 8, 3}, {}, true, 1.0}, a), n2({{4, 8, 3}, {}, true, 1.0}, b);
    Rng xr(6);
    const Tensor x = random_matrix(3, 4, xr);
    auto y1 = n1(Var::constant(x));
    auto y2 = n2(Var::constant(x));
    EXPECT_EQ(y1.value().values, y2.value().values);
    nn::backward(nn::sum(y1));
    nn::backward(nn::sum(y2));
    const auto p1 = n1.parameters(), p2 = n2.parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1[i].grad(), p2[i].grad());
}

TEST(Backward, SumOfProductGivesInputAsGradient) {
    auto w = Var::parameter(Tensor::row({0.5, -1.0, 2.0}));
    const auto x = Var::constant(Tensor::row({3.0, 4.0, -5.0}));
    nn::backward(nn::sum(w * x));
    EXPECT_EQ(w.grad(), x.value().values);
}

TEST(Backward, SigmoidSlopeAtZeroIsAQuarter) {
    auto x = Var::parameter(Tensor::scalar(0.0));
    nn::backward(nn::sigmoid(x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Backward, NonScalarLossIsUsageError) {
    auto x = Var::parameter(Tensor::row({1.0, 2.0}));
    EXPECT_THROW(nn::backward(x * 2.0), UsageError);
}

TEST(Backward, RandomMlpMatchesFiniteDifferences) {
    Rng rng(7);
    nn::Mlp net({{5, 9, 6, 2}, {}, false, 1.0}, rng);
    const auto x = Var::constant(random_matrix(4, 5, rng));
    auto loss = [&] { return nn::mean(nn::square(net(x))); };
    const auto r = testkit::check_gradients(loss, net.parameters());
    EXPECT_GT(r.checked, 100u);
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Backward, EncoderWithLayerNormTanhMatchesFiniteDifferences) {
    Rng rng(8);
    nn::Mlp net({{5, 8, 4}, {}, true, 1.0}, rng);
    auto x = Var::parameter(random_matrix(3, 5, rng));
    const auto target = Var::constant(random_matrix(3, 4, rng));
    auto loss = [&] { return nn::sum(nn::square(net(x) - target)); };
    auto wrt = net.parameters();
    wrt.push_back(x);
    EXPECT_LT(testkit::check_gradients(loss, wrt).max_rel_error, 1e-4);
}

// Every differentiable op, each composed into a scalar loss with random
// weights so that no gradient is trivially uniform.
class OpGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
    const std::string op = GetParam();
    Rng rng(11);
    auto a = Var::parameter(random_matrix(3, 4, rng));
    auto b = Var::parameter(random_matrix(3, 4, rng));
    auto row = Var::parameter(random_matrix(1, 4, rng));
    auto m = Var::parameter(random_matrix(4, 2, rng));
    auto s = Var::parameter(Tensor::scalar(0.7));
    auto pos = Var::parameter(random_matrix(3, 4, rng, 0.2, 2.0));
    const auto mix = Var::constant(random_matrix(6, 4, rng));

    std::function<Var()> f;
    std::vector<Var> wrt{a};
    if (op == "matmul") f = [&] { return nn::matmul(a, m); }, wrt = {a, m};
    else if (op == "add_row") f = [&] { return nn::add_row(a, row); }, wrt = {a, row};
    else if (op == "mul_row") f = [&] { return nn::mul_row(a, row); }, wrt = {a, row};
    else if (op == "add") f = [&] { return a + b; }, wrt = {a, b};
    else if (op == "sub") f = [&] { return a - b; }, wrt = {a, b};
    else if (op == "mul") f = [&] { return a * b; }, wrt = {a, b};
    else if (op == "minimum") f = [&] { return nn::minimum(a, b); }, wrt = {a, b};
    else if (op == "mul_scalar") f = [&] { return nn::mul_scalar(a, s); }, wrt = {a, s};
    else if (op == "scale") f = [&] { return a * 1.7; };
    else if (op == "add_scalar") f = [&] { return a + 0.3; };
    else if (op == "relu") f = [&] { return nn::relu(a); };
    else if (op == "tanh") f = [&] { return nn::tanh(a); };
    else if (op == "sigmoid") f = [&] { return nn::sigmoid(a); };
    else if (op == "exp") f = [&] { return nn::exp(a); };
    else if (op == "log") f = [&] { return nn::log(pos); }, wrt = {pos};
    else if (op == "square") f = [&] { return nn::square(a); };
    else if (op == "softplus") f = [&] { return nn::softplus(a); };
    else if (op == "log_sigmoid") f = [&] { return nn::log_sigmoid(a); };
    else if (op == "clamp") f = [&] { return nn::clamp(a, -0.5, 0.5); };
    else if (op == "sum_cols") f = [&] { return nn::sum_cols(a); };
    else if (op == "reshape") f = [&] { return nn::reshape(a, 2, 6); };
    else if (op == "concat_cols") f = [&] { return nn::concat_cols({a, b}); }, wrt = {a, b};
    else if (op == "concat_rows") f = [&] { return nn::concat_rows({a, b}); }, wrt = {a, b};
    else if (op == "slice_cols") f = [&] { return nn::slice_cols(a, 1, 2); };
    else if (op == "layer_norm") f = [&] { return nn::layer_norm(a); };
    else FAIL() << "unknown op " << op;

    auto loss = [&] {
        Var y = f();
        const auto w = Var::constant(Tensor(y.shape(), std::vector<double>(mix.value().values.begin(),
                                                                          mix.value().values.begin() +
                                                                              static_cast<std::ptrdiff_t>(y.size()))));
        return nn::sum(y * w) + nn::mean(nn::square(y));
    };
    const auto r = testkit::check_gradients(loss, wrt);
    EXPECT_LT(r.max_rel_error, 1e-4) << op;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient,
                         ::testing::Values("matmul", "add_row", "mul_row", "add", "sub", "mul", "minimum",
                                           "mul_scalar", "scale", "add_scalar", "relu", "tanh", "sigmoid", "exp",
                                           "log", "square", "softplus", "log_sigmoid", "clamp", "sum_cols",
                                           "reshape", "concat_cols", "concat_rows", "slice_cols", "layer_norm"));

TEST(LayerNorm, RowsHaveZeroMeanAndUnitVariance) {
    Rng rng(12);
    const auto y = nn::layer_norm(Var::constant(random_matrix(10, 16, rng, -3, 5)), 0.0).value();
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double mean = 0, var = 0;
        for (std::size_t j = 0; j < y.cols(); ++j) mean += y(i, j) / 16.0;
        for (std::size_t j = 0; j < y.cols(); ++j) var += (y(i, j) - mean) * (y(i, j) - mean) / 16.0;
        EXPECT_NEAR(mean, 0.0, 1e-6);
        EXPECT_NEAR(var, 1.0, 1e-6);
    }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    auto p = Var::parameter(Tensor::row({1.0, -2.0}));
    nn::Adam opt({p}, 0.1);
    opt.step();
    EXPECT_EQ(p.value().values, (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepsMatchScalarRecurrence) {
    auto p = Var::parameter(Tensor::scalar(1.0));
    nn::Adam opt({p}, 0.1);
    double x = 1.0, m = 0.0, v = 0.0;
    const double grads[] = {0.3, -1.2, 0.05};
    for (int t = 1; t <= 3; ++t) {
        const double g = grads[t - 1];
        p.mutable_grad()[0] = g;
        opt.step();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(p.item(), x, 1e-15);
        EXPECT_EQ(p.grad()[0], 0.0);
    }
    // the first step moves by lr·sign(g) up to ε
    auto q = Var::parameter(Tensor::scalar(0.0));
    nn::Adam one({q}, 0.1);
    q.mutable_grad()[0] = -4.0;
    one.step();
    EXPECT_NEAR(q.item(), 0.1, 1e-8);
}

TEST(Adam, IdenticalParametersStayIdentical) {
    auto a = Var::parameter(Tensor::row({0.4, 0.1}));
    auto b = Var::parameter(Tensor::row({0.4, 0.1}));
    nn::Adam opt({a, b}, 0.05);
    for (int i = 0; i < 5; ++i) {
        nn::backward(nn::sum(nn::square(a)) + nn::sum(nn::square(b)));
        opt.step();
        EXPECT_EQ(a.value().values, b.value().values);
    }
}

TEST(SoftUpdate, Examples) {
    auto t = Var::parameter(Tensor::scalar(1.0));
    const auto o = Var::parameter(Tensor::scalar(0.0));
    nn::soft_update(std::vector<Var>{t}, {o}, 0.01);
    EXPECT_DOUBLE_EQ(t.item(), 0.99);
    nn::soft_update(std::vector<Var>{t}, {o}, 0.0);
    EXPECT_DOUBLE_EQ(t.item(), 0.99);
    nn::soft_update(std::vector<Var>{t}, {o}, 1.0);
    EXPECT_DOUBLE_EQ(t.item(), 0.0);
    EXPECT_THROW(nn::soft_update(std::vector<Var>{t}, {o}, 1.5), ConfigError);
    EXPECT_THROW(nn::soft_update(std::vector<Var>{t}, {o}, -0.1), ConfigError);
}

TEST(Checkpoint, RoundTripPreservesNamesShapesAndBits) {
    const auto path = std::filesystem::temp_directory_path() / "cmid_nn_roundtrip.ckpt";
    nn::NamedTensors in{{"a.weight", Tensor({2, 3}, {1, 2, 3, 4, 5, 6.25})}, {"s", Tensor::scalar(-1e-300)}};
    nn::save_checkpoint(path.string(), in);
    const auto out = nn::load_checkpoint(path.string());
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out.at("a.weight").shape, in[0].second.shape);
    EXPECT_EQ(out.at("a.weight").values, in[0].second.values);
    EXPECT_EQ(out.at("s").values, in[1].second.values);
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
    const auto path = std::filesystem::temp_directory_path() / "cmid_nn_bad.ckpt";
    std::ofstream(path, std::ios::binary) << "NOTACKPT....";
    EXPECT_THROW(nn::load_checkpoint(path.string()), ConfigError);
    nn::save_checkpoint(path.string(), {{"x", Tensor::matrix(4, 4, 1.0)}});
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
    EXPECT_THROW(nn::load_checkpoint(path.string()), ConfigError);
    EXPECT_THROW(nn::load_checkpoint("/nonexistent/file.ckpt"), ConfigError);
}

TEST(ParameterHash, ChangesWithAnyBit) {
    Rng rng(13);
    nn::Mlp net({{3, 4, 2}, {}, false, 1.0}, rng);
    const auto h0 = nn::parameter_hash(net.parameters());
    EXPECT_EQ(h0, nn::parameter_hash(net.parameters()));
    net.parameters()[1].node()->value.values[0] = std::nextafter(net.parameters()[1].value().values[0], 1.0);
    EXPECT_NE(h0, nn::parameter_hash(net.parameters()));
}
