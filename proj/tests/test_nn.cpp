#include "vibefm/nn.hpp"
#include "vibefm/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

using namespace vibefm;
using namespace vibefm::nn;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0)
{
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.normal(0.0, scale);
    return t;
}

// Scalar probe: L = sum(y * w) for a fixed random w, so dL/dy = w.
struct Probe {
    std::vector<double> weights;
    double value(const Var& y)
    {
        if (weights.size() != y.size()) {
            Rng rng(99);
            weights.resize(y.size());
            for (double& w : weights) w = rng.normal();
        }
        return std::inner_product(y.data().begin(), y.data().end(), weights.begin(), 0.0);
    }
};

// Compares analytic gradients of every parameter against central differences.
void check_gradients(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Var> params,
                     double tol = 1e-6, double step = 1e-5)
{
    Probe probe;
    Var y = f(params);
    probe.value(y);
    std::vector<std::pair<Var, std::vector<double>>> seeds{{y, probe.weights}};
    backward(seeds);

    for (std::size_t p = 0; p < params.size(); ++p) {
        auto analytic = std::vector<double>(params[p].grad().begin(), params[p].grad().end());
        auto& data = params[p].mutable_value().data;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + step;
            const double up = probe.value(f(params));
            data[i] = saved - step;
            const double down = probe.value(f(params));
            data[i] = saved;
            const double numeric = (up - down) / (2 * step);
            const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
            ASSERT_NEAR(analytic[i] / denom, numeric / denom, tol) << "param " << p << " index " << i;
        }
    }
}

} // namespace

TEST(Nn, LinearAndBiasGradients)
{
    Rng rng(1);
    auto x = Var::parameter(random_tensor({2, 3, 4}, rng));
    auto w = Var::parameter(random_tensor({4, 5}, rng));
    auto b = Var::parameter(random_tensor({5}, rng));
    check_gradients([](const std::vector<Var>& p) { return linear(p[0], p[1], p[2]); }, {x, w, b});
}

TEST(Nn, ElementwiseGradients)
{
    Rng rng(2);
    auto a = Var::parameter(random_tensor({3, 4}, rng));
    auto b = Var::parameter(random_tensor({3, 4}, rng));
    check_gradients([](const std::vector<Var>& p) { return tanh(add(scale(p[0], 0.7), relu(p[1]))); }, {a, b});
}

TEST(Nn, ConvGradientsOverlappingWindows)
{
    Rng rng(3);
    auto x = Var::parameter(random_tensor({2, 11, 3}, rng));
    auto w = Var::parameter(random_tensor({4 * 3, 5}, rng, 0.5));
    auto b = Var::parameter(random_tensor({5}, rng));
    check_gradients([](const std::vector<Var>& p) { return conv1d(p[0], p[1], p[2], 4, 2); }, {x, w, b});
}

TEST(Nn, ConvMatchesDirectLoop)
{
    Rng rng(4);
    const std::size_t n = 2, len = 9, cin = 2, cout = 3, k = 3, s = 3;
    auto x = Var::constant(random_tensor({n, len, cin}, rng));
    auto w = Var::constant(random_tensor({k * cin, cout}, rng));
    auto b = Var::constant(random_tensor({cout}, rng));
    auto y = conv1d(x, w, b, k, s);
    const std::size_t lout = (len - k) / s + 1;
    ASSERT_EQ(y.shape(), (Shape{n, lout, cout}));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < lout; ++l)
            for (std::size_t o = 0; o < cout; ++o) {
                double acc = b.value().data[o];
                for (std::size_t kk = 0; kk < k; ++kk)
                    for (std::size_t c = 0; c < cin; ++c)
                        acc += x.value().data[(i * len + l * s + kk) * cin + c] * w.value().data[(kk * cin + c) * cout + o];
                EXPECT_NEAR(y.value().data[(i * lout + l) * cout + o], acc, 1e-12);
            }
}

TEST(Nn, GruGradients)
{
    Rng rng(5);
    const std::size_t h = 3;
    auto x = Var::parameter(random_tensor({2, 4, 3}, rng));
    auto wih = Var::parameter(random_tensor({3, 3 * h}, rng, 0.5));
    auto whh = Var::parameter(random_tensor({h, 3 * h}, rng, 0.5));
    auto bih = Var::parameter(random_tensor({3 * h}, rng, 0.5));
    auto bhh = Var::parameter(random_tensor({3 * h}, rng, 0.5));
    check_gradients([](const std::vector<Var>& p) { return gru(p[0], p[1], p[2], p[3], p[4]); },
                    {x, wih, whh, bih, bhh});
}

TEST(Nn, GruStepMatchesScalarReference)
{
    // One step, one unit, one input: closed-form GRU cell.
    auto x = Var::constant(Tensor({1, 1, 1}, std::vector<double>{0.3}));
    auto wih = Var::constant(Tensor({1, 3}, std::vector<double>{0.5, -0.4, 0.9}));
    auto whh = Var::constant(Tensor({1, 3}, std::vector<double>{0.2, 0.1, -0.3}));
    auto bih = Var::constant(Tensor({3}, std::vector<double>{0.1, 0.0, -0.2}));
    auto bhh = Var::constant(Tensor({3}, std::vector<double>{0.0, 0.05, 0.3}));
    auto y = gru(x, wih, whh, bih, bhh);
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double r = sig(0.3 * 0.5 + 0.1 + 0.0);
    const double z = sig(0.3 * -0.4 + 0.0 + 0.05);
    const double n = std::tanh(0.3 * 0.9 - 0.2 + r * 0.3);
    EXPECT_NEAR(y.value().data[0], (1 - z) * n, 1e-15);
}

TEST(Nn, LayerNormSoftmaxGradients)
{
    Rng rng(6);
    auto x = Var::parameter(random_tensor({3, 5}, rng));
    auto g = Var::parameter(random_tensor({5}, rng));
    auto b = Var::parameter(random_tensor({5}, rng));
    check_gradients([](const std::vector<Var>& p) { return softmax(layer_norm(p[0], p[1], p[2])); }, {x, g, b});
}

TEST(Nn, BmmGradientsBothLayouts)
{
    Rng rng(7);
    auto a = Var::parameter(random_tensor({2, 3, 4}, rng));
    auto b = Var::parameter(random_tensor({2, 4, 2}, rng));
    auto bt = Var::parameter(random_tensor({2, 2, 4}, rng));
    check_gradients([](const std::vector<Var>& p) { return bmm(p[0], p[1]); }, {a, b});
    a.zero_grad();
    check_gradients([](const std::vector<Var>& p) { return bmm(p[0], p[1], true); }, {a, bt});
}

TEST(Nn, GatherConcatSliceMeanMaskGradients)
{
    Rng rng(8);
    auto x = Var::parameter(random_tensor({2, 3, 4}, rng));
    auto index = std::make_shared<const std::vector<std::int64_t>>(std::vector<std::int64_t>{11, -1, 0, 5, 5, 7});
    Tensor mask({1, 2, 2}, std::vector<double>{0.0, -3.0, 1.0, 0.0});
    check_gradients(
        [&](const std::vector<Var>& p) {
            auto g = gather(p[0], 2, index, {2, 6});
            auto parts = std::vector<Var>{g, slice_last(reshape(p[0], {2, 12}), 2, 6)};
            auto c = concat_last(parts);
            auto m = mean_middle(reshape(c, {2, 5, 2}));
            return add_window_mask(reshape(m, {1, 2, 2}), mask, 1);
        },
        {x});
}

TEST(Nn, SoftCrossEntropyGradientAndValue)
{
    Rng rng(9);
    auto logits = Var::parameter(random_tensor({3, 4}, rng));
    Tensor targets({3, 4}, std::vector<double>{1, 0, 0, 0, 0, 0.5, 0.5, 0, 0, 0, 0, 1});
    check_gradients([&](const std::vector<Var>& p) { return soft_cross_entropy(p[0], targets); }, {logits});

    // Uniform logits: loss = ln C regardless of targets.
    auto zero = Var::constant(Tensor({3, 4}));
    EXPECT_NEAR(soft_cross_entropy(zero, targets).value().data[0], std::log(4.0), 1e-12);
}

TEST(Nn, FrozenInputsBuildNoGraph)
{
    Rng rng(10);
    auto x = Var::constant(random_tensor({2, 3}, rng));
    auto w = Var::constant(random_tensor({3, 2}, rng));
    auto y = matmul(x, w);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->inputs.empty());
}
