#include "vibefm/augment.hpp"
#include "vibefm/error.hpp"
#include "vibefm/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace vibefm;

namespace {

std::vector<double> random_vector(std::size_t n, Rng& rng)
{
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

Spectrogram random_spectrogram(Rng& rng)
{
    Spectrogram s("m", 2, 3, 5);
    for (auto& x : s.re) x = rng.normal();
    for (auto& x : s.im) x = rng.normal();
    return s;
}

bool is_subset_of(std::span<const AugmentOp> ops, std::span<const AugmentOp> allowed)
{
    return std::all_of(ops.begin(), ops.end(),
                       [&](AugmentOp op) { return std::find(allowed.begin(), allowed.end(), op) != allowed.end(); });
}

} // namespace

TEST(Negate, ExamplesAndInvolution)
{
    EXPECT_EQ(negate(std::vector<double>{1, -2, 0}), (std::vector<double>{-1, 2, 0}));
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const auto x = random_vector(1 + static_cast<std::size_t>(t), rng);
        EXPECT_EQ(negate(negate(x)), x);
    }
    const std::vector<double> zeros(7, 0.0);
    EXPECT_EQ(negate(zeros), zeros);
}

TEST(Scaling, ExamplesAndEnergy)
{
    const std::vector<double> x{1, 2};
    EXPECT_EQ(scaling(x, 1.0), x);
    EXPECT_EQ(scaling(x, 2.0), (std::vector<double>{2, 4}));
    Rng rng(2);
    const auto y = random_vector(64, rng);
    const auto z = scaling(y, 3.0);
    double ey = 0, ez = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ey += y[i] * y[i];
        ez += z[i] * z[i];
    }
    EXPECT_NEAR(ez, 9.0 * ey, 1e-12 * ez);
    for (double f : {0.0, -1.0}) {
        try {
            scaling(x, f);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::NonPositiveFactor);
        }
    }
}

TEST(HorizontalFlip, ExamplesInvolutionMultiset)
{
    EXPECT_EQ(horizontal_flip(std::vector<double>{1, 2, 3}), (std::vector<double>{3, 2, 1}));
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        auto x = random_vector(1 + static_cast<std::size_t>(t), rng);
        auto y = horizontal_flip(x);
        EXPECT_EQ(horizontal_flip(y), x);
        std::sort(x.begin(), x.end());
        std::sort(y.begin(), y.end());
        EXPECT_EQ(x, y);
    }
}

TEST(Permutation, ChunkOrderAndMultiset)
{
    const std::vector<std::size_t> order{1, 0};
    EXPECT_EQ(permute_chunks(std::vector<double>{1, 2, 3, 4}, order), (std::vector<double>{3, 4, 1, 2}));
    Rng rng(4);
    for (int t = 0; t < 200; ++t) {
        const std::size_t k = static_cast<std::size_t>(rng.uniform_int(2, 12));
        const std::size_t len = k * static_cast<std::size_t>(rng.uniform_int(1, 20));
        auto x = random_vector(len, rng);
        auto y = permutation(x, k, rng);
        ASSERT_EQ(y.size(), x.size());
        std::sort(x.begin(), x.end());
        std::sort(y.begin(), y.end());
        EXPECT_EQ(x, y);
    }
    // k = length shuffles individual samples.
    const std::vector<double> ramp{0, 1, 2, 3, 4, 5};
    auto full = permutation(ramp, ramp.size(), rng);
    std::sort(full.begin(), full.end());
    EXPECT_EQ(full, ramp);
}

TEST(Permutation, Errors)
{
    Rng rng(5);
    const std::vector<double> x(10, 1.0);
    try {
        permutation(x, 3, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::IndivisibleLength);
    }
    EXPECT_THROW(permutation(x, 1, rng), Error);
    EXPECT_THROW(permutation(x, 20, rng), Error);
}

TEST(TimeWarp, LimitsAndBounds)
{
    Rng rng(6);
    const auto x = random_vector(200, rng);
    const auto y = time_warp(x, 4, 1e-12, rng);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-9);

    const std::vector<double> constant(100, 2.5);
    for (int t = 0; t < 20; ++t) {
        const auto w = time_warp(constant, 4, 0.5, rng);
        for (double v : w) EXPECT_NEAR(v, 2.5, 1e-12);
    }

    std::vector<double> ramp(300);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i) * 0.1 - 7.0;
    for (int t = 0; t < 50; ++t) {
        const auto w = time_warp(ramp, 4, 0.8, rng);
        ASSERT_EQ(w.size(), ramp.size());
        EXPECT_DOUBLE_EQ(w.front(), ramp.front());
        EXPECT_NEAR(w.back(), ramp.back(), 1e-9);
        for (double v : w) {
            EXPECT_GE(v, ramp.front() - 1e-12);
            EXPECT_LE(v, ramp.back() + 1e-12);
        }
        // A monotone warp of a monotone ramp stays monotone.
        for (std::size_t i = 1; i < w.size(); ++i) EXPECT_GE(w[i], w[i - 1] - 1e-12);
    }
}

TEST(MagnitudeWarp, LimitsAndSigns)
{
    Rng rng(7);
    const auto x = random_vector(128, rng);
    const auto y = magnitude_warp(x, 4, 1e-12, rng);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-9);
    const std::vector<double> zeros(64, 0.0);
    EXPECT_EQ(magnitude_warp(zeros, 4, 0.3, rng), zeros);

    for (int t = 0; t < 50; ++t) {
        const std::uint64_t seed = static_cast<std::uint64_t>(t);
        Rng a(seed), b(seed);
        const auto w = magnitude_warp(x, 4, 0.2, a);
        // The same draw applied to all-ones exposes the envelope itself.
        const auto env = magnitude_warp(std::vector<double>(x.size(), 1.0), 4, 0.2, b);
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_NEAR(w[i], x[i] * env[i], 1e-12);
            if (env[i] > 0) EXPECT_EQ(std::signbit(w[i]), std::signbit(x[i]));
        }
    }
}

TEST(PhaseShift, IdentityNegationAndMagnitude)
{
    Rng rng(8);
    const auto s = random_spectrogram(rng);
    const auto same = phase_shift(s, 0.0);
    EXPECT_EQ(same.re, s.re);
    EXPECT_EQ(same.im, s.im);
    const auto neg = phase_shift(s, std::numbers::pi);
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_NEAR(neg.re[i], -s.re[i], 1e-12);
        EXPECT_NEAR(neg.im[i], -s.im[i], 1e-12);
    }
    for (int t = 0; t < 100; ++t) {
        const double theta = rng.uniform(-std::numbers::pi, std::numbers::pi);
        const auto r = phase_shift(s, theta);
        ASSERT_EQ(r.size(), s.size());
        EXPECT_EQ(r.bins, s.bins);
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double m0 = std::hypot(s.re[i], s.im[i]);
            EXPECT_LE(std::abs(std::hypot(r.re[i], r.im[i]) - m0), 1e-12 * m0);
        }
    }
}

TEST(Mixup, ExamplesAndConvexHull)
{
    Rng rng(9);
    auto make = [&](std::vector<double> label) {
        LabeledExample e;
        Signal s(2, 16);
        for (auto& v : s.data) v = rng.normal();
        e.modalities["m"] = s;
        e.soft_label = std::move(label);
        return e;
    };
    const auto a = make({1, 0, 0});
    const auto b = make({0, 0, 1});
    const auto whole = mixup(a, b, 1.0);
    EXPECT_EQ(whole.modalities, a.modalities);
    EXPECT_EQ(whole.soft_label, a.soft_label);

    LabeledExample opposite = a;
    for (auto& v : opposite.modalities["m"].data) v = -v;
    const auto cancel = mixup(a, opposite, 0.5);
    for (double v : cancel.modalities.at("m").data) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(cancel.soft_label, a.soft_label);

    for (int t = 0; t < 200; ++t) {
        const double lambda = sample_mixup_lambda(rng, 0.2);
        ASSERT_GE(lambda, 0.0);
        ASSERT_LE(lambda, 1.0);
        const auto m = mixup(a, b, lambda);
        double sum = 0;
        for (double p : m.soft_label) sum += p;
        EXPECT_NEAR(sum, 1.0, 1e-12);
        const auto& x = a.modalities.at("m").data;
        const auto& y = b.modalities.at("m").data;
        const auto& z = m.modalities.at("m").data;
        for (std::size_t i = 0; i < z.size(); ++i) {
            EXPECT_GE(z[i], std::min(x[i], y[i]) - 1e-12);
            EXPECT_LE(z[i], std::max(x[i], y[i]) + 1e-12);
        }
    }
}

TEST(Mixup, ShapeMismatch)
{
    LabeledExample a, b;
    a.modalities["m"] = Signal(1, 8);
    b.modalities["m"] = Signal(1, 9);
    a.soft_label = b.soft_label = {1.0};
    try {
        mixup(a, b, 0.5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

TEST(Plans, GatedByStageAndDeterministic)
{
    for (Stage stage : {Stage::Pretrain, Stage::Supervised, Stage::Finetune, Stage::SupervisedFinetune}) {
        const auto allowed = allowed_ops(stage);
        for (std::uint64_t seed = 0; seed < 300; ++seed) {
            const auto plan = sample_plan(stage, seed);
            EXPECT_TRUE(is_subset_of(plan.time_domain_ops, allowed));
            EXPECT_TRUE(is_subset_of(plan.freq_domain_ops, allowed));
            for (AugmentOp op : plan.freq_domain_ops) EXPECT_TRUE(is_frequency_domain(op));
            for (AugmentOp op : plan.time_domain_ops) EXPECT_FALSE(is_frequency_domain(op));
            EXPECT_EQ(sample_plan(stage, seed), plan);
        }
    }
    EXPECT_EQ(allowed_ops(Stage::Pretrain).size(), 7u);
    const auto ft = allowed_ops(Stage::Finetune);
    EXPECT_EQ(std::vector<AugmentOp>(ft.begin(), ft.end()), (std::vector<AugmentOp>{AugmentOp::Mixup, AugmentOp::PhaseShift}));
    EXPECT_FALSE(is_subset_of(std::vector<AugmentOp>{AugmentOp::Mixup}, allowed_ops(Stage::Pretrain)));

    const std::vector<AugmentOp> bad{AugmentOp::Negation};
    EXPECT_THROW(sample_plan(Stage::Finetune, 0, {}, bad), Error);
}

TEST(Plans, AuditLogsStayInsideTheStageRow)
{
    Rng rng(10);
    Signal sig(1, 240);
    for (auto& v : sig.data) v = rng.normal();
    const auto spec = random_spectrogram(rng);
    AugmentParams params;
    params.op_probability = 1.0;
    for (Stage stage : {Stage::Pretrain, Stage::Finetune}) {
        const auto allowed = allowed_ops(stage);
        for (std::uint64_t seed = 0; seed < 40; ++seed) {
            const auto plan = sample_plan(stage, seed, params);
            std::vector<AugmentOp> audit;
            Rng local(seed);
            const Signal out = apply_time_ops(sig, plan, local, &audit);
            EXPECT_EQ(out.samples, sig.samples);
            const Spectrogram fs = apply_freq_ops(spec, plan, local, &audit);
            EXPECT_EQ(fs.size(), spec.size());
            EXPECT_TRUE(is_subset_of(audit, allowed));
            EXPECT_EQ(std::count(audit.begin(), audit.end(), AugmentOp::Mixup), 0);
        }
    }
}

TEST(Plans, NamesRoundTrip)
{
    for (const char* name : {"permutation", "negation", "time_warp", "horizontal_flip", "magnitude_warp", "scaling",
                             "mixup", "phase_shift"})
        EXPECT_EQ(to_string(parse_augment_op(name)), name);
    EXPECT_THROW(parse_augment_op("jitter"), Error);
}
