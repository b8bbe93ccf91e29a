#include "vibefm/error.hpp"
#include "vibefm/focal.hpp"
#include "vibefm/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace vibefm;
using Vec = std::vector<double>;

namespace {

// Plain-loop oracles, written straight from the definitions.
double cosine(const Vec& a, const Vec& b)
{
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

double nce_oracle(const std::vector<Vec>& a, const std::vector<Vec>& p, double tau)
{
    double loss = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double denom = 0;
        for (std::size_t j = 0; j < p.size(); ++j) denom += std::exp(cosine(a[i], p[j]) / tau);
        loss += -std::log(std::exp(cosine(a[i], p[i]) / tau) / denom);
    }
    return loss / static_cast<double>(a.size());
}

Vec part(const Vec& v, std::size_t begin, std::size_t end) { return Vec(v.begin() + begin, v.begin() + end); }

std::vector<Vec> column(std::span<const EmbeddingBundle> b, std::size_t m, bool shared)
{
    std::vector<Vec> out;
    for (const auto& e : b) {
        const auto& v = e.embeddings[m];
        out.push_back(shared ? part(v, 0, e.shared_dim) : part(v, e.shared_dim, e.dim));
    }
    return out;
}

double orth_oracle(std::span<const EmbeddingBundle> bundles)
{
    double sum = 0;
    int n = 0;
    for (const auto& b : bundles) {
        const std::size_t mods = b.embeddings.size();
        for (std::size_t m = 0; m < mods; ++m) {
            const Vec pm = part(b.embeddings[m], b.shared_dim, b.dim);
            for (std::size_t o = m + 1; o < mods; ++o) {
                const double c = cosine(pm, part(b.embeddings[o], b.shared_dim, b.dim));
                sum += c * c;
                ++n;
            }
            const double c = cosine(pm, part(b.embeddings[m], 0, b.shared_dim));
            sum += c * c;
            ++n;
        }
    }
    return sum / n;
}

std::vector<EmbeddingBundle> random_bundles(std::size_t batch, std::size_t mods, std::size_t dim, Rng& rng)
{
    std::vector<EmbeddingBundle> out;
    for (std::size_t b = 0; b < batch; ++b) {
        EmbeddingBundle e;
        e.dim = dim;
        e.shared_dim = dim / 2;
        for (std::size_t m = 0; m < mods; ++m) {
            e.modalities.push_back("m" + std::to_string(m));
            Vec v(dim);
            for (double& x : v) x = rng.normal();
            e.embeddings.push_back(v);
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Vec> random_vectors(std::size_t n, std::size_t d, Rng& rng)
{
    std::vector<Vec> out(n, Vec(d));
    for (auto& v : out)
        for (double& x : v) x = rng.normal();
    return out;
}

} // namespace

TEST(InfoNce, SingleElementBatchIsZero)
{
    Rng rng(1);
    auto a = random_vectors(1, 5, rng);
    auto p = random_vectors(1, 5, rng);
    EXPECT_EQ(info_nce(a, p, 0.07), 0.0);
}

TEST(InfoNce, IdenticalVectorsGiveLogB)
{
    std::vector<Vec> same(4, Vec{0.3, -1.0, 2.0});
    EXPECT_NEAR(info_nce(same, same, 0.07), std::log(4.0), 1e-9);
}

TEST(InfoNce, MatchesBruteForce)
{
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_vectors(3, 6, rng);
        auto p = random_vectors(3, 6, rng);
        for (double tau : {0.07, 0.5, 1.0}) EXPECT_NEAR(info_nce(a, p, tau), nce_oracle(a, p, tau), 1e-10);
    }
}

TEST(InfoNce, NonNegativeAndZeroVectorRejected)
{
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_vectors(5, 4, rng);
        auto p = random_vectors(5, 4, rng);
        EXPECT_GE(info_nce(a, p, 0.07), 0.0);
    }
    std::vector<Vec> a{{1, 0}, {0, 0}};
    std::vector<Vec> p{{1, 0}, {0, 1}};
    try {
        info_nce(a, p, 0.07);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ZeroVector);
    }
}

TEST(SharedSpace, ClosedFormForOrthogonalSamples)
{
    // Shared parts equal across modalities; samples mutually orthogonal.
    const std::size_t batch = 4;
    const double tau = 0.07;
    std::vector<EmbeddingBundle> view;
    for (std::size_t b = 0; b < batch; ++b) {
        EmbeddingBundle e{8, 4, {"a", "s"}, {}};
        Vec v(8, 0.0);
        v[b] = 1.0;
        v[4 + b] = 1.0;
        e.embeddings = {v, v};
        view.push_back(e);
    }
    const double expected = -std::log(std::exp(1 / tau) / (std::exp(1 / tau) + (batch - 1) * std::exp(0.0)));
    EXPECT_NEAR(shared_space_loss(view, view, tau), expected, 1e-10);
}

TEST(SharedSpace, MatchesBruteForceAndIsPermutationInvariant)
{
    Rng rng(4);
    auto v1 = random_bundles(5, 2, 6, rng);
    auto v2 = random_bundles(5, 2, 6, rng);
    double oracle = 0;
    for (const auto* v : {&v1, &v2}) {
        oracle += nce_oracle(column(*v, 0, true), column(*v, 1, true), 0.07);
        oracle += nce_oracle(column(*v, 1, true), column(*v, 0, true), 0.07);
    }
    oracle /= 4;
    EXPECT_NEAR(shared_space_loss(v1, v2, 0.07), oracle, 1e-10);

    std::vector<std::size_t> order{3, 0, 4, 1, 2};
    std::vector<EmbeddingBundle> p1, p2;
    for (auto i : order) {
        p1.push_back(v1[i]);
        p2.push_back(v2[i]);
    }
    EXPECT_NEAR(shared_space_loss(p1, p2, 0.07), oracle, 1e-10);
    EXPECT_NEAR(private_space_loss(p1, p2, 0.07), private_space_loss(v1, v2, 0.07), 1e-10);
    EXPECT_NEAR(orthogonality_penalty(p1), orthogonality_penalty(v1), 1e-12);
}

TEST(SharedSpace, BatchOfOneIsZero)
{
    Rng rng(5);
    auto v1 = random_bundles(1, 2, 6, rng);
    auto v2 = random_bundles(1, 2, 6, rng);
    EXPECT_EQ(shared_space_loss(v1, v2, 0.07), 0.0);
    EXPECT_EQ(private_space_loss(v1, v2, 0.07), 0.0);
}

TEST(PrivateSpace, IdenticalPrivateVectorsGiveLogB)
{
    std::vector<EmbeddingBundle> view;
    Rng rng(6);
    for (int b = 0; b < 4; ++b) {
        EmbeddingBundle e{6, 3, {"a", "s"}, {}};
        Vec v1{rng.normal(), rng.normal(), rng.normal(), 1, 2, 3};
        Vec v2{rng.normal(), rng.normal(), rng.normal(), -1, 0.5, 2};
        e.embeddings = {v1, v2};
        view.push_back(e);
    }
    EXPECT_NEAR(private_space_loss(view, view, 0.07), std::log(4.0), 1e-9);
}

TEST(PrivateSpace, MatchesBruteForce)
{
    Rng rng(7);
    auto v1 = random_bundles(3, 2, 8, rng);
    auto v2 = random_bundles(3, 2, 8, rng);
    double oracle = 0;
    for (std::size_t m = 0; m < 2; ++m) {
        oracle += nce_oracle(column(v1, m, false), column(v2, m, false), 0.07);
        oracle += nce_oracle(column(v2, m, false), column(v1, m, false), 0.07);
    }
    EXPECT_NEAR(private_space_loss(v1, v2, 0.07), oracle / 4, 1e-10);
}

TEST(Orthogonality, ZeroOneAndBruteForce)
{
    EmbeddingBundle orth{4, 2, {"a", "s"}, {{1, 0, 0, 1}, {0, 1, 1, 0}}};
    // private_a = (0,1), private_s = (1,0), shared_a = (1,0), shared_s = (0,1)
    std::vector<EmbeddingBundle> one{orth};
    EXPECT_NEAR(orthogonality_penalty(one), 0.0, 1e-15);

    EmbeddingBundle same{4, 2, {"a"}, {{0.3, 0.7, 0.3, 0.7}}};
    std::vector<EmbeddingBundle> single{same};
    EXPECT_NEAR(orthogonality_penalty(single), 1.0, 1e-12);

    Rng rng(8);
    for (std::size_t mods : {1u, 2u, 3u}) {
        auto b = random_bundles(6, mods, 8, rng);
        const double v = orthogonality_penalty(b);
        EXPECT_NEAR(v, orth_oracle(b), 1e-10);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(FocalInvariants, RotationAndRescaling)
{
    Rng rng(9);
    auto v1 = random_bundles(4, 2, 6, rng);
    auto v2 = random_bundles(4, 2, 6, rng);
    TrainConfig cfg = TrainConfig::defaults(Stage::Pretrain);
    const auto base = focal_loss(v1, v2, cfg);

    // A common rotation in the (0, 1) plane of the shared subspace and the (3, 4)
    // plane of the private subspace keeps every cosine.
    const double c = std::cos(0.7), s = std::sin(0.7);
    auto rotate = [&](std::vector<EmbeddingBundle> v) {
        for (auto& e : v)
            for (auto& x : e.embeddings) {
                const double a = x[0], b = x[1], p = x[3], q = x[4];
                x[0] = c * a - s * b;
                x[1] = s * a + c * b;
                x[3] = c * p - s * q;
                x[4] = s * p + c * q;
            }
        return v;
    };
    auto r1 = rotate(v1), r2 = rotate(v2);
    const auto rot = focal_loss(r1, r2, cfg);
    EXPECT_NEAR(rot.shared_term, base.shared_term, 1e-10);
    EXPECT_NEAR(rot.private_term, base.private_term, 1e-10);

    auto scaled = v1;
    for (auto& e : scaled)
        for (auto& x : e.embeddings)
            for (double& y : x) y *= 3.7;
    EXPECT_NEAR(orthogonality_penalty(scaled), orthogonality_penalty(v1), 1e-12);
}

TEST(FocalLoss, WeightedSum)
{
    Rng rng(10);
    auto v1 = random_bundles(4, 2, 6, rng);
    auto v2 = random_bundles(4, 2, 6, rng);
    TrainConfig cfg = TrainConfig::defaults(Stage::Pretrain);
    auto unit = focal_loss(v1, v2, cfg);
    EXPECT_DOUBLE_EQ(unit.total, unit.shared_term + unit.private_term + unit.orth_term);

    cfg.loss_weights = {0.5, 2.0, 0.0};
    auto weighted = focal_loss(v1, v2, cfg);
    EXPECT_DOUBLE_EQ(weighted.total, 0.5 * unit.shared_term + 2.0 * unit.private_term);
    EXPECT_EQ(weighted.orth_term, unit.orth_term);
}

TEST(FocalLoss, GradientMatchesFiniteDifferences)
{
    Rng rng(11);
    TrainConfig cfg = TrainConfig::defaults(Stage::Pretrain);
    cfg.loss_weights = {1.0, 0.7, 1.3};
    for (int batch = 0; batch < 20; ++batch) {
        const std::size_t b = 2 + static_cast<std::size_t>(batch % 4);
        FocalViews views;
        views.shared_dim = 3;
        for (int m = 0; m < 2; ++m) {
            nn::Tensor t1({b, 6}), t2({b, 6});
            for (double& x : t1.data) x = rng.normal();
            for (double& x : t2.data) x = rng.normal();
            views.view1.push_back(t1);
            views.view2.push_back(t2);
        }
        FocalGradients grads;
        focal_loss(views, cfg, &grads);

        double worst = 0;
        for (int side = 0; side < 2; ++side)
            for (std::size_t m = 0; m < 2; ++m) {
                auto& vals = side == 0 ? views.view1[m].data : views.view2[m].data;
                const auto& g = side == 0 ? grads.view1[m].data : grads.view2[m].data;
                for (std::size_t i = 0; i < vals.size(); ++i) {
                    const double saved = vals[i];
                    const double h = 1e-5;
                    vals[i] = saved + h;
                    const double up = focal_loss(views, cfg).total;
                    vals[i] = saved - h;
                    const double down = focal_loss(views, cfg).total;
                    vals[i] = saved;
                    const double numeric = (up - down) / (2 * h);
                    const double rel = std::abs(numeric - g[i]) / std::max({1e-6, std::abs(numeric), std::abs(g[i])});
                    worst = std::max(worst, rel);
                }
            }
        EXPECT_LT(worst, 1e-4) << "batch " << batch;
    }
}
