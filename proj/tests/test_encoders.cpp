#include "vibefm/checkpoint.hpp"
#include "vibefm/encoders.hpp"
#include "vibefm/error.hpp"
#include "vibefm/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

using namespace vibefm;
using nn::Tensor;
using nn::Var;

namespace {

std::vector<Spectrogram> random_sample(std::span<const ModalitySpec> specs, Rng& rng, double scale = 1.0)
{
    std::vector<Spectrogram> out;
    for (const auto& s : specs) {
        Spectrogram sp(s.name, static_cast<std::size_t>(s.channels), static_cast<std::size_t>(s.num_intervals), s.bins());
        for (double& v : sp.re) v = rng.normal(0.0, scale);
        for (double& v : sp.im) v = rng.normal(0.0, scale);
        sp.normalized = true;
        out.push_back(std::move(sp));
    }
    return out;
}

std::vector<Tensor> random_batch(std::span<const ModalitySpec> specs, std::size_t batch, Rng& rng)
{
    std::vector<std::vector<Spectrogram>> samples;
    for (std::size_t b = 0; b < batch; ++b) samples.push_back(random_sample(specs, rng));
    std::vector<const std::vector<Spectrogram>*> ptrs;
    for (auto& s : samples) ptrs.push_back(&s);
    return pack_batch(ptrs, specs);
}

EncoderConfig small_config(EncoderKind kind)
{
    EncoderConfig c;
    c.kind = kind;
    c.embedding_dim = 8;
    c.shared_dim = 4;
    c.deepsense.conv_channels = {3, 2};
    c.deepsense.gru_hidden = 4;
    c.swin.embed_dim = 4;
    c.swin.freq_patches = 4;
    c.swin.window = 2;
    c.seed = 5;
    return c;
}

std::vector<ModalitySpec> small_specs()
{
    // 4 intervals of 16 samples (9 bins) and 4 intervals of 8 samples (5 bins).
    return {ModalitySpec{"a", 32, 1, 4, 2.0}, ModalitySpec{"b", 16, 1, 4, 2.0}};
}

} // namespace

class EncoderKinds : public ::testing::TestWithParam<EncoderKind> {};

TEST_P(EncoderKinds, DefaultShapesAndDeterminism)
{
    auto specs = default_modalities();
    EncoderConfig cfg;
    cfg.kind = GetParam();
    MultimodalModel model(cfg, specs, HeadKind::LinearProbe, 4);
    Rng rng(1);
    auto sample = random_sample(specs, rng);
    auto a = encode(sample, model);
    auto b = encode(sample, model);
    ASSERT_EQ(a.embeddings.size(), 2u);
    EXPECT_EQ(a.embeddings[0].size(), 128u);
    EXPECT_EQ(a.embeddings[1].size(), 128u);
    EXPECT_EQ(a.embeddings, b.embeddings);
    for (const auto& e : a.embeddings)
        for (double v : e) EXPECT_LT(std::abs(v), 1e6);
}

TEST_P(EncoderKinds, ZeroInputGivesFiniteEmbedding)
{
    auto specs = default_modalities();
    EncoderConfig cfg;
    cfg.kind = GetParam();
    MultimodalModel model(cfg, specs, HeadKind::LinearProbe, 4);
    Rng rng(2);
    auto sample = random_sample(specs, rng, 0.0);
    auto bundle = encode(sample, model);
    for (const auto& e : bundle.embeddings)
        for (double v : e) EXPECT_TRUE(std::isfinite(v));
}

TEST_P(EncoderKinds, BatchRowsMatchSingleSamples)
{
    auto specs = small_specs();
    MultimodalModel model(small_config(GetParam()), specs, HeadKind::LinearProbe, 3);
    Rng rng(3);
    std::vector<std::vector<Spectrogram>> samples{random_sample(specs, rng), random_sample(specs, rng)};
    std::vector<const std::vector<Spectrogram>*> ptrs{&samples[0], &samples[1]};
    auto batch = model.encode(pack_batch(ptrs, specs));
    for (std::size_t b = 0; b < 2; ++b) {
        auto single = encode(samples[b], model);
        for (std::size_t m = 0; m < 2; ++m)
            for (std::size_t d = 0; d < 8; ++d)
                EXPECT_NEAR(batch[m].data()[b * 8 + d], single.embeddings[m][d], 1e-12);
    }
}

TEST_P(EncoderKinds, ParameterGradientsMatchFiniteDifferences)
{
    auto specs = small_specs();
    MultimodalModel model(small_config(GetParam()), specs, HeadKind::SupervisedFusion, 3);
    set_trainable(model, Stage::Supervised);
    Rng rng(4);
    auto inputs = random_batch(specs, 3, rng);
    Tensor targets({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0.5, 0.5});
    auto loss_of = [&] {
        auto emb = model.encode(inputs);
        return nn::soft_cross_entropy(model.logits(emb), targets);
    };
    nn::backward(loss_of());

    Rng pick(7);
    for (auto& p : model.parameters()) {
        auto analytic = std::vector<double>(p.var.grad().begin(), p.var.grad().end());
        auto& data = p.var.mutable_value().data;
        for (int trial = 0; trial < 3; ++trial) {
            const auto i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
            const double saved = data[i];
            const double h = 1e-5;
            data[i] = saved + h;
            const double up = loss_of().data()[0];
            data[i] = saved - h;
            const double down = loss_of().data()[0];
            data[i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double denom = std::max({1e-6, std::abs(numeric), std::abs(analytic[i])});
            EXPECT_LT(std::abs(numeric - analytic[i]) / denom, 1e-4) << p.name << "[" << i << "]";
        }
    }
}

INSTANTIATE_TEST_SUITE_P(All, EncoderKinds, ::testing::Values(EncoderKind::DeepSense, EncoderKind::Swin),
                         [](const auto& info) { return info.param == EncoderKind::Swin ? "Swin" : "DeepSense"; });

TEST(Encoders, ShapeMismatchIsReported)
{
    auto specs = default_modalities();
    MultimodalModel model(EncoderConfig{}, specs, HeadKind::LinearProbe, 4);
    std::vector<Tensor> wrong{Tensor({1, 10, 800, 2}), Tensor({1, 10, 11, 2})};
    try {
        model.encode(wrong);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

TEST(Encoders, NonFiniteActivationIsReported)
{
    auto specs = small_specs();
    MultimodalModel model(small_config(EncoderKind::DeepSense), specs, HeadKind::LinearProbe, 3);
    Rng rng(5);
    auto inputs = random_batch(specs, 1, rng);
    inputs[0].data[0] = std::numeric_limits<double>::infinity();
    try {
        model.encode(inputs);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonFiniteActivation);
    }
}

TEST(Encoders, TrainableCountsPerStage)
{
    auto specs = default_modalities();
    MultimodalModel probe(EncoderConfig{}, specs, HeadKind::LinearProbe, 4);
    EXPECT_EQ(count_trainable_params(probe, Stage::Finetune), 2u * 128u * 4u + 4u);

    MultimodalModel fused(EncoderConfig{}, specs, HeadKind::SupervisedFusion, 4);
    EXPECT_EQ(count_trainable_params(fused, Stage::SupervisedFinetune), 128u * 4u + 4u);
    EXPECT_GT(count_trainable_params(fused, Stage::Supervised), count_trainable_params(probe, Stage::Finetune));
    EXPECT_EQ(count_trainable_params(fused, Stage::Supervised),
              count_params(fused.encoder_parameters()) + count_params(fused.head().parameters()));

    set_trainable(probe, Stage::Finetune);
    std::size_t flagged = 0;
    for (const auto& p : probe.parameters())
        if (p.var.requires_grad()) flagged += p.var.size();
    EXPECT_EQ(flagged, 1028u);
}

TEST(Encoders, ParameterNamesAreUnique)
{
    for (auto kind : {EncoderKind::DeepSense, EncoderKind::Swin}) {
        EncoderConfig cfg;
        cfg.kind = kind;
        MultimodalModel model(cfg, default_modalities(), HeadKind::SupervisedFusion, 4);
        std::set<std::string> names;
        for (const auto& p : model.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
    }
}

TEST(Encoders, CloneIsIndependent)
{
    auto specs = small_specs();
    MultimodalModel model(small_config(EncoderKind::Swin), specs, HeadKind::LinearProbe, 3);
    auto copy = model.clone();
    auto a = model.parameters();
    auto b = copy.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].var.value(), b[i].var.value());
    b[0].var.mutable_value().data[0] += 1.0;
    EXPECT_NE(a[0].var.value(), b[0].var.value());
}

TEST(Encoders, SplitEmbeddingRoundTrips)
{
    auto specs = default_modalities();
    MultimodalModel model(EncoderConfig{}, specs, HeadKind::LinearProbe, 4);
    Rng rng(6);
    auto bundle = encode(random_sample(specs, rng), model);
    auto parts = split_embedding(bundle);
    for (std::size_t m = 0; m < parts.size(); ++m) {
        EXPECT_EQ(parts[m].shared.size(), 64u);
        EXPECT_EQ(parts[m].private_.size(), 64u);
        auto joined = parts[m].shared;
        joined.insert(joined.end(), parts[m].private_.begin(), parts[m].private_.end());
        EXPECT_EQ(joined, bundle.embeddings[m]);
    }
}

TEST(Encoders, ConfigRejectsDegenerateSplit)
{
    EncoderConfig c;
    c.shared_dim = 0;
    EXPECT_THROW(c.validate(), Error);
    c.shared_dim = 128;
    EXPECT_THROW(c.validate(), Error);
}

TEST(Encoders, ConfigJsonRoundTrip)
{
    EncoderConfig c = small_config(EncoderKind::Swin);
    c.swin.depths = {2, 4};
    nlohmann::json j = c;
    EncoderConfig back = j.get<EncoderConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Heads, LinearProbeIsAffineAndZeroWeightsGiveZero)
{
    ClassifierHead head(HeadKind::LinearProbe, 6, 3, 9);
    EmbeddingBundle x{3, 1, {"a", "b"}, {{1, 2, 3}, {-1, 0.5, 2}}};
    EmbeddingBundle zero{3, 1, {"a", "b"}, {{0, 0, 0}, {0, 0, 0}}};
    EmbeddingBundle scaled = x;
    for (auto& e : scaled.embeddings)
        for (double& v : e) v *= 2.5;
    auto fx = classify(x, head), f0 = classify(zero, head), fs = classify(scaled, head);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(fs[c] - f0[c], 2.5 * (fx[c] - f0[c]), 1e-12);

    for (auto& p : head.parameters()) std::fill(p.var.mutable_value().data.begin(), p.var.mutable_value().data.end(), 0.0);
    for (double v : classify(x, head)) EXPECT_EQ(v, 0.0);

    // Identity-like weights copy a coordinate.
    auto w = head.parameters()[0].var;
    w.mutable_value().data[1 * 3 + 2] = 1.0; // input 1 -> class 2
    EXPECT_EQ(classify(x, head)[2], 2.0);
}

TEST(Heads, DimMismatch)
{
    ClassifierHead head(HeadKind::SupervisedFusion, 5, 3, 1);
    EmbeddingBundle x{3, 1, {"a", "b"}, {{1, 2, 3}, {1, 2, 3}}};
    try {
        classify(x, head);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
    }
}

TEST(Heads, ResetOutputKeepsFusionLayer)
{
    ClassifierHead head(HeadKind::SupervisedFusion, 4, 2, 1);
    auto before = head.parameters();
    auto fusion = before[0].var.value();
    auto out = before[2].var.value();
    head.reset_output(77);
    auto after = head.parameters();
    EXPECT_EQ(after[0].var.value(), fusion);
    EXPECT_NE(after[2].var.value(), out);
}

TEST(Swin, WindowsPartitionEveryTokenExactlyOnce)
{
    for (bool shifted : {false, true})
        for (auto [gh, gw, ws] : {std::tuple{10, 10, 5}, {5, 5, 5}, {4, 8, 2}, {6, 6, 3}}) {
            auto windows = swin_windows(gh, gw, ws, shifted);
            std::vector<int> hits(static_cast<std::size_t>(gh * gw), 0);
            for (const auto& w : windows) {
                EXPECT_EQ(w.size(), static_cast<std::size_t>(ws * ws));
                for (auto t : w) ++hits.at(t);
            }
            for (int h : hits) EXPECT_EQ(h, 1);
        }
}

TEST(Swin, ShiftedWindowsStraddleUnshiftedOnes)
{
    auto plain = swin_windows(10, 10, 5, false);
    auto shifted = swin_windows(10, 10, 5, true);
    EXPECT_NE(plain, shifted);
    // Full-grid windows never shift.
    EXPECT_EQ(swin_windows(5, 5, 5, true), swin_windows(5, 5, 5, false));
}


TEST(Checkpoint, RoundTripIsBitExact)
{
    const auto dir = std::filesystem::temp_directory_path() / "vibefm_ckpt_test";
    std::filesystem::create_directories(dir);
    for (auto kind : {EncoderKind::DeepSense, EncoderKind::Swin}) {
        EncoderConfig cfg = small_config(kind);
        MultimodalModel model(cfg, small_specs(), HeadKind::SupervisedFusion, 3);
        // Values that do not survive a decimal round trip.
        model.parameters()[0].var.mutable_value().data[0] = 0.1 + 0.2;
        CheckpointMeta meta{Stage::Supervised, 42, "", {{"note", "x"}}};
        save_checkpoint(dir / "m.ckpt", model, meta);
        auto loaded = load_checkpoint(dir / "m.ckpt");
        EXPECT_EQ(loaded.meta.stage, Stage::Supervised);
        EXPECT_EQ(loaded.meta.seed, 42u);
        EXPECT_EQ(loaded.meta.extra["note"], "x");
        EXPECT_EQ(loaded.model.head().kind(), HeadKind::SupervisedFusion);
        auto a = model.parameters();
        auto b = loaded.model.parameters();
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].name, b[i].name);
            EXPECT_EQ(0, std::memcmp(a[i].var.data().data(), b[i].var.data().data(), a[i].var.size() * sizeof(double)));
        }
    }
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RejectsGarbage)
{
    const auto path = std::filesystem::temp_directory_path() / "vibefm_not_a_ckpt";
    {
        std::ofstream(path) << "hello";
    }
    try {
        load_checkpoint(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BadCheckpoint);
    }
    std::filesystem::remove(path);
}
