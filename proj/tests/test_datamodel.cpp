#include "vibefm/datamodel.hpp"
#include "vibefm/error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace vibefm;

namespace {

Segment default_segment()
{
    Segment s;
    s.modalities["acoustic"] = Signal(1, 16000, 0.25);
    s.modalities["seismic"] = Signal(1, 200, -1.0);
    s.label = 2;
    s.run_id = "c2r0";
    return s;
}

ErrorCode code_of(const Segment& s)
{
    try {
        validate_segment(s, default_modalities());
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "segment accepted";
    return ErrorCode::InvalidArgument;
}

} // namespace

TEST(ModalitySpec, DefaultsAndDerivedSizes)
{
    const auto specs = default_modalities();
    ASSERT_EQ(specs.size(), 2u);
    EXPECT_EQ(specs[0].samples_per_segment(), 16000u);
    EXPECT_EQ(specs[0].bins(), 801u);
    EXPECT_EQ(specs[1].samples_per_segment(), 200u);
    EXPECT_EQ(specs[1].bins(), 11u);
    EXPECT_EQ(&find_spec(specs, "seismic"), &specs[1]);
    EXPECT_THROW(find_spec(specs, "radar"), Error);
    EXPECT_THROW((ModalitySpec{"x", 30, 1, 7, 1.0}.validate()), Error);
}

TEST(ValidateSegment, AcceptsAndRejects)
{
    const Segment ok = default_segment();
    EXPECT_EQ(&validate_segment(ok, default_modalities()), &ok);

    Segment shape = ok;
    shape.modalities["acoustic"] = Signal(1, 15999);
    EXPECT_EQ(code_of(shape), ErrorCode::ShapeMismatch);

    Segment nan = ok;
    nan.modalities["acoustic"].data[123] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_EQ(code_of(nan), ErrorCode::NonFinite);
    Segment inf = ok;
    inf.modalities["seismic"].data[0] = std::numeric_limits<double>::infinity();
    EXPECT_EQ(code_of(inf), ErrorCode::NonFinite);

    Segment unknown = ok;
    unknown.modalities["radar"] = Signal(1, 4);
    EXPECT_EQ(code_of(unknown), ErrorCode::UnknownModality);
}

TEST(TrainConfig, StageDefaults)
{
    const auto sup = TrainConfig::defaults(Stage::Supervised);
    EXPECT_EQ(sup.batch_size, 128);
    EXPECT_EQ(sup.optimizer, OptimizerKind::AdamW);
    EXPECT_EQ(sup.initial_lr, 1e-4);
    EXPECT_EQ(sup.lr_decay, 0.2);
    EXPECT_EQ(sup.epochs, 500);
    const auto pre = TrainConfig::defaults(Stage::Pretrain);
    EXPECT_EQ(pre.batch_size, 256);
    EXPECT_EQ(pre.optimizer, OptimizerKind::AdamW);
    EXPECT_EQ(pre.initial_lr, 1e-4);
    EXPECT_EQ(pre.lr_decay, 0.05);
    EXPECT_EQ(pre.epochs, 6000);
    const auto ft = TrainConfig::defaults(Stage::Finetune);
    EXPECT_EQ(ft.batch_size, 256);
    EXPECT_EQ(ft.optimizer, OptimizerKind::Adam);
    EXPECT_EQ(ft.initial_lr, 1e-3);
    EXPECT_EQ(ft.lr_decay, 0.2);
    EXPECT_EQ(ft.epochs, 200);
    for (const auto& c : {sup, pre, ft}) {
        EXPECT_EQ(c.scheduler, SchedulerKind::Cosine);
        EXPECT_EQ(c.temperature, 0.07);
        EXPECT_EQ(c.loss_weights.shared, 1.0);
        EXPECT_EQ(c.loss_weights.private_, 1.0);
        EXPECT_EQ(c.loss_weights.orth, 1.0);
    }
    EXPECT_EQ(TrainConfig::defaults(Stage::Pretrain, 0.01).epochs, 60);
    EXPECT_EQ(TrainConfig::defaults(Stage::Finetune, 1e-9).epochs, 1);
    auto bad = pre;
    bad.lr_decay = 0.0;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(Enums, NamesRoundTrip)
{
    for (auto t : {DomainTag::ModUnlabeled, DomainTag::Control, DomainTag::Noisy, DomainTag::SynthA, DomainTag::SynthB})
        EXPECT_EQ(parse_domain_tag(to_string(t)), t);
    for (auto s : {Stage::Supervised, Stage::Pretrain, Stage::Finetune, Stage::SupervisedFinetune})
        EXPECT_EQ(parse_stage(to_string(s)), s);
    for (auto f : {Framework::Supervised, Framework::SupervisedFinetune, Framework::Focal})
        EXPECT_EQ(parse_framework(to_string(f)), f);
    EXPECT_THROW(parse_domain_tag("MARS"), Error);
}

TEST(EmbeddingBundle, ValidationAndViews)
{
    EmbeddingBundle b{4, 2, {"a", "b"}, {{1, 2, 3, 4}, {5, 6, 7, 8}}};
    b.validate();
    EXPECT_EQ(b.shared(1)[0], 5.0);
    EXPECT_EQ(b.private_part(0)[1], 4.0);
    EmbeddingBundle bad = b;
    bad.shared_dim = 4;
    EXPECT_THROW(bad.validate(), Error);
    bad = b;
    bad.embeddings[1].pop_back();
    EXPECT_THROW(bad.validate(), Error);
}

TEST(EvalReport, RangesChecked)
{
    EvalReport r;
    r.rows.push_back({});
    r.rows[0].accuracy = 0.5;
    r.validate();
    r.rows[0].macro_f1 = 1.5;
    EXPECT_THROW(r.validate(), Error);
}

TEST(DatasetIo, Float32RoundTrip)
{
    const auto root = std::filesystem::temp_directory_path() / "vibefm_dataset_io";
    std::filesystem::remove_all(root);
    std::vector<Segment> segs;
    for (int i = 0; i < 3; ++i) {
        Segment s = default_segment();
        s.run_id = i < 2 ? "runA" : "runB";
        s.start_time_s = 1.6 * i;
        s.label = i == 1 ? std::nullopt : std::optional<int>(i);
        s.domain = DomainTag::SynthB;
        for (std::size_t k = 0; k < s.modalities["acoustic"].data.size(); ++k)
            s.modalities["acoustic"].data[k] = std::sin(0.01 * static_cast<double>(k + i));
        segs.push_back(s);
    }
    write_dataset(root, segs, default_modalities());
    EXPECT_TRUE(std::filesystem::exists(root / "runA" / "0.acoustic.f32"));
    EXPECT_EQ(std::filesystem::file_size(root / "runA" / "0.acoustic.f32"), 16000u * 4u);
    const auto back = read_dataset(root, default_modalities());
    ASSERT_EQ(back.size(), segs.size());
    for (std::size_t i = 0; i < segs.size(); ++i) {
        EXPECT_EQ(back[i].run_id, segs[i].run_id);
        EXPECT_EQ(back[i].label, segs[i].label);
        EXPECT_EQ(back[i].domain, DomainTag::SynthB);
        EXPECT_DOUBLE_EQ(back[i].start_time_s, segs[i].start_time_s);
        const auto& a = back[i].at("acoustic").data;
        const auto& b = segs[i].at("acoustic").data;
        for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], static_cast<double>(static_cast<float>(b[k])));
    }
}
