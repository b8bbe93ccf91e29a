#include "vibefm/config_io.hpp"
#include "vibefm/error.hpp"
#include "vibefm/preprocess.hpp"
#include "vibefm/rng.hpp"
#include "vibefm/synthgen.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

using namespace vibefm;

namespace {

SynthSpec short_spec()
{
    SynthSpec s;
    s.duration_s = 6.0;
    s.runs_per_class = 3;
    s.seed = 9;
    return s;
}

SynthSpec clean_spec()
{
    SynthSpec s = short_spec();
    s.noise = {0.0, 0.0, 0.0};
    s.private_strength = {{"acoustic", 0.0}, {"seismic", 0.0}};
    s.frequency_jitter = 0.0;
    s.am_depth = 0.0;
    return s;
}

double energy(const Signal& s)
{
    double e = 0.0;
    for (double v : s.data) e += v * v;
    return e;
}

} // namespace

TEST(Synth, CleanSpectralPeaksSitAtFundamentals)
{
    const SynthSpec spec = clean_spec();
    const auto data = generate_dataset(spec, DomainTag::SynthA);
    const auto sigs = spec.signatures();
    for (const auto& seg : data) {
        for (const auto& m : spec.modalities) {
            const Spectrogram sp = interval_stft(seg.at(m.name), m);
            const double resolution = static_cast<double>(m.sample_rate_hz) / static_cast<double>(m.interval_length());
            const auto want = static_cast<std::size_t>(
                std::lround(sigs[static_cast<std::size_t>(*seg.label)].fundamental_hz.at(m.name) / resolution));
            for (std::size_t i = 0; i < sp.intervals; ++i) {
                std::size_t arg = 0;
                double best = -1.0;
                for (std::size_t k = 0; k < sp.bins; ++k) {
                    const double mag = std::hypot(sp.re[sp.index(0, i, k)], sp.im[sp.index(0, i, k)]);
                    if (mag > best) {
                        best = mag;
                        arg = k;
                    }
                }
                ASSERT_EQ(arg, want) << m.name << " class " << *seg.label;
            }
        }
    }
}

TEST(Synth, UnitShiftReproducesDomainA)
{
    SynthSpec spec = short_spec();
    spec.domain_shift = {1.0, 1.0, 1.0};
    const auto a = generate_dataset(spec, DomainTag::SynthA);
    const auto b = generate_dataset(spec, DomainTag::SynthB);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].modalities, b[i].modalities);
        EXPECT_EQ(a[i].run_id, b[i].run_id);
        EXPECT_EQ(b[i].domain, DomainTag::SynthB);
    }
}

TEST(Synth, ClassBalanceAndDeterminism)
{
    const SynthSpec spec = short_spec();
    const auto a = generate_dataset(spec, DomainTag::SynthA);
    const auto again = generate_dataset(spec, DomainTag::SynthA);
    EXPECT_EQ(a, again);
    std::map<int, std::set<std::string>> runs;
    std::map<int, std::size_t> segments;
    for (const auto& s : a) {
        runs[*s.label].insert(s.run_id);
        ++segments[*s.label];
    }
    ASSERT_EQ(runs.size(), 4u);
    const std::size_t per_run = segment_count(spec.duration_s, 2.0, spec.overlap);
    for (const auto& [label, ids] : runs) {
        EXPECT_EQ(ids.size(), 3u);
        EXPECT_EQ(segments[label], 3u * per_run);
    }
    EXPECT_EQ(segment_count(60.0, 2.0, 0.2), 37u);
    SynthSpec other = spec;
    other.seed = 10;
    EXPECT_NE(generate_dataset(other, DomainTag::SynthA)[0].modalities, a[0].modalities);
}

TEST(Synth, NyquistViolation)
{
    SynthSpec spec = short_spec();
    spec.classes = spec.signatures();
    spec.classes[2].fundamental_hz["seismic"] = 48.0;
    try {
        generate_dataset(spec, DomainTag::SynthA);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NyquistViolation);
    }
}

TEST(Synth, ShiftRaisesNoiseEnergy)
{
    const SynthSpec spec = short_spec();
    double ea = 0.0, eb = 0.0;
    for (std::size_t run = 0; run < 6; ++run) {
        const auto a = synthesize_run(spec, DomainTag::SynthA, static_cast<int>(run % 4), run);
        const auto b = synthesize_run(spec, DomainTag::SynthB, static_cast<int>(run % 4), run);
        for (const auto& m : spec.modalities) {
            ea += energy(a.at(m.name).noise);
            eb += energy(b.at(m.name).noise);
            EXPECT_EQ(a.at(m.name).signature, b.at(m.name).signature);
        }
    }
    EXPECT_GT(eb, ea);
}

TEST(Synth, TexturesIgnoreLabels)
{
    const SynthSpec spec = short_spec();
    for (std::size_t run = 0; run < 4; ++run) {
        const auto a = synthesize_run(spec, DomainTag::SynthA, 0, run);
        const auto b = synthesize_run(spec, DomainTag::SynthA, 3, run);
        for (const auto& m : spec.modalities) {
            EXPECT_EQ(a.at(m.name).texture, b.at(m.name).texture);
            EXPECT_NE(a.at(m.name).signature, b.at(m.name).signature);
        }
    }
}

TEST(Probe, CleanIsSeparableShuffledIsChance)
{
    const SynthSpec spec = clean_spec();
    auto data = generate_dataset(spec, DomainTag::SynthA);
    EXPECT_GE(separability_probe(data, spec.modalities), 0.99);
    EXPECT_EQ(separability_probe(data, spec.modalities), separability_probe(data, spec.modalities));

    SynthSpec noisy = short_spec();
    noisy.runs_per_class = 6;
    auto mixed = generate_dataset(noisy, DomainTag::SynthA);
    std::vector<int> labels;
    for (const auto& s : mixed) labels.push_back(*s.label);
    Rng rng(1);
    rng.shuffle(labels.begin(), labels.end());
    for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i].label = labels[i];
    EXPECT_NEAR(separability_probe(mixed, noisy.modalities), 0.25, 0.1);
}

TEST(Synth, TomlRoundTrip)
{
    SynthSpec spec = short_spec();
    spec.classes = spec.signatures();
    spec.private_strength["seismic"] = 0.25;
    const auto path = std::filesystem::temp_directory_path() / "vibefm_synth" / "spec.toml";
    write_synth_spec(path, spec);
    const SynthSpec back = read_synth_spec(path);
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(spec));
}

TEST(Synth, UnknownKeysRejected)
{
    SynthSpec spec;
    try {
        from_json(parse_toml("num_classes = 4\nbogus = 1\n"), spec);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid);
    }
}

TEST(ConfigIo, TomlToJsonAndBack)
{
    const auto j = parse_toml("a = 1\nb = [1.5, 2.0]\n[t]\nname = \"x\"\nflag = true\n");
    EXPECT_EQ(j.at("a"), 1);
    EXPECT_EQ(j.at("b").at(1), 2.0);
    EXPECT_EQ(j.at("t").at("name"), "x");
    EXPECT_EQ(parse_toml(to_toml(j)), j);
    try {
        parse_toml("a = = 1");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid);
    }
}
