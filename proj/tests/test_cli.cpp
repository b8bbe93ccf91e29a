#include "vibefm/cli.hpp"
#include "vibefm/config_io.hpp"
#include "vibefm/error.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vibefm;
namespace fs = std::filesystem;

namespace {

// Small enough that the whole pipeline runs in seconds.
const char* kTinyToml = R"(seed = 5
epoch_scale = 0.01

[synth]
duration_s = 6.0
runs_per_class = 3
num_classes = 2

[encoder]
embedding_dim = 8
shared_dim = 4

[encoder.deepsense]
conv_channels = [4, 4]
gru_hidden = 8
gru_layers = 1

[encoder.swin]
embed_dim = 4
heads = 1
depths = [1]

[pretrain]
epochs = 2
batch_size = 16

[train]
epochs = 3
batch_size = 16

[finetune]
epochs = 3

[supervised_finetune]
epochs = 2

[grid]
encoders = ["DEEPSENSE"]
ratios = [1.0, 0.5]
seeds = [0]
convergence_epochs = 3
)";

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = run_command(args, out, err);
    return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override
    {
        dir = fs::temp_directory_path() / ("vibefm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        config = dir / "exp.toml";
        std::ofstream(config) << "output_dir = \"" << (dir / "out").string() << "\"\n" << kTinyToml;
        unsetenv("VIBEFM_OUT");
    }
    void TearDown() override { unsetenv("VIBEFM_OUT"); }

    nlohmann::json manifest() const
    {
        std::ifstream in(dir / "out" / "manifest.json");
        return nlohmann::json::parse(in);
    }

    fs::path dir, config;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST(ExperimentConfig, DefaultsPerStage)
{
    const auto c = experiment_from_json(nlohmann::json::object());
    EXPECT_EQ(c.train.batch_size, 128);
    EXPECT_EQ(c.train.epochs, 500);
    EXPECT_EQ(c.pretrain.batch_size, 256);
    EXPECT_EQ(c.pretrain.lr_decay, 0.05);
    EXPECT_EQ(c.pretrain.epochs, 6000);
    EXPECT_EQ(c.finetune.optimizer, OptimizerKind::Adam);
    EXPECT_EQ(c.finetune.initial_lr, 1e-3);
    EXPECT_EQ(c.finetune.epochs, 200);
    EXPECT_NE(c.train.seed, c.pretrain.seed);

    const auto scaled = experiment_from_json({{"epoch_scale", 0.1}, {"train", {{"epochs", 7}}}});
    EXPECT_EQ(scaled.pretrain.epochs, 600);
    EXPECT_EQ(scaled.train.epochs, 7);

    const auto aug = experiment_from_json(
        {{"augment", {{"op_probability", 0.9}}}, {"finetune", {{"augment", {{"mixup_alpha", 0.4}}}}}});
    EXPECT_EQ(aug.pretrain.augment.op_probability, 0.9);
    EXPECT_EQ(aug.finetune.augment.op_probability, 0.9);
    EXPECT_EQ(aug.finetune.augment.mixup_alpha, 0.4);
    EXPECT_EQ(aug.train.augment.mixup_alpha, 0.2);
}

TEST(ExperimentConfig, CanonicalJsonRoundTrips)
{
    const auto c = experiment_from_json(parse_toml(kTinyToml));
    const auto j = experiment_to_json(c);
    EXPECT_EQ(experiment_to_json(experiment_from_json(j)), j);
    EXPECT_EQ(experiment_hash(experiment_from_json(j)), experiment_hash(c));
    auto moved = c;
    moved.output_dir = "elsewhere";
    EXPECT_EQ(experiment_hash(moved), experiment_hash(c));
    moved.train.seed += 1;
    EXPECT_NE(experiment_hash(moved), experiment_hash(c));
}

TEST(ExperimentConfig, UnknownKeysAndBadValuesRejected)
{
    auto expect_invalid = [](const nlohmann::json& j) {
        try {
            experiment_from_json(j);
            ADD_FAILURE() << j.dump();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid) << e.what();
        }
    };
    expect_invalid({{"bogus", 1}});
    expect_invalid({{"augment", {{"warp_sigma", -1.0}}}});
    expect_invalid({{"augment", {{"sigma", 1.0}}}});
    expect_invalid({{"train", {{"lr", 0.1}}}});
    expect_invalid({{"encoder", {{"deepsense", {{"gru_size", 3}}}}}});
    expect_invalid({{"synth", {{"noise", {{"pink", 1.0}}}}}});
    expect_invalid({{"train", {{"stage", "PRETRAIN"}}}});
    expect_invalid({{"train", {{"batch_size", "big"}}}});
    expect_invalid({{"train", 3}});
    expect_invalid({{"label_ratio", 1.5}});
    expect_invalid({{"grid", {{"frameworks", {"MAGIC"}}}}});
}

TEST(ExperimentConfig, OverridesParseTomlValues)
{
    nlohmann::json j = nlohmann::json::object();
    apply_override(j, "train.seed=7");
    apply_override(j, "grid.ratios=[0.5, 0.1]");
    apply_override(j, "encoder.kind=SWIN");
    apply_override(j, "output_dir=\"a b\"");
    EXPECT_EQ(j["train"]["seed"], 7);
    EXPECT_EQ(j["grid"]["ratios"], nlohmann::json({0.5, 0.1}));
    EXPECT_EQ(j["encoder"]["kind"], "SWIN");
    EXPECT_EQ(j["output_dir"], "a b");
    const auto c = experiment_from_json(j);
    EXPECT_EQ(c.train.seed, 7u);
    EXPECT_EQ(c.encoder.kind, EncoderKind::Swin);
    EXPECT_THROW(apply_override(j, "noequals"), Error);
    EXPECT_THROW(apply_override(j, "=3"), Error);
    EXPECT_THROW(apply_override(j, "train.seed.x=1"), Error);
}

TEST_F(Cli, ArgumentErrorsExitTwoWithUsage)
{
    auto r = run({"grid"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("--config"), std::string::npos);
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"fly", "--config", config.string()}).code, 2);
    EXPECT_EQ(run({"grid", "--config", (dir / "missing.toml").string()}).code, 2);
    EXPECT_EQ(run({"grid", "--config", config.string(), "--jobs", "0"}).code, 2);
    EXPECT_EQ(run({"grid", "--config", config.string(), "--set", "novalue"}).code, 2);
    r = run({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("pretrain"), std::string::npos);
}

TEST_F(Cli, ConfigErrorsExitThree)
{
    EXPECT_EQ(run({"synth", "--config", config.string(), "--set", "train.sed=7"}).code, 3);
    std::ofstream(dir / "bad.toml") << "seed = = 1\n";
    EXPECT_EQ(run({"synth", "--config", (dir / "bad.toml").string()}).code, 3);
    std::ofstream(dir / "bad.json") << "{\"extra\": true}";
    EXPECT_EQ(run({"synth", "--config", (dir / "bad.json").string()}).code, 3);
}

TEST_F(Cli, RuntimeFailureExitsFour)
{
    const auto r = run({"evaluate", "--config", config.string()});
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.err.find("checkpoint"), std::string::npos);
}

TEST_F(Cli, StagePipelineWritesArtifactsAndManifest)
{
    const auto data = (dir / "out" / "data").string();
    ASSERT_EQ(run({"synth", "--config", config.string()}).code, 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "data" / "SYNTH_A" / "c0r0" / "index.json"));
    EXPECT_TRUE(fs::exists(dir / "out" / "data" / "synth.toml"));

    const std::vector<std::string> common{"--config", config.string(), "--set", "data_root=\"" + data + "\""};
    auto with = [&](std::string cmd, std::vector<std::string> extra = {}) {
        std::vector<std::string> a{cmd};
        a.insert(a.end(), common.begin(), common.end());
        a.insert(a.end(), extra.begin(), extra.end());
        return run(a);
    };
    auto r = with("pretrain", {"--set", "train.seed=7"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "out" / "pretrain.ckpt"));
    ASSERT_EQ(with("finetune", {"--set", "label_ratio=0.5"}).code, 0);
    r = with("evaluate");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.rfind("test_domain,accuracy,macro_f1,segments\nSYNTH_A,", 0), 0u) << r.out;
    ASSERT_EQ(with("train").code, 0);
    ASSERT_EQ(with("finetune", {"--set", "checkpoint=\"" + (dir / "out" / "train.ckpt").string() + "\""}).code, 0);

    const auto m = manifest();
    for (const char* cmd : {"synth", "pretrain", "train", "finetune", "evaluate"}) ASSERT_TRUE(m["commands"].contains(cmd)) << cmd;
    const auto& pre = m["commands"]["pretrain"];
    EXPECT_EQ(pre["config"]["train"]["seed"], 7);
    EXPECT_EQ(pre["seed"], 5);
    EXPECT_EQ(pre["files"], nlohmann::json({"pretrain.ckpt", "pretrain_metrics.csv"}));
    EXPECT_EQ(pre["config_hash"].get<std::string>().size(), 16u);
    EXPECT_TRUE(pre["versions"].contains("eigen"));
    EXPECT_TRUE(m["commands"]["synth"]["separability_probe"].contains("SYNTH_B"));

    // The recorded config reproduces the run's hash.
    std::ofstream(dir / "again.json") << pre["config"].dump();
    const auto again = experiment_from_json(load_config_file(dir / "again.json"));
    EXPECT_EQ(experiment_hash(again), pre["config_hash"]);
}

TEST_F(Cli, GridIsByteReproducibleAndReportRerenders)
{
    auto r = run({"grid", "--config", config.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string first = slurp(dir / "out" / "grid.csv");
    EXPECT_EQ(first.rfind("encoder,framework,label_ratio", 0), 0u);
    EXPECT_TRUE(fs::exists(dir / "out" / "grid.md"));
    EXPECT_TRUE(fs::exists(dir / "out" / "convergence" / "DeepSense_FOCAL_r100_s0.csv"));
    const auto hash = manifest()["commands"]["grid"]["config_hash"];

    setenv("VIBEFM_OUT", (dir / "second").string().c_str(), 1);
    r = run({"grid", "--config", config.string(), "--jobs", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream in(dir / "second" / "manifest.json");
    EXPECT_EQ(nlohmann::json::parse(in)["commands"]["grid"]["config_hash"], hash);
    EXPECT_EQ(slurp(dir / "second" / "grid.csv"), first);
    unsetenv("VIBEFM_OUT");

    fs::remove(dir / "out" / "grid.md");
    r = run({"report", "--config", config.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "out" / "grid.md"));
    EXPECT_EQ(slurp(dir / "out" / "grid.csv"), first);
}
