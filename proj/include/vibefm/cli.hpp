#pragma once

#include "vibefm/datamodel.hpp"
#include "vibefm/encoders.hpp"
#include "vibefm/evaluation.hpp"
#include "vibefm/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace vibefm {

/// Everything one CLI invocation needs, fully resolved (no implicit seeds).
struct ExperimentConfig {
    std::uint64_t seed = 0;
    double epoch_scale = 1.0; // multiplies the default epoch counts of stages left at defaults
    std::string output_dir = "vibefm_out";
    std::string data_root;    // empty: generate datasets from `synth`
    double label_ratio = 1.0; // train / finetune subcommands
    std::string checkpoint;   // input model of finetune / evaluate; empty picks the usual file in output_dir

    SynthSpec synth; // also names the modalities and class count of on-disk data
    EncoderConfig encoder;
    AugmentParams augment; // copied into every stage; stage tables may override it
    TrainConfig pretrain = TrainConfig::defaults(Stage::Pretrain);
    TrainConfig train = TrainConfig::defaults(Stage::Supervised);
    TrainConfig finetune = TrainConfig::defaults(Stage::Finetune);
    TrainConfig supervised_finetune = TrainConfig::defaults(Stage::SupervisedFinetune);
    SplitSpec split;
    GridSpec grid;
};

/// Canonical JSON, accepted back by experiment_from_json unchanged.
nlohmann::json experiment_to_json(const ExperimentConfig& config);

/// Fills unspecified keys with defaults (stage seeds derived from `seed`,
/// stage epochs scaled by `epoch_scale`) and validates. Unknown keys and bad
/// values raise ConfigInvalid.
ExperimentConfig experiment_from_json(const nlohmann::json& user);

/// Sets a dotted key ("train.seed") to a TOML-syntax value ("7", "[0.1, 1.0]",
/// "\"SWIN\""); text that does not parse as TOML is stored as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Hex FNV-1a of the canonical JSON.
std::string experiment_hash(const ExperimentConfig& config);

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int bad_arguments = 2;
inline constexpr int config_invalid = 3;
inline constexpr int runtime_failure = 4;
} // namespace exit_code

/// Entry point of the `vibefm` tool; args excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace vibefm
