#pragma once

#include "vibefm/encoders.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace vibefm {

struct CheckpointMeta {
    Stage stage = Stage::Pretrain;
    std::uint64_t seed = 0;
    std::string version;     // filled on save
    nlohmann::json extra;    // caller data: train config, normalization stats, loss trace
};

struct LoadedCheckpoint {
    MultimodalModel model;
    CheckpointMeta meta;
};

/// Layout: 8-byte magic "VIBEFMCK", u32 format, u64 header length, JSON
/// header, u64 tensor count, then per tensor: u32 name length, name, u32
/// rank, u64 dims, little-endian f64 values.
void save_checkpoint(const std::filesystem::path& path, const MultimodalModel& model, const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json modality_specs_to_json(std::span<const ModalitySpec> specs);
std::vector<ModalitySpec> modality_specs_from_json(const nlohmann::json& j);

} // namespace vibefm
