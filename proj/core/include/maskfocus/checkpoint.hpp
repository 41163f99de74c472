#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "maskfocus/model.hpp"

namespace maskfocus::model {

// A checkpoint is a directory holding manifest.json (architecture, sizes, seed,
// step, tensor table) and params.bin (little-endian float32, manifest order).
struct CheckpointMeta {
    ModelConfig model;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    std::string tag = "theta";
    std::map<std::string, double> metrics;
};

struct LoadedCheckpoint {
    CheckpointMeta meta;
    ModelParams<float> params;
};

void save_checkpoint(const std::filesystem::path& dir, const ModelParams<float>& params, const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

std::string manifest_json(const ModelParams<float>& params, const CheckpointMeta& meta);

}  // namespace maskfocus::model
