// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint: magic "NEUSGCKP", u32 version, the effective config as
// INI text, active hash levels, three parameter groups (sdf, render,
// gaussians) of little-endian float64 tensors, the surface point set, and a
// trailing FNV-1a checksum. See docs/formats.md.

#pragma once

#include <filesystem>
#include <string>

#include "neusg/config.hpp"
#include "neusg/trainer.hpp"

namespace neusg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    AppConfig config;
    TrainState state;
};

std::string serialize_checkpoint(const AppConfig& config, const TrainState& state);
/// Throws LoadError on a bad magic, version, checksum, or shape.
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const AppConfig& config, const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace neusg
