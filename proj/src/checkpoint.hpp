#pragma once

// "VCK1" checkpoints: magic "VCKP" | u32 version | u32 tensor count | per tensor:
// u16 name length, UTF-8 name, u8 rank, rank x u32 dims, f32 data. Little-endian.
//
// Tensor naming: "student/<param>", "teacher/<param>", "adam.m/<param>",
// "adam.v/<param>", plus "meta/config" = [in_channels, out_classes, levels,
// base_filters, dropout_rate], "meta/adam" = [lr, beta1, beta2, eps] and
// "meta/counters" = [iteration, total_iterations, adam_step].

#include <cstdint>
#include <filesystem>
#include <vector>

#include "net3d.hpp"

namespace voxseed {

struct Checkpoint {
    NetParams student;
    NetParams teacher;
    OptimizerState optimizer;
    std::int64_t iteration = 0;
    std::int64_t total_iterations = 0;
};

std::vector<std::uint8_t> encode_vck1(const Checkpoint& ck);
Checkpoint decode_vck1(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace voxseed
