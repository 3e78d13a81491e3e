#pragma once

#include "uda/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace uda {

// Little-endian tensor file:
//   magic "UDATNSR\0" (8 bytes), u32 version, u32 tensor count,
//   then per tensor: u32 rank, rank x u64 dims, f32 payload (row-major).
inline constexpr char kCheckpointMagic[8] = {'U', 'D', 'A', 'T', 'N', 'S', 'R', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_tensor_file(const std::filesystem::path& path, const std::vector<Matrix<float>>& tensors);
std::vector<Matrix<float>> read_tensor_file(const std::filesystem::path& path);

}  // namespace uda
