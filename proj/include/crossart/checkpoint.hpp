#pragma once

#include <cstdint>
#include <filesystem>

#include "crossart/denoiser.hpp"
#include "crossart/tensor.hpp"

namespace crossart {

inline constexpr std::uint32_t kCheckpointLayoutVersion = 1;
inline constexpr std::uint32_t kTensorDumpVersion = 1;

/// Checkpoint file, all integers and floats little-endian:
///
///   8 bytes  magic "XARTCKPT"
///   u32      layout version (kCheckpointLayoutVersion)
///   u32 x 7  in_channels, base_channels, depth, heads, time_embed_dim, groups, text_width
///   u32      number of attention levels L, then L x u32 levels
///   u64      text_seed
///   u64      initialization seed
///   u64      parameter count P
///   f64 x P  parameters in parameter_table() order (column-major blocks)
void save_checkpoint(const DenoiserState& state, const std::filesystem::path& path);

/// Throws VersionError on an unknown magic/version or a parameter count that
/// disagrees with the echoed configuration; IoError on unreadable files.
DenoiserState load_checkpoint(const std::filesystem::path& path);

/// Tensor dump, little-endian:
///
///   8 bytes  magic "XARTTNSR"
///   u32      version (kTensorDumpVersion)
///   u32 x 4  N, C, H, W
///   i32      trajectory index (or -1)
///   f64 x N*C*H*W  values in N, C, H, W order
void save_tensor(const ImageTensor& t, const std::filesystem::path& path, int index = -1);
ImageTensor load_tensor(const std::filesystem::path& path, int* index = nullptr);

}  // namespace crossart
