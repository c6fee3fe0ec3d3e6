#pragma once

#include <filesystem>
#include <vector>

#include "crossart/tensor.hpp"

namespace crossart {

/// Reads a PNG as RGB, maps 8-bit values v to v / 127.5 - 1 and resizes to
/// resolution x resolution with nearest-neighbour sampling
/// (source index = floor(dest * source_size / resolution)).
ImageTensor load_image(const std::filesystem::path& path, int resolution);

/// Clamps to [-1, 1] and writes round-half-up((v + 1) * 127.5) as 8-bit RGB.
void save_image(const ImageTensor& x, const std::filesystem::path& path);

/// Writes [0, 1] data (dataset images) as 8-bit RGB via round-half-up(v * 255).
void save_unit_image(const ImageTensor& x, const std::filesystem::path& path);

/// Tiles 1 x 3 x H x W images row-major with 2-pixel white gutters (also
/// around the border). Cells past the last image stay white.
ImageTensor make_grid(const std::vector<ImageTensor>& images, int columns);
void emit_grid(const std::vector<ImageTensor>& images, int columns,
               const std::filesystem::path& path);

inline constexpr int kGridGutter = 2;

}  // namespace crossart
