#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "crossart/attention.hpp"
#include "crossart/tensor.hpp"

namespace crossart {

inline constexpr int kVocabularySize = 4096;
inline constexpr int kMaxTokens = 16;
inline constexpr int kTextWidth = 64;
inline constexpr int kImageWidth = 64;
inline constexpr int kDefaultPatch = 8;

using TokenIds = std::vector<int>;

/// Lowercases ASCII, splits on whitespace and ASCII punctuation, hashes each
/// word with 64-bit FNV-1a to an id in [1, 4096), pads with 0 to 16 ids and
/// truncates beyond. Id 0 is reserved for padding.
TokenIds tokenize(std::string_view prompt);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

struct TextEmbedding {
    TokenIds tokens;
    Matrix embedding;  // [n, d_text]

    Eigen::Index length() const { return embedding.rows(); }
    Eigen::Index width() const { return embedding.cols(); }
};

/// Seeded lookup table (unit-variance entries, row-major draw order) plus a
/// sinusoidal position vector per row.
class TextEncoder {
public:
    explicit TextEncoder(std::uint64_t seed, int width = kTextWidth);

    TextEmbedding encode(const TokenIds& tokens) const;
    TextEmbedding encode(std::string_view prompt) const { return encode(tokenize(prompt)); }

    std::uint64_t seed() const noexcept { return seed_; }
    int width() const noexcept { return width_; }

private:
    std::uint64_t seed_;
    int width_;
    Matrix table_;  // [vocabulary, width]
};

TextEmbedding encode_text(const TokenIds& tokens, std::uint64_t seed);

/// Sinusoidal position vector: sin(i / 10000^(2j/d)) at 2j, cos at 2j+1.
Vector position_vector(int position, int width);

struct ImageEmbedding {
    Matrix embedding;  // [m, d], m = (H/p)(W/p)
    Dims source;

    Eigen::Index tokens() const { return embedding.rows(); }
};

/// Non-overlapping patch flattening (channel, row, column order within a patch;
/// patches in raster order) followed by a seeded linear projection without bias.
class ImageEncoder {
public:
    ImageEncoder(std::uint64_t seed, int channels, int patch = kDefaultPatch,
                 int width = kImageWidth);

    ImageEmbedding encode(const ImageTensor& image) const;

    int patch() const noexcept { return patch_; }

private:
    int channels_;
    int patch_;
    Matrix projection_;  // [channels * patch * patch, width]
};

ImageEmbedding encode_image(const ImageTensor& image, int patch, std::uint64_t seed);

}  // namespace crossart
