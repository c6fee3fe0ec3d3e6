#include "crossart/encoders.hpp"

#include <cctype>
#include <cmath>
#include <string>

#include "crossart/errors.hpp"
#include "crossart/rng.hpp"

namespace crossart {

namespace {

bool is_separator(unsigned char ch) {
    return ch < 0x80 && (std::isspace(ch) || std::ispunct(ch));
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

TokenIds tokenize(std::string_view prompt) {
    TokenIds ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty() && ids.size() < kMaxTokens) {
            ids.push_back(1 + static_cast<int>(fnv1a64(word) % (kVocabularySize - 1)));
        }
        word.clear();
    };
    for (unsigned char ch : prompt) {
        if (is_separator(ch)) {
            flush();
        } else {
            word.push_back(ch < 0x80 ? static_cast<char>(std::tolower(ch)) : static_cast<char>(ch));
        }
    }
    flush();
    ids.resize(kMaxTokens, 0);
    return ids;
}

Vector position_vector(int position, int width) {
    Vector p(width);
    for (int j = 0; j < width; ++j) {
        const int pair = j / 2;
        const double freq = std::pow(10000.0, -2.0 * pair / static_cast<double>(width));
        p(j) = (j % 2 == 0) ? std::sin(position * freq) : std::cos(position * freq);
    }
    return p;
}

TextEncoder::TextEncoder(std::uint64_t seed, int width) : seed_(seed), width_(width) {
    if (width <= 0) throw DomainError("text embedding width must be positive");
    Rng rng(seed);
    table_.resize(kVocabularySize, width);
    for (int r = 0; r < kVocabularySize; ++r)
        for (int c = 0; c < width; ++c) table_(r, c) = rng.normal();
}

TextEmbedding TextEncoder::encode(const TokenIds& tokens) const {
    TextEmbedding e;
    e.tokens = tokens;
    e.embedding.resize(static_cast<Eigen::Index>(tokens.size()), width_);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int id = tokens[i];
        if (id < 0 || id >= kVocabularySize) {
            throw DomainError("token id " + std::to_string(id) + " outside vocabulary");
        }
        e.embedding.row(static_cast<Eigen::Index>(i)) =
            table_.row(id) + position_vector(static_cast<int>(i), width_).transpose();
    }
    return e;
}

TextEmbedding encode_text(const TokenIds& tokens, std::uint64_t seed) {
    return TextEncoder(seed).encode(tokens);
}

ImageEncoder::ImageEncoder(std::uint64_t seed, int channels, int patch, int width)
    : channels_(channels), patch_(patch) {
    if (channels <= 0 || patch <= 0 || width <= 0) {
        throw DomainError("image encoder sizes must be positive");
    }
    const int in = channels * patch * patch;
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    Rng rng(seed);
    projection_.resize(in, width);
    for (int r = 0; r < in; ++r)
        for (int c = 0; c < width; ++c) projection_(r, c) = rng.normal() * scale;
}

ImageEmbedding ImageEncoder::encode(const ImageTensor& image) const {
    const Dims& d = image.dims();
    if (d.n != 1 || d.c != channels_) {
        throw ShapeError("image encoder expects 1x" + std::to_string(channels_) + "xHxW, got " +
                         d.str());
    }
    if (d.h % patch_ != 0 || d.w % patch_ != 0) {
        throw ShapeError("image " + d.str() + " not divisible by patch " + std::to_string(patch_));
    }
    const int gh = d.h / patch_;
    const int gw = d.w / patch_;
    Matrix patches(gh * gw, channels_ * patch_ * patch_);
    for (int py = 0; py < gh; ++py) {
        for (int px = 0; px < gw; ++px) {
            const int row = py * gw + px;
            int col = 0;
            for (int c = 0; c < channels_; ++c)
                for (int y = 0; y < patch_; ++y)
                    for (int x = 0; x < patch_; ++x)
                        patches(row, col++) = image.at(0, c, py * patch_ + y, px * patch_ + x);
        }
    }
    ImageEmbedding e;
    e.embedding = patches * projection_;
    e.source = d;
    return e;
}

ImageEmbedding encode_image(const ImageTensor& image, int patch, std::uint64_t seed) {
    return ImageEncoder(seed, image.dims().c, patch).encode(image);
}

}  // namespace crossart
