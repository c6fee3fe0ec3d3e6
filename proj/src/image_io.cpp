#include "crossart/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

#include "crossart/errors.hpp"

namespace crossart {

namespace {

void write_rgb(const std::vector<std::uint8_t>& rgb, int width, int height,
               const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot write PNG " + path.string() + ": " + msg);
    }
}

std::vector<std::uint8_t> quantize(const ImageTensor& x, double offset, double gain) {
    const Dims& d = x.dims();
    if (d.n != 1 || d.c != 3) throw ShapeError("image output expects 1x3xHxW, got " + d.str());
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(d.h) * d.w * 3);
    for (int y = 0; y < d.h; ++y) {
        for (int xx = 0; xx < d.w; ++xx) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(x.at(0, c, y, xx), -offset, 1.0);
                const double q = std::floor((v + offset) * gain + 0.5);
                rgb[(static_cast<std::size_t>(y) * d.w + xx) * 3 + c] =
                    static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
            }
        }
    }
    return rgb;
}

}  // namespace

ImageTensor load_image(const std::filesystem::path& path, int resolution) {
    if (resolution < 1) throw DomainError("resolution must be positive");
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot decode PNG " + path.string() + ": " + msg);
    }
    const int sw = static_cast<int>(image.width);
    const int sh = static_cast<int>(image.height);
    ImageTensor out(Dims{1, 3, resolution, resolution});
    for (int y = 0; y < resolution; ++y) {
        const int sy = static_cast<int>(static_cast<long long>(y) * sh / resolution);
        for (int x = 0; x < resolution; ++x) {
            const int sx = static_cast<int>(static_cast<long long>(x) * sw / resolution);
            for (int c = 0; c < 3; ++c) {
                const double v = rgb[(static_cast<std::size_t>(sy) * sw + sx) * 3 + c];
                out.at(0, c, y, x) = v / 127.5 - 1.0;
            }
        }
    }
    return out;
}

void save_image(const ImageTensor& x, const std::filesystem::path& path) {
    write_rgb(quantize(x, 1.0, 127.5), x.dims().w, x.dims().h, path);
}

void save_unit_image(const ImageTensor& x, const std::filesystem::path& path) {
    write_rgb(quantize(x, 0.0, 255.0), x.dims().w, x.dims().h, path);
}

ImageTensor make_grid(const std::vector<ImageTensor>& images, int columns) {
    if (images.empty()) throw DomainError("grid needs at least one image");
    if (columns < 1) throw DomainError("grid needs at least one column");
    const Dims cell = images.front().dims();
    for (const ImageTensor& img : images) {
        if (img.dims() != cell) throw ShapeError("grid images must share dims");
    }
    const int cols = std::min<int>(columns, static_cast<int>(images.size()));
    const int rows = (static_cast<int>(images.size()) + columns - 1) / columns;
    const int g = kGridGutter;
    Dims d{1, cell.c, rows * cell.h + (rows + 1) * g, cols * cell.w + (cols + 1) * g};
    ImageTensor grid(d, 1.0);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const int r = static_cast<int>(i) / columns;
        const int c = static_cast<int>(i) % columns;
        const int oy = g + r * (cell.h + g);
        const int ox = g + c * (cell.w + g);
        for (int ch = 0; ch < cell.c; ++ch)
            for (int y = 0; y < cell.h; ++y)
                for (int x = 0; x < cell.w; ++x) grid.at(0, ch, oy + y, ox + x) = images[i].at(0, ch, y, x);
    }
    return grid;
}

void emit_grid(const std::vector<ImageTensor>& images, int columns,
               const std::filesystem::path& path) {
    save_image(make_grid(images, columns), path);
}

}  // namespace crossart
