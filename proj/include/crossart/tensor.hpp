#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace crossart {

/// Extents of an N x C x H x W tensor.
struct Dims {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }

    bool operator==(const Dims&) const = default;
    std::string str() const;
};

/// Dense sample x channel x height x width array, row-major (w fastest).
/// Holds both pixel images and diffusion latents.
class ImageTensor {
public:
    ImageTensor() = default;
    explicit ImageTensor(Dims dims, double fill = 0.0);
    ImageTensor(Dims dims, std::vector<double> values);

    const Dims& dims() const noexcept { return dims_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    std::span<double> plane(int n, int c);
    std::span<const double> plane(int n, int c) const;

    double& at(int n, int c, int h, int w) { return values_[index(n, c, h, w)]; }
    double at(int n, int c, int h, int w) const { return values_[index(n, c, h, w)]; }

    /// Copy of sample n as a 1 x C x H x W tensor.
    ImageTensor sample(int n) const;

    bool all_finite() const noexcept;
    double squared_norm() const noexcept;

    ImageTensor& operator+=(const ImageTensor& other);
    ImageTensor& operator-=(const ImageTensor& other);
    ImageTensor& operator*=(double scale) noexcept;

    bool operator==(const ImageTensor&) const = default;

private:
    std::size_t index(int n, int c, int h, int w) const noexcept {
        return ((static_cast<std::size_t>(n) * dims_.c + c) * dims_.h + h) * dims_.w + w;
    }

    Dims dims_{};
    std::vector<double> values_;
};

ImageTensor operator+(ImageTensor a, const ImageTensor& b);
ImageTensor operator-(ImageTensor a, const ImageTensor& b);
ImageTensor operator*(double s, ImageTensor a);

/// Mean squared difference per element.
double mean_squared_error(const ImageTensor& a, const ImageTensor& b);
double max_abs_difference(const ImageTensor& a, const ImageTensor& b);

/// Maps [0, 1] pixel data to the model range [-1, 1].
ImageTensor to_model_range(const ImageTensor& unit);

void require_same_dims(const ImageTensor& a, const ImageTensor& b, const char* op);

}  // namespace crossart
