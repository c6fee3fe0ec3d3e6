#include "crossart/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "crossart/errors.hpp"

namespace crossart {

std::string Dims::str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
}

ImageTensor::ImageTensor(Dims dims, double fill) : dims_(dims) {
    if (dims.n <= 0 || dims.c <= 0 || dims.h <= 0 || dims.w <= 0) {
        throw DimensionError("tensor extents must be positive, got " + dims.str());
    }
    values_.assign(dims.count(), fill);
}

ImageTensor::ImageTensor(Dims dims, std::vector<double> values)
    : dims_(dims), values_(std::move(values)) {
    if (dims.n <= 0 || dims.c <= 0 || dims.h <= 0 || dims.w <= 0) {
        throw DimensionError("tensor extents must be positive, got " + dims.str());
    }
    if (values_.size() != dims.count()) {
        throw ShapeError("value count does not match dims " + dims.str());
    }
}

std::span<double> ImageTensor::plane(int n, int c) {
    return std::span<double>(values_).subspan(index(n, c, 0, 0), dims_.plane());
}

std::span<const double> ImageTensor::plane(int n, int c) const {
    return std::span<const double>(values_).subspan(index(n, c, 0, 0), dims_.plane());
}

ImageTensor ImageTensor::sample(int n) const {
    Dims d = dims_;
    d.n = 1;
    const std::size_t per = d.count();
    std::vector<double> v(values_.begin() + static_cast<std::ptrdiff_t>(per * n),
                          values_.begin() + static_cast<std::ptrdiff_t>(per * (n + 1)));
    return ImageTensor(d, std::move(v));
}

bool ImageTensor::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double ImageTensor::squared_norm() const noexcept {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return s;
}

ImageTensor& ImageTensor::operator+=(const ImageTensor& other) {
    require_same_dims(*this, other, "add");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

ImageTensor& ImageTensor::operator-=(const ImageTensor& other) {
    require_same_dims(*this, other, "subtract");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
}

ImageTensor& ImageTensor::operator*=(double scale) noexcept {
    for (double& v : values_) v *= scale;
    return *this;
}

ImageTensor operator+(ImageTensor a, const ImageTensor& b) { return a += b; }
ImageTensor operator-(ImageTensor a, const ImageTensor& b) { return a -= b; }
ImageTensor operator*(double s, ImageTensor a) { return a *= s; }

double mean_squared_error(const ImageTensor& a, const ImageTensor& b) {
    require_same_dims(a, b, "mean_squared_error");
    double s = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    return s / static_cast<double>(av.size());
}

double max_abs_difference(const ImageTensor& a, const ImageTensor& b) {
    require_same_dims(a, b, "max_abs_difference");
    double m = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
    return m;
}

ImageTensor to_model_range(const ImageTensor& unit) {
    ImageTensor out = unit;
    for (double& v : out.values()) v = 2.0 * v - 1.0;
    return out;
}

void require_same_dims(const ImageTensor& a, const ImageTensor& b, const char* op) {
    if (a.dims() != b.dims()) {
        throw ShapeError(std::string(op) + ": dims " + a.dims().str() + " vs " + b.dims().str());
    }
}

}  // namespace crossart
