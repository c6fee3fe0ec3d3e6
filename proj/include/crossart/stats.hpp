#pragma once

#include <vector>

#include "crossart/tensor.hpp"

namespace crossart {

inline constexpr double kDefaultEpsilon = 1e-5;

/// Per-sample, per-channel mean and standard deviation over the spatial axes.
struct SpatialStats {
    int samples = 0;
    int channels = 0;
    std::vector<double> mean;    // [samples * channels]
    std::vector<double> stddev;  // sqrt(population variance + epsilon)
    double epsilon = kDefaultEpsilon;

    double mean_at(int n, int c) const { return mean[static_cast<std::size_t>(n) * channels + c]; }
    double stddev_at(int n, int c) const {
        return stddev[static_cast<std::size_t>(n) * channels + c];
    }
};

/// Statistics over (h, w) with divisor H*W; epsilon sits inside the square root.
SpatialStats spatial_stats(const ImageTensor& x, double epsilon = kDefaultEpsilon);

/// (x - mean) / stddev per sample and channel.
ImageTensor instance_norm(const ImageTensor& x, double epsilon = kDefaultEpsilon);

/// Renormalizes x so that each (sample, channel) plane takes the mean and
/// standard deviation of the matching plane of `style`. Spatial extents may differ.
ImageTensor art_bn(const ImageTensor& x, const ImageTensor& style,
                   double epsilon = kDefaultEpsilon);

}  // namespace crossart
