#include "crossart/stats.hpp"

#include <cmath>
#include <string>

#include "crossart/errors.hpp"

namespace crossart {

namespace {

void check_input(const ImageTensor& x, double epsilon) {
    const Dims& d = x.dims();
    if (x.empty() || d.h * d.w < 1) {
        throw DimensionError("spatial statistics need a non-empty spatial extent");
    }
    if (!(epsilon > 0.0)) {
        throw DomainError("epsilon must be positive");
    }
    if (!x.all_finite()) {
        throw NonFiniteError("spatial statistics received non-finite input");
    }
}

}  // namespace

SpatialStats spatial_stats(const ImageTensor& x, double epsilon) {
    check_input(x, epsilon);
    const Dims& d = x.dims();
    SpatialStats s;
    s.samples = d.n;
    s.channels = d.c;
    s.epsilon = epsilon;
    s.mean.resize(static_cast<std::size_t>(d.n) * d.c);
    s.stddev.resize(s.mean.size());
    const double inv = 1.0 / static_cast<double>(d.plane());
    for (int n = 0; n < d.n; ++n) {
        for (int c = 0; c < d.c; ++c) {
            auto p = x.plane(n, c);
            double mu = 0.0;
            for (double v : p) mu += v;
            mu *= inv;
            double var = 0.0;
            for (double v : p) var += (v - mu) * (v - mu);
            var *= inv;
            const std::size_t k = static_cast<std::size_t>(n) * d.c + c;
            s.mean[k] = mu;
            s.stddev[k] = std::sqrt(var + epsilon);
        }
    }
    return s;
}

ImageTensor instance_norm(const ImageTensor& x, double epsilon) {
    const SpatialStats s = spatial_stats(x, epsilon);
    ImageTensor out = x;
    const Dims& d = x.dims();
    for (int n = 0; n < d.n; ++n) {
        for (int c = 0; c < d.c; ++c) {
            const double mu = s.mean_at(n, c);
            const double sd = s.stddev_at(n, c);
            for (double& v : out.plane(n, c)) v = (v - mu) / sd;
        }
    }
    return out;
}

ImageTensor art_bn(const ImageTensor& x, const ImageTensor& style, double epsilon) {
    const Dims& dx = x.dims();
    const Dims& dy = style.dims();
    if (dx.c != dy.c || dx.n != dy.n) {
        throw ShapeError("art_bn: sample/channel mismatch " + dx.str() + " vs " + dy.str());
    }
    const SpatialStats sx = spatial_stats(x, epsilon);
    const SpatialStats sy = spatial_stats(style, epsilon);
    ImageTensor out = x;
    for (int n = 0; n < dx.n; ++n) {
        for (int c = 0; c < dx.c; ++c) {
            const double mx = sx.mean_at(n, c);
            const double gain = sy.stddev_at(n, c) / sx.stddev_at(n, c);
            const double my = sy.mean_at(n, c);
            for (double& v : out.plane(n, c)) v = (v - mx) * gain + my;
        }
    }
    return out;
}

}  // namespace crossart
