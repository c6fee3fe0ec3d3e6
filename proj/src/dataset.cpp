#include "crossart/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "crossart/errors.hpp"
#include "crossart/rng.hpp"

namespace crossart {

namespace {

using Color = std::array<double, 3>;

Color palette_color(StyleFamily family, Rng& rng) {
    if (family == StyleFamily::oil) {
        return {rng.uniform(0.6, 1.0), rng.uniform(0.2, 0.7), rng.uniform(0.0, 0.35)};
    }
    return {rng.uniform(0.0, 0.35), rng.uniform(0.3, 0.8), rng.uniform(0.5, 1.0)};
}

double edge(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

void paint(ImageTensor& img, int y, int x, const Color& c) {
    for (int ch = 0; ch < 3; ++ch) img.at(0, ch, y, x) = c[ch];
}

}  // namespace

std::string to_string(StyleFamily family) { return family == StyleFamily::oil ? "oil" : "ink"; }

std::string family_caption(StyleFamily family) {
    return family == StyleFamily::oil ? "a warm oil painting" : "a cool ink drawing";
}

SyntheticDataset make_synthetic_dataset(int count, int resolution, std::uint64_t seed) {
    if (count < 1) throw DomainError("dataset count must be at least 1");
    if (resolution < 1) throw DomainError("resolution must be positive");
    SyntheticDataset ds;
    Rng rng(seed);
    const double r = resolution;
    for (int i = 0; i < count; ++i) {
        const StyleFamily family = i % 2 == 0 ? StyleFamily::oil : StyleFamily::ink;
        const std::array<Color, 3> palette{palette_color(family, rng), palette_color(family, rng),
                                           palette_color(family, rng)};
        ImageTensor img(Dims{1, 3, resolution, resolution});

        // Background wash: blend of the first two colours along a random direction.
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double dx = std::cos(angle);
        const double dy = std::sin(angle);
        for (int y = 0; y < resolution; ++y) {
            for (int x = 0; x < resolution; ++x) {
                const double u = 0.5 + 0.5 * ((x / r - 0.5) * dx + (y / r - 0.5) * dy) * 1.4142;
                const double s = std::clamp(u, 0.0, 1.0);
                Color c;
                for (int ch = 0; ch < 3; ++ch) c[ch] = (1 - s) * palette[0][ch] + s * palette[1][ch];
                paint(img, y, x, c);
            }
        }

        const int shapes = 1 + static_cast<int>(rng.below(4));
        for (int k = 0; k < shapes; ++k) {
            const Color& c = palette[1 + rng.below(2)];
            const Color fill{c[0] * 0.85 + 0.15 * (k % 2), c[1] * 0.85, c[2] * 0.85};
            const auto kind = rng.below(3);
            if (kind == 0) {  // disk
                const double cx = rng.uniform(0.15, 0.85) * r;
                const double cy = rng.uniform(0.15, 0.85) * r;
                const double rad = rng.uniform(0.1, 0.3) * r;
                for (int y = 0; y < resolution; ++y)
                    for (int x = 0; x < resolution; ++x)
                        if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= rad * rad)
                            paint(img, y, x, fill);
            } else if (kind == 1) {  // stripe band
                const double theta = rng.uniform(0.0, std::numbers::pi);
                const double nx = std::cos(theta);
                const double ny = std::sin(theta);
                const double centre = rng.uniform(-0.3, 0.3) * r;
                const double half = rng.uniform(0.05, 0.15) * r;
                for (int y = 0; y < resolution; ++y)
                    for (int x = 0; x < resolution; ++x) {
                        const double dist = (x + 0.5 - r / 2) * nx + (y + 0.5 - r / 2) * ny - centre;
                        if (std::abs(dist) <= half) paint(img, y, x, fill);
                    }
            } else {  // triangle
                double v[6];
                for (double& p : v) p = rng.uniform(0.05, 0.95) * r;
                for (int y = 0; y < resolution; ++y)
                    for (int x = 0; x < resolution; ++x) {
                        const double px = x + 0.5;
                        const double py = y + 0.5;
                        const double e0 = edge(v[0], v[1], v[2], v[3], px, py);
                        const double e1 = edge(v[2], v[3], v[4], v[5], px, py);
                        const double e2 = edge(v[4], v[5], v[0], v[1], px, py);
                        if ((e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0))
                            paint(img, y, x, fill);
                    }
            }
        }

        const double grain = family == StyleFamily::oil ? 0.05 : (rng.uniform() < 0.5 ? 0.015 : 0.0);
        for (double& v : img.values()) v = std::clamp(v + grain * rng.normal(), 0.0, 1.0);

        ds.images.push_back(std::move(img));
        ds.families.push_back(family);
    }
    return ds;
}

}  // namespace crossart
