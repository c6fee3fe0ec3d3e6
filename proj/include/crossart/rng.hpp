#pragma once

#include <cstdint>
#include <optional>

#include "crossart/tensor.hpp"

namespace crossart {

/// splitmix64 step; used to expand a 64-bit seed into generator state.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// xoshiro256** seeded through splitmix64. Portable: every stream below is
/// defined only in terms of 64-bit integer outputs, so other implementations
/// can reproduce the tables and noise exactly.
///
///   uniform()  = (next() >> 11) * 2^-53                       in [0, 1)
///   normal()   = Box-Muller on (u1, u2): r = sqrt(-2 ln(1 - u1)),
///                returns r cos(2 pi u2), then r sin(2 pi u2) on the next call
///   below(n)   = next() % n
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept;

    std::uint64_t next() noexcept;
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept;
    std::uint64_t below(std::uint64_t n) noexcept { return next() % n; }

private:
    std::uint64_t s_[4];
    std::optional<double> spare_;
};

/// Tensor of standard normal draws, filled in storage order.
ImageTensor gaussian_tensor(Dims dims, Rng& rng);
ImageTensor gaussian_tensor(Dims dims, std::uint64_t seed);

}  // namespace crossart
