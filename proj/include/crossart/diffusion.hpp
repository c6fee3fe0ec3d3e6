#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crossart/encoders.hpp"
#include "crossart/tensor.hpp"

namespace crossart {

enum class ScheduleKind { linear, cosine };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

/// Per-step alpha, cumulative alpha_bar and stochasticity sigma over T steps.
///
/// Trajectory index k runs over [0, T]: z_0 is the clean image and z_k for
/// k >= 1 carries noise level alpha_bar[k - 1]. `level(k)` returns that value
/// (1 at k = 0).
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::linear;
    int steps = 0;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;

    double level(int k) const { return k == 0 ? 1.0 : alpha_bar.at(static_cast<std::size_t>(k - 1)); }
    bool deterministic() const;
};

/// linear: beta evenly spaced in [1e-4, 0.02]; cosine: squared-cosine alpha_bar
/// with offset 0.008 and beta clipped at 0.999.
NoiseSchedule make_schedule(int steps, ScheduleKind kind);

struct LatentState {
    ImageTensor z;
    int t = 0;
    std::uint64_t seed = 0;
};

struct GuidanceConfig {
    double condition_scale = 5.0;
    double semantic_scale = 1.0;
    double text_scale = 1.0;

    void validate() const;
};

inline constexpr int kDefaultSteps = 30;

/// Conditioning handed to a noise predictor.
struct ConditioningBundle {
    std::optional<TextEmbedding> text;
    std::optional<ImageEmbedding> image;
    GuidanceConfig guidance;
};

using EpsFn = std::function<ImageTensor(const LatentState&, const ConditioningBundle&)>;

/// x_t = sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) eps, t in [0, T).
/// The result sits at trajectory index t + 1.
ImageTensor forward_noise(const ImageTensor& x0, int t, const ImageTensor& eps,
                          const NoiseSchedule& sched);

/// Clean-image estimate (z - sqrt(1 - a) eps) / sqrt(a) at trajectory index t.
ImageTensor predict_x0(const LatentState& z, const ImageTensor& eps_pred,
                       const NoiseSchedule& sched);

/// One reverse DDIM update from index t to t - 1:
///   z' = sqrt(a') x0 + sqrt(1 - a' - sigma^2) eps + sigma noise.
LatentState ddim_step(const LatentState& z, const ImageTensor& eps_pred,
                      const NoiseSchedule& sched,
                      const std::optional<ImageTensor>& noise = std::nullopt);

/// Deterministic DDIM inversion, z_0 = x0 ... z_T. Step k first evaluates eps on
/// z_{k-1} labelled with index k, then re-evaluates it on the current estimate
/// of z_k `fixed_point_iters` times.
std::vector<LatentState> ddim_invert(const ImageTensor& x0, const EpsFn& eps_fn,
                                     const ConditioningBundle& cond, const NoiseSchedule& sched,
                                     int fixed_point_iters = 3);

/// Replaces z with the precomputed inversion latent exactly when t == T.
LatentState inversion_callback(const LatentState& z, int t, const ImageTensor& z_T_precomputed,
                               int T);

/// eps_u + scale (eps_c - eps_u).
ImageTensor cfg_combine(const ImageTensor& eps_uncond, const ImageTensor& eps_cond,
                        double condition_scale);

using StepCallback = std::function<LatentState(const LatentState&, int)>;

/// Runs the reverse process from `start` (index T) down to 0 and returns the
/// trajectory indexed by t. The callback, when set, is applied to the state at
/// every index before the noise prediction. Stochastic schedules draw noise
/// from `rng_seed`.
std::vector<LatentState> ddim_sample(const LatentState& start, const EpsFn& eps_fn,
                                     const ConditioningBundle& cond, const NoiseSchedule& sched,
                                     const StepCallback& callback = {},
                                     std::uint64_t rng_seed = 0);

}  // namespace crossart
