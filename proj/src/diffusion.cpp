#include "crossart/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "crossart/errors.hpp"
#include "crossart/rng.hpp"

namespace crossart {

std::string to_string(ScheduleKind kind) {
    return kind == ScheduleKind::linear ? "linear" : "cosine";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "linear") return ScheduleKind::linear;
    if (name == "cosine") return ScheduleKind::cosine;
    throw ConfigError("unknown schedule kind '" + name + "'");
}

bool NoiseSchedule::deterministic() const {
    return std::all_of(sigma.begin(), sigma.end(), [](double s) { return s == 0.0; });
}

void GuidanceConfig::validate() const {
    if (!(condition_scale >= 0.0)) throw DomainError("condition_scale must be non-negative");
    if (!(semantic_scale >= 0.0 && semantic_scale <= 1.0)) {
        throw DomainError("semantic_scale must lie in [0, 1]");
    }
    if (!(text_scale >= 0.0)) throw DomainError("text_scale must be non-negative");
}

NoiseSchedule make_schedule(int steps, ScheduleKind kind) {
    if (steps < 1) throw DomainError("schedule needs at least one step");
    NoiseSchedule s;
    s.kind = kind;
    s.steps = steps;
    s.alpha.resize(steps);
    s.alpha_bar.resize(steps);
    s.sigma.assign(steps, 0.0);

    std::vector<double> beta(steps);
    if (kind == ScheduleKind::linear) {
        constexpr double lo = 1e-4;
        constexpr double hi = 0.02;
        for (int t = 0; t < steps; ++t) {
            beta[t] = steps == 1 ? lo : lo + (hi - lo) * t / static_cast<double>(steps - 1);
        }
    } else {
        constexpr double offset = 0.008;
        auto f = [&](double u) {
            const double c = std::cos((u / steps + offset) / (1.0 + offset) * std::numbers::pi / 2);
            return c * c;
        };
        for (int t = 0; t < steps; ++t) {
            beta[t] = std::min(1.0 - f(t + 1) / f(t), 0.999);
        }
    }

    double acc = 1.0;
    for (int t = 0; t < steps; ++t) {
        s.alpha[t] = 1.0 - beta[t];
        acc *= s.alpha[t];
        s.alpha_bar[t] = acc;
    }
    return s;
}

ImageTensor forward_noise(const ImageTensor& x0, int t, const ImageTensor& eps,
                          const NoiseSchedule& sched) {
    require_same_dims(x0, eps, "forward_noise");
    if (t < 0 || t >= sched.steps) throw DomainError("forward_noise: step outside schedule");
    const double a = sched.alpha_bar[t];
    const double ca = std::sqrt(a);
    const double cn = std::sqrt(1.0 - a);
    ImageTensor out = x0;
    auto o = out.values();
    auto e = eps.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = ca * o[i] + cn * e[i];
    return out;
}

ImageTensor predict_x0(const LatentState& z, const ImageTensor& eps_pred,
                       const NoiseSchedule& sched) {
    require_same_dims(z.z, eps_pred, "predict_x0");
    const double a = sched.level(z.t);
    const double cn = std::sqrt(1.0 - a);
    const double ca = std::sqrt(a);
    ImageTensor x0 = z.z;
    auto o = x0.values();
    auto e = eps_pred.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = (o[i] - cn * e[i]) / ca;
    return x0;
}

LatentState ddim_step(const LatentState& z, const ImageTensor& eps_pred,
                      const NoiseSchedule& sched, const std::optional<ImageTensor>& noise) {
    if (z.t <= 0) throw StepUnderflowError("ddim_step called at t = 0");
    if (z.t > sched.steps) throw DomainError("ddim_step: index beyond schedule");
    require_same_dims(z.z, eps_pred, "ddim_step");

    const double sigma = sched.sigma[static_cast<std::size_t>(z.t - 1)];
    if (sigma > 0.0 && !noise) throw MissingNoiseError("stochastic step requires a noise tensor");
    if (noise) require_same_dims(z.z, *noise, "ddim_step noise");

    const double a_prev = sched.level(z.t - 1);
    const double dir2 = 1.0 - a_prev - sigma * sigma;
    if (dir2 < 0.0) throw DomainError("sigma too large for the schedule at this step");

    const ImageTensor x0 = predict_x0(z, eps_pred, sched);
    const double cx = std::sqrt(a_prev);
    const double ce = std::sqrt(dir2);
    LatentState out{x0, z.t - 1, z.seed};
    auto o = out.z.values();
    auto e = eps_pred.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = cx * o[i] + ce * e[i];
    if (sigma > 0.0) {
        auto nz = noise->values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += sigma * nz[i];
    }
    return out;
}

namespace {

// Reversed deterministic update from index k - 1 to k with a fixed eps.
ImageTensor invert_update(const ImageTensor& prev, int k, const ImageTensor& eps,
                          const NoiseSchedule& sched) {
    const double a_prev = sched.level(k - 1);
    const double a = sched.level(k);
    const double c_prev = std::sqrt(1.0 - a_prev);
    const double ratio = std::sqrt(a / a_prev);
    const double c = std::sqrt(1.0 - a);
    ImageTensor out = prev;
    auto o = out.values();
    auto e = eps.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = ratio * (o[i] - c_prev * e[i]) + c * e[i];
    return out;
}

}  // namespace

std::vector<LatentState> ddim_invert(const ImageTensor& x0, const EpsFn& eps_fn,
                                     const ConditioningBundle& cond, const NoiseSchedule& sched,
                                     int fixed_point_iters) {
    if (!sched.deterministic()) throw ConfigError("DDIM inversion requires sigma == 0");
    if (fixed_point_iters < 0) throw DomainError("fixed_point_iters must be non-negative");

    std::vector<LatentState> trajectory;
    trajectory.reserve(static_cast<std::size_t>(sched.steps) + 1);
    trajectory.push_back(LatentState{x0, 0, 0});
    for (int k = 1; k <= sched.steps; ++k) {
        const ImageTensor& prev = trajectory.back().z;
        ImageTensor eps = eps_fn(LatentState{prev, k, 0}, cond);
        ImageTensor next = invert_update(prev, k, eps, sched);
        for (int i = 0; i < fixed_point_iters; ++i) {
            eps = eps_fn(LatentState{next, k, 0}, cond);
            next = invert_update(prev, k, eps, sched);
        }
        trajectory.push_back(LatentState{std::move(next), k, 0});
    }
    return trajectory;
}

LatentState inversion_callback(const LatentState& z, int t, const ImageTensor& z_T_precomputed,
                               int T) {
    if (t == T) return LatentState{z_T_precomputed, z.t, z.seed};
    return z;
}

ImageTensor cfg_combine(const ImageTensor& eps_uncond, const ImageTensor& eps_cond,
                        double condition_scale) {
    require_same_dims(eps_uncond, eps_cond, "cfg_combine");
    ImageTensor out = eps_uncond;
    auto o = out.values();
    auto c = eps_cond.values();
    // Weighted form, exact at both endpoints 0 and 1.
    const double w = 1.0 - condition_scale;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = w * o[i] + condition_scale * c[i];
    return out;
}

std::vector<LatentState> ddim_sample(const LatentState& start, const EpsFn& eps_fn,
                                     const ConditioningBundle& cond, const NoiseSchedule& sched,
                                     const StepCallback& callback, std::uint64_t rng_seed) {
    if (start.t != sched.steps) throw DomainError("sampling must start at t = T");
    std::vector<LatentState> trajectory(static_cast<std::size_t>(sched.steps) + 1);
    Rng rng(rng_seed);
    LatentState state = start;
    for (int t = sched.steps; t >= 1; --t) {
        if (callback) state = callback(state, t);
        trajectory[static_cast<std::size_t>(t)] = state;
        const ImageTensor eps = eps_fn(state, cond);
        std::optional<ImageTensor> noise;
        if (sched.sigma[static_cast<std::size_t>(t - 1)] > 0.0) {
            noise = gaussian_tensor(state.z.dims(), rng);
        }
        state = ddim_step(state, eps, sched, noise);
    }
    if (callback) state = callback(state, 0);
    trajectory[0] = state;
    return trajectory;
}

}  // namespace crossart
