#include <doctest.h>

#include <cmath>
#include <numbers>

#include "crossart/diffusion.hpp"
#include "crossart/errors.hpp"
#include "crossart/rng.hpp"
#include "test_helpers.hpp"

using namespace crossart;
using crossart::testing::random_tensor;

namespace {

const Dims kSmall{1, 2, 4, 4};

ImageTensor filled(Dims d, double v) {
    ImageTensor t(d);
    for (double& x : t.values()) x = v;
    return t;
}

EpsFn constant_eps(double v) {
    return [v](const LatentState& z, const ConditioningBundle&) { return filled(z.z.dims(), v); };
}

// A smooth, state-dependent predictor standing in for a denoiser.
EpsFn toy_eps() {
    return [](const LatentState& z, const ConditioningBundle&) {
        ImageTensor e = z.z;
        for (double& v : e.values()) v = 0.3 * std::tanh(v) + 0.01 * z.t;
        return e;
    };
}

}  // namespace

TEST_CASE("schedule examples") {
    const NoiseSchedule one = make_schedule(1, ScheduleKind::linear);
    REQUIRE(one.alpha_bar.size() == 1);
    CHECK(one.alpha_bar[0] == doctest::Approx(0.9999).epsilon(1e-14));
    CHECK(one.level(0) == 1.0);
    CHECK(one.level(1) == one.alpha_bar[0]);
    CHECK(one.deterministic());

    const NoiseSchedule lin = make_schedule(10, ScheduleKind::linear);
    CHECK(lin.alpha[0] == doctest::Approx(1.0 - 1e-4));
    CHECK(lin.alpha[9] == doctest::Approx(1.0 - 0.02));

    CHECK_THROWS_AS(make_schedule(0, ScheduleKind::linear), DomainError);
    CHECK_THROWS_AS(make_schedule(-3, ScheduleKind::cosine), DomainError);
}

TEST_CASE("cosine schedule matches the closed form") {
    const int T = 10;
    const NoiseSchedule s = make_schedule(T, ScheduleKind::cosine);
    auto f = [&](double t) {
        const double c = std::cos((t / T + 0.008) / 1.008 * std::numbers::pi / 2);
        return c * c;
    };
    for (int t = 0; t < T - 1; ++t) CHECK(s.alpha_bar[t] == doctest::Approx(f(t + 1) / f(0)).epsilon(1e-12));
    CHECK(s.alpha_bar[0] > 0.95);
    // The last step would reach zero; its beta is clipped at 0.999.
    CHECK(s.alpha_bar[9] == doctest::Approx(s.alpha_bar[8] * 0.001).epsilon(1e-12));
}

TEST_CASE("alpha_bar strictly decreasing and in (0, 1)") {
    for (ScheduleKind kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
        for (int T : {1, 10, 30, 100}) {
            const NoiseSchedule s = make_schedule(T, kind);
            CHECK(s.alpha_bar.front() < 1.0);
            CHECK(s.alpha_bar.back() > 0.0);
            for (int t = 1; t < T; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        }
    }
}

TEST_CASE("schedule kind names") {
    CHECK(parse_schedule_kind(to_string(ScheduleKind::cosine)) == ScheduleKind::cosine);
    CHECK(parse_schedule_kind("linear") == ScheduleKind::linear);
    CHECK_THROWS_AS(parse_schedule_kind("sigmoid"), ConfigError);
}

TEST_CASE("forward noise") {
    NoiseSchedule s = make_schedule(3, ScheduleKind::linear);
    s.alpha_bar[1] = 0.64;
    const ImageTensor x = forward_noise(filled(kSmall, 0.0), 1, filled(kSmall, 1.0), s);
    for (double v : x.values()) CHECK(v == doctest::Approx(0.6).epsilon(1e-15));

    s.alpha_bar[0] = 1.0;
    const ImageTensor x0 = random_tensor(kSmall, 1);
    CHECK(forward_noise(x0, 0, random_tensor(kSmall, 2), s) == x0);
    s.alpha_bar[2] = 0.0;
    const ImageTensor eps = random_tensor(kSmall, 3);
    CHECK(forward_noise(x0, 2, eps, s) == eps);

    CHECK_THROWS_AS(forward_noise(x0, 0, ImageTensor(Dims{1, 2, 4, 5}), s), ShapeError);
    CHECK_THROWS_AS(forward_noise(x0, 3, eps, s), DomainError);
}

TEST_CASE("exact eps recovers x0") {
    Rng rng(11);
    for (ScheduleKind kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
        const NoiseSchedule s = make_schedule(30, kind);
        for (int trial = 0; trial < 30; ++trial) {
            const ImageTensor x0 = random_tensor(kSmall, rng.next());
            const ImageTensor eps = random_tensor(kSmall, rng.next());
            const int t = static_cast<int>(rng.below(30));
            const LatentState z{forward_noise(x0, t, eps, s), t + 1, 0};
            CHECK(max_abs_difference(predict_x0(z, eps, s), x0) <= 1e-6);
        }
    }
}

TEST_CASE("ddim step collapses to closed forms") {
    const NoiseSchedule s = make_schedule(10, ScheduleKind::cosine);
    const ImageTensor z = random_tensor(kSmall, 5);
    SUBCASE("zero eps scales by sqrt(a'/a)") {
        const LatentState out = ddim_step(LatentState{z, 4, 0}, ImageTensor(kSmall), s);
        CHECK(out.t == 3);
        const double ratio = std::sqrt(s.level(3) / s.level(4));
        for (std::size_t i = 0; i < z.size(); ++i)
            CHECK(out.z.values()[i] == doctest::Approx(ratio * z.values()[i]).epsilon(1e-12));
    }
    SUBCASE("equal levels make the step a no-op") {
        NoiseSchedule flat = s;
        flat.alpha_bar[2] = flat.alpha_bar[3];
        const LatentState out = ddim_step(LatentState{z, 4, 0}, random_tensor(kSmall, 6), flat);
        CHECK(max_abs_difference(out.z, z) <= 1e-12);
    }
    SUBCASE("last step lands on the predicted x0") {
        const ImageTensor eps = random_tensor(kSmall, 7);
        const LatentState out = ddim_step(LatentState{z, 1, 0}, eps, s);
        CHECK(max_abs_difference(out.z, predict_x0(LatentState{z, 1, 0}, eps, s)) <= 1e-12);
    }
}

TEST_CASE("ddim step errors and stochastic form") {
    NoiseSchedule s = make_schedule(5, ScheduleKind::linear);
    const ImageTensor z = random_tensor(kSmall, 8);
    CHECK_THROWS_AS(ddim_step(LatentState{z, 0, 0}, z, s), StepUnderflowError);
    CHECK_THROWS_AS(ddim_step(LatentState{z, 2, 0}, ImageTensor(Dims{1, 1, 4, 4}), s), ShapeError);

    s.sigma[2] = 0.1;
    CHECK_FALSE(s.deterministic());
    CHECK_THROWS_AS(ddim_step(LatentState{z, 3, 0}, z, s, z), DomainError);
    s.sigma[2] = 0.05;
    CHECK_THROWS_AS(ddim_step(LatentState{z, 3, 0}, z, s), MissingNoiseError);
    const ImageTensor eps = random_tensor(kSmall, 9);
    const ImageTensor noise = random_tensor(kSmall, 10);
    const LatentState out = ddim_step(LatentState{z, 3, 0}, eps, s, noise);
    const ImageTensor x0 = predict_x0(LatentState{z, 3, 0}, eps, s);
    const double a = s.level(2);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double expected = std::sqrt(a) * x0.values()[i] +
                                std::sqrt(1 - a - 0.0025) * eps.values()[i] + 0.05 * noise.values()[i];
        CHECK(out.z.values()[i] == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK_THROWS_AS(ddim_invert(z, constant_eps(0), {}, s), ConfigError);
}

TEST_CASE("inversion") {
    const NoiseSchedule s = make_schedule(10, ScheduleKind::linear);
    const ImageTensor x0 = random_tensor(kSmall, 12);
    SUBCASE("zero predictor gives the scaling chain") {
        const auto traj = ddim_invert(x0, constant_eps(0.0), {}, s, 2);
        REQUIRE(traj.size() == 11);
        for (int k = 0; k <= 10; ++k) CHECK(traj[k].t == k);
        CHECK(traj.front().z == x0);
        const double scale = std::sqrt(s.alpha_bar.back());
        CHECK(max_abs_difference(traj.back().z, scale * x0) <= 1e-12);
    }
    SUBCASE("constant predictor inverts exactly") {
        const auto traj = ddim_invert(x0, constant_eps(0.4), {}, s, 0);
        const auto back = ddim_sample(traj.back(), constant_eps(0.4), {}, s);
        CHECK(max_abs_difference(back[0].z, x0) <= 1e-10);
    }
    SUBCASE("fixed-point refinement shrinks the round-trip error") {
        double previous = INFINITY;
        for (int iters : {0, 1, 3}) {
            const auto traj = ddim_invert(x0, toy_eps(), {}, s, iters);
            const auto back = ddim_sample(traj.back(), toy_eps(), {}, s);
            const double err = mean_squared_error(back[0].z, x0);
            CHECK(err <= previous);
            previous = err;
        }
        CHECK(previous <= 1e-6);
    }
    SUBCASE("negative iteration count") {
        CHECK_THROWS_AS(ddim_invert(x0, constant_eps(0), {}, s, -1), DomainError);
    }
}

TEST_CASE("inversion callback") {
    const ImageTensor zT = random_tensor(kSmall, 13);
    const LatentState z{random_tensor(kSmall, 14), 7, 3};
    const LatentState replaced = inversion_callback(z, 10, zT, 10);
    CHECK(replaced.z == zT);
    CHECK(replaced.t == 7);
    CHECK(inversion_callback(replaced, 10, zT, 10).z == replaced.z);
    const LatentState kept = inversion_callback(z, 9, zT, 10);
    CHECK(kept.z == z.z);
}

TEST_CASE("classifier-free guidance") {
    const ImageTensor u = random_tensor(kSmall, 15);
    const ImageTensor c = random_tensor(kSmall, 16);
    CHECK(cfg_combine(u, c, 1.0) == c);
    CHECK(cfg_combine(u, c, 0.0) == u);
    const ImageTensor five = cfg_combine(filled(kSmall, 0.0), filled(kSmall, 1.0), 5.0);
    for (double v : five.values()) CHECK(v == 5.0);

    // Three points on the guidance line are collinear.
    const ImageTensor p0 = cfg_combine(u, c, 0.5);
    const ImageTensor p1 = cfg_combine(u, c, 2.0);
    const ImageTensor p2 = cfg_combine(u, c, 3.5);
    CHECK(max_abs_difference(p2 - p1, p1 - p0) <= 1e-12);
    CHECK_THROWS_AS(cfg_combine(u, ImageTensor(Dims{1, 2, 4, 3}), 1.0), ShapeError);
}

TEST_CASE("sampling") {
    const NoiseSchedule s = make_schedule(8, ScheduleKind::cosine);
    const LatentState start{random_tensor(kSmall, 17), 8, 0};
    SUBCASE("deterministic trajectory") {
        const auto a = ddim_sample(start, toy_eps(), {}, s);
        const auto b = ddim_sample(start, toy_eps(), {}, s);
        REQUIRE(a.size() == 9);
        for (int t = 0; t <= 8; ++t) {
            CHECK(a[t].t == t);
            CHECK(a[t].z == b[t].z);
        }
    }
    SUBCASE("callback installs the inversion latent at T") {
        const ImageTensor zT = random_tensor(kSmall, 18);
        const auto traj = ddim_sample(start, toy_eps(), {}, s, [&](const LatentState& z, int t) {
            return inversion_callback(z, t, zT, s.steps);
        });
        CHECK(traj[8].z == zT);
        CHECK(traj[7].z != ddim_sample(start, toy_eps(), {}, s)[7].z);
    }
    SUBCASE("stochastic sampling is reproducible from its seed") {
        NoiseSchedule noisy = s;
        for (int t = 1; t < 8; ++t) noisy.sigma[t] = 0.05;
        const auto a = ddim_sample(start, toy_eps(), {}, noisy, {}, 42);
        const auto b = ddim_sample(start, toy_eps(), {}, noisy, {}, 42);
        const auto c = ddim_sample(start, toy_eps(), {}, noisy, {}, 43);
        CHECK(a[0].z == b[0].z);
        CHECK(a[0].z != c[0].z);
    }
    SUBCASE("must start at T") {
        CHECK_THROWS_AS(ddim_sample(LatentState{start.z, 3, 0}, toy_eps(), {}, s), DomainError);
    }
}
