#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crossart/denoiser.hpp"
#include "crossart/errors.hpp"
#include "crossart/rng.hpp"
#include "crossart/training.hpp"
#include "test_helpers.hpp"

using namespace crossart;
using crossart::testing::random_tensor;

namespace {

DenoiserConfig small_config() {
    DenoiserConfig c;
    c.base_channels = 8;
    c.depth = 1;
    c.attn_levels = {1};
    c.heads = 2;
    c.groups = 4;
    c.time_embed_dim = 16;
    c.text_width = 64;
    return c;
}

// Random weights everywhere, including the zero-initialized biases and the
// down-scaled output layers, so every code path carries signal.
DenoiserState jittered(const DenoiserConfig& c, std::uint64_t seed) {
    DenoiserState s = init_denoiser(c, seed);
    Rng rng(seed + 99);
    for (double& p : s.parameters) p += 0.05 * rng.normal();
    return s;
}

const Dims kLatent{1, 3, 16, 16};

}  // namespace

TEST_CASE("parameter layout") {
    const DenoiserConfig c;
    const auto table = parameter_table(c);
    std::size_t expected = 0;
    for (const ParamEntry& e : table) {
        CHECK(e.offset == expected);
        expected += static_cast<std::size_t>(e.rows * e.cols);
    }
    CHECK(expected == parameter_count(c));
    CHECK(init_denoiser(c, 0).param_count() == parameter_count(c));
    CHECK(attention_layer_count(c) == 4);
    CHECK(attention_layer_count(small_config()) == 2);
    CHECK(init_denoiser(c, 3).parameters == init_denoiser(c, 3).parameters);
    CHECK(init_denoiser(c, 3).parameters != init_denoiser(c, 4).parameters);
}

TEST_CASE("config validation") {
    DenoiserConfig c = small_config();
    c.groups = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.attn_levels = {2};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.depth = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("noise level feature") {
    CHECK(noise_level_feature(0.5) == doctest::Approx(500.0));
    CHECK(noise_level_feature(0.9) > noise_level_feature(0.1));
    CHECK(std::isfinite(noise_level_feature(1.0)));
    CHECK(std::isfinite(noise_level_feature(0.0)));
}

TEST_CASE("denoise output shape, finiteness and determinism") {
    const DenoiserState s = jittered(small_config(), 1);
    const ImageTensor z = random_tensor(kLatent, 2);
    const ImageTensor a = denoise(s, z, 0.7, {});
    CHECK(a.dims() == z.dims());
    CHECK(a.all_finite());
    CHECK(a == denoise(s, z, 0.7, {}));
    CHECK(a != denoise(s, z, 0.3, {}));

    CHECK_THROWS_AS(denoise(s, random_tensor(Dims{1, 3, 15, 16}, 2), 0.5, {}), ShapeError);
    CHECK_THROWS_AS(denoise(s, random_tensor(Dims{1, 1, 16, 16}, 2), 0.5, {}), ShapeError);
}

TEST_CASE("normalization off, no semantic, no text equals plain self-attention") {
    const DenoiserState s = jittered(small_config(), 3);
    const ImageTensor z = random_tensor(kLatent, 4);
    CrossArtContext ctx;
    ctx.align.normalize = false;
    ctx.guidance.text_scale = 0.0;
    ctx.text = TextEncoder(s.config.text_seed).encode("a warm oil painting");
    CHECK(max_abs_difference(denoise(s, z, 0.6, ctx), denoise_plain(s, z, 0.6)) <= 1e-6);
}

TEST_CASE("training path agrees with the inference path") {
    const DenoiserState s = jittered(small_config(), 5);
    const ImageTensor z = random_tensor(kLatent, 6);
    const TextEmbedding text = TextEncoder(s.config.text_seed).encode("a cool ink drawing");
    for (bool normalize : {true, false}) {
        for (double scale : {0.0, 1.0, 2.5}) {
            CrossArtContext ctx;
            ctx.align.normalize = normalize;
            ctx.guidance.text_scale = scale;
            ctx.text = text;
            TrainingForward opt;
            opt.normalize = normalize;
            opt.text_scale = scale;
            CHECK(max_abs_difference(denoise(s, z, 0.4, ctx),
                                     denoise_training_path(s, z, 0.4, text, opt)) <= 1e-6);
        }
    }
}

TEST_CASE("semantic cache") {
    const DenoiserState s = jittered(DenoiserConfig{}, 7);
    const ImageTensor target = random_tensor(Dims{1, 3, 32, 32}, 8);
    const ImageTensor semantic = random_tensor(Dims{1, 3, 32, 32}, 9, 2.0, 0.5);
    const SemanticCache cache = record_semantic_pass(s, semantic, 0.5, {});

    SUBCASE("one entry per attention layer with matching token counts") {
        REQUIRE(cache.layers.size() == 4);
        const int rows[] = {256, 64, 64, 256};
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(cache.layers[i].k.rows() == rows[i]);
            CHECK(cache.layers[i].q.cols() == 64);
        }
    }
    SUBCASE("semantic scale 0 reduces to the target-only path") {
        CrossArtContext with;
        with.semantic = cache;
        with.guidance.semantic_scale = 0.0;
        CHECK(max_abs_difference(denoise(s, target, 0.5, with), denoise(s, target, 0.5, {})) <= 1e-6);
    }
    SUBCASE("semantic injection changes the prediction") {
        CrossArtContext with;
        with.semantic = cache;
        CHECK(max_abs_difference(denoise(s, target, 0.5, with), denoise(s, target, 0.5, {})) > 1e-6);
    }
    SUBCASE("mismatched caches are rejected") {
        CrossArtContext bad;
        bad.semantic = cache;
        bad.semantic->layers.pop_back();
        CHECK_THROWS_AS(denoise(s, target, 0.5, bad), ContextError);
        bad.semantic = cache;
        bad.semantic->layers[1].k.conservativeResize(Eigen::NoChange, 32);
        CHECK_THROWS_AS(denoise(s, target, 0.5, bad), ContextError);
    }
}

TEST_CASE("text conditioning") {
    const DenoiserState s = jittered(small_config(), 10);
    const ImageTensor z = random_tensor(kLatent, 11);
    CrossArtContext ctx;
    ctx.text = TextEncoder(s.config.text_seed).encode("a warm oil painting");
    CHECK(denoise(s, z, 0.5, ctx) != denoise(s, z, 0.5, {}));
    ctx.text = TextEncoder(1, 32).encode("a warm oil painting");
    CHECK_THROWS_AS(denoise(s, z, 0.5, ctx), ContextError);
}

TEST_CASE("analytic gradient matches central differences") {
    const DenoiserState s = jittered(small_config(), 12);
    TrainingExample ex;
    ex.x0 = random_tensor(Dims{1, 3, 8, 8}, 13);
    ex.eps = random_tensor(Dims{1, 3, 8, 8}, 14);
    ex.alpha_bar = 0.55;
    ex.text = TextEncoder(s.config.text_seed).encode("a cool ink drawing");

    std::vector<double> grad(s.param_count(), 0.0);
    const double loss = loss_and_gradient(s, ex, grad);
    CHECK(std::isfinite(loss));

    Rng rng(15);
    const double h = 1e-4;
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t i = rng.below(s.param_count());
        DenoiserState plus = s;
        DenoiserState minus = s;
        plus.parameters[i] += h;
        minus.parameters[i] -= h;
        const double fd = (loss_and_gradient(plus, ex) - loss_and_gradient(minus, ex)) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
        CHECK(std::abs(fd - grad[i]) / denom <= 1e-3);
    }
}

TEST_CASE("gradients accumulate into the buffer") {
    const DenoiserState s = jittered(small_config(), 16);
    TrainingExample ex{random_tensor(Dims{1, 3, 8, 8}, 17), random_tensor(Dims{1, 3, 8, 8}, 18), 0.5, {}};
    std::vector<double> once(s.param_count(), 0.0);
    std::vector<double> twice(s.param_count(), 0.0);
    loss_and_gradient(s, ex, once);
    loss_and_gradient(s, ex, twice);
    loss_and_gradient(s, ex, twice);
    for (std::size_t i = 0; i < once.size(); i += 97) CHECK(twice[i] == doctest::Approx(2 * once[i]));
    std::vector<double> wrong(3);
    CHECK_THROWS_AS(loss_and_gradient(s, ex, wrong), ShapeError);
}

TEST_CASE("synthetic dataset") {
    const SyntheticDataset a = make_synthetic_dataset(100, 16, 5);
    REQUIRE(a.images.size() == 100);
    double warm_red = 0.0, cool_red = 0.0;
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        const ImageTensor& img = a.images[i];
        CHECK(img.dims() == Dims{1, 3, 16, 16});
        const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
        CHECK(*lo >= 0.0);
        CHECK(*hi <= 1.0);
        CHECK(a.families[i] == (i % 2 == 0 ? StyleFamily::oil : StyleFamily::ink));
        auto red = img.plane(0, 0);
        const double mean = std::accumulate(red.begin(), red.end(), 0.0) / red.size();
        (i % 2 == 0 ? warm_red : cool_red) += mean;
    }
    CHECK(warm_red > cool_red);

    const SyntheticDataset b = make_synthetic_dataset(100, 16, 5);
    for (std::size_t i = 0; i < 100; ++i) CHECK(a.images[i] == b.images[i]);
    CHECK(make_synthetic_dataset(4, 16, 6).images[0] != a.images[0]);
    CHECK_THROWS_AS(make_synthetic_dataset(0, 16, 1), DomainError);
}

TEST_CASE("toy training") {
    const DenoiserState s = init_denoiser(small_config(), 20);
    std::vector<ImageTensor> data;
    for (const ImageTensor& img : make_synthetic_dataset(8, 8, 1).images) data.push_back(to_model_range(img));

    SUBCASE("zero steps leave parameters untouched") {
        const TrainResult r = train_toy(s, data, 0, 1e-2, 1);
        CHECK(r.state.parameters == s.parameters);
        CHECK(r.loss_history.empty());
    }
    SUBCASE("reproducible from the seed") {
        const TrainResult a = train_toy(s, data, 5, 1e-2, 1);
        const TrainResult b = train_toy(s, data, 5, 1e-2, 1);
        CHECK(a.loss_history.size() == 5);
        CHECK(a.state.parameters == b.state.parameters);
        CHECK(a.state.parameters != s.parameters);
    }
    SUBCASE("divergence is reported") {
        CHECK_THROWS_AS(train_toy(s, data, 50, 1e6, 1), DivergenceError);
    }
    SUBCASE("caption count must match") {
        TrainOptions opt;
        opt.captions = {"a"};
        CHECK_THROWS_AS(train_toy(s, data, 1, 1e-2, 1, opt), ConfigError);
    }
}
