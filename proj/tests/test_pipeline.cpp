#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "crossart/checkpoint.hpp"
#include "crossart/errors.hpp"
#include "crossart/image_io.hpp"
#include "crossart/pipeline.hpp"
#include "crossart/rng.hpp"
#include "test_helpers.hpp"

using namespace crossart;
using crossart::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

const Mode kModes[] = {Mode::variation, Mode::editing, Mode::style_transfer, Mode::fusion,
                       Mode::multimodal_blend};

DenoiserState small_denoiser() {
    DenoiserConfig c;
    c.base_channels = 8;
    c.groups = 4;
    c.heads = 2;
    c.depth = 1;
    c.attn_levels = {0, 1};
    c.time_embed_dim = 16;
    DenoiserState s = init_denoiser(c, 5);
    Rng rng(6);
    for (double& p : s.parameters) p += 0.02 * rng.normal();
    return s;
}

PipelineConfig complete_config(Mode mode) {
    PipelineConfig cfg;
    cfg.mode = mode;
    cfg.steps = 4;
    cfg.resolution = 16;
    cfg.target_image_path = "target.png";
    if (mode_uses_semantic(mode)) cfg.semantic_image_path = "semantic.png";
    if (mode_uses_prompt(mode)) cfg.prompt = "a cool ink drawing";
    return cfg;
}

ImageTensor bounded(Dims d, std::uint64_t seed) {
    ImageTensor t = random_tensor(d, seed, 0.4);
    for (double& v : t.values()) v = std::clamp(v, -1.0, 1.0);
    return t;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const Dims kImage{1, 3, 16, 16};

}  // namespace

TEST_CASE("mode names") {
    for (Mode m : kModes) CHECK(parse_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_mode("remix"), ConfigError);
}

TEST_CASE("mode requirement matrix") {
    for (Mode m : kModes) {
        CHECK_NOTHROW(complete_config(m).validate());
        PipelineConfig no_semantic = complete_config(m);
        no_semantic.semantic_image_path.reset();
        PipelineConfig no_prompt = complete_config(m);
        no_prompt.prompt.reset();
        if (mode_uses_semantic(m)) CHECK_THROWS_AS(no_semantic.validate(), ConfigError);
        else CHECK_NOTHROW(no_semantic.validate());
        if (mode_uses_prompt(m)) CHECK_THROWS_AS(no_prompt.validate(), ConfigError);
        else CHECK_NOTHROW(no_prompt.validate());
    }
    CHECK(mode_uses_semantic(Mode::style_transfer));
    CHECK_FALSE(mode_uses_prompt(Mode::fusion));

    PipelineConfig cfg = complete_config(Mode::variation);
    cfg.guidance.semantic_scale = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = complete_config(Mode::variation);
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config values") {
    PipelineConfig cfg;
    apply_config_value(cfg, "mode", "fusion");
    apply_config_value(cfg, "condition-scale", "2.5");
    apply_config_value(cfg, "seed", "18446744073709551615");
    apply_config_value(cfg, "normalize", "false");
    apply_config_value(cfg, "artbn-direction", "semantic-to-target");
    CHECK(cfg.mode == Mode::fusion);
    CHECK(cfg.guidance.condition_scale == 2.5);
    CHECK(cfg.seed == 18446744073709551615ULL);
    CHECK_FALSE(cfg.normalize);
    CHECK(cfg.artbn_direction == ArtBnDirection::semantic_to_target);

    CHECK_THROWS_AS(apply_config_value(cfg, "colour", "red"), ConfigError);
    CHECK_THROWS_AS(apply_config_value(cfg, "steps", "ten"), ConfigError);
    CHECK_THROWS_AS(apply_config_value(cfg, "steps", "10x"), ConfigError);
    CHECK_THROWS_AS(apply_config_value(cfg, "text-scale", "nan"), ConfigError);
    CHECK_THROWS_AS(apply_config_value(cfg, "normalize", "maybe"), ConfigError);
}

TEST_CASE("key = value parsing") {
    const auto kv = parse_key_values("# header\n\n  mode = editing \nprompt = a cat # not a comment\n"
                                     "record.schedule=linear\nsteps=5\n");
    REQUIRE(kv.size() == 3);
    CHECK(kv[0] == std::pair<std::string, std::string>{"mode", "editing"});
    CHECK(kv[1].second == "a cat # not a comment");
    CHECK(kv[2].first == "steps");
    CHECK_THROWS_AS(parse_key_values("mode editing\n"), ConfigError);
}

TEST_CASE("format_double round trips") {
    for (double v : {0.0, 1.0, 0.1, 5.0, 1.0 / 3.0, 1e-300, -2.5e17}) {
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(5.0) == "5");
}

TEST_CASE("a run record replays to the same configuration") {
    PipelineConfig cfg = complete_config(Mode::multimodal_blend);
    cfg.guidance.semantic_scale = 0.3;
    cfg.guidance.text_scale = 1.0 / 3.0;
    cfg.seed = 99;
    cfg.schedule = ScheduleKind::cosine;
    RunRecord rec;
    rec.config_echo = echo_config(cfg);
    rec.latent_norms = {1.0, 0.5};
    rec.outputs = {kOutputImageName};
    const std::string text = rec.serialize();
    CHECK(text.rfind("# crossart run record v1\n", 0) == 0);
    CHECK(text.find("record.latent-norm.1=0.5\n") != std::string::npos);

    PipelineConfig replay;
    for (const auto& [k, v] : parse_key_values(text)) apply_config_value(replay, k, v);
    CHECK(echo_config(replay) == echo_config(cfg));
}

TEST_CASE("output root from the environment") {
    ::unsetenv("CROSSART_OUTPUT_ROOT");
    CHECK(resolve_output_dir("out") == fs::path("out"));
    ::setenv("CROSSART_OUTPUT_ROOT", "/tmp/root", 1);
    CHECK(resolve_output_dir("out") == fs::path("/tmp/root/out"));
    CHECK(resolve_output_dir("/abs/out") == fs::path("/abs/out"));
    ::unsetenv("CROSSART_OUTPUT_ROOT");
}

TEST_CASE("generation") {
    const DenoiserState d = small_denoiser();
    const ImageTensor target = bounded(kImage, 1);
    const ImageTensor semantic = bounded(kImage, 2);

    SUBCASE("callback installs the inverted latent") {
        const GenerationResult r = generate(complete_config(Mode::variation), d, target, std::nullopt);
        REQUIRE(r.inversion.size() == 5);
        REQUIRE(r.sampling.size() == 5);
        CHECK(r.sampling[4].z == r.z_T);
        CHECK(r.z_T == r.inversion.back().z);
        CHECK(r.latent_norms.size() == 5);
    }
    SUBCASE("variation reconstructs the target") {
        PipelineConfig cfg = complete_config(Mode::variation);
        cfg.guidance.condition_scale = 1.0;
        cfg.guidance.text_scale = 0.0;
        const GenerationResult r = generate(cfg, d, target, std::nullopt);
        CHECK(mean_squared_error(r.output, target) <= 5e-3);
    }
    SUBCASE("fusion at semantic scale 0 equals variation") {
        PipelineConfig fusion = complete_config(Mode::fusion);
        fusion.guidance.semantic_scale = 0.0;
        const ImageTensor a = generate(fusion, d, target, semantic).output;
        const ImageTensor b = generate(complete_config(Mode::variation), d, target, std::nullopt).output;
        CHECK(max_abs_difference(a, b) <= 1e-6);
    }
    SUBCASE("every mode is deterministic and finite") {
        for (Mode m : kModes) {
            const PipelineConfig cfg = complete_config(m);
            const std::optional<ImageTensor> sem =
                mode_uses_semantic(m) ? std::optional<ImageTensor>(semantic) : std::nullopt;
            const GenerationResult a = generate(cfg, d, target, sem);
            const GenerationResult b = generate(cfg, d, target, sem);
            CHECK(a.output.all_finite());
            CHECK(a.output == b.output);
            CHECK(a.latent_norms == b.latent_norms);
        }
    }
    SUBCASE("input errors") {
        CHECK_THROWS_AS(generate(complete_config(Mode::fusion), d, target, std::nullopt), ConfigError);
        CHECK_THROWS_AS(
            generate(complete_config(Mode::fusion), d, target, bounded(Dims{1, 3, 8, 8}, 3)),
            ContextError);
    }
}

TEST_CASE("run_pipeline writes reproducible artifacts") {
    const fs::path root = fs::temp_directory_path() / "crossart_test_pipeline";
    fs::remove_all(root);
    fs::create_directories(root);
    save_checkpoint(small_denoiser(), root / "model.ckpt");
    save_image(bounded(kImage, 4), root / "target.png");
    save_image(bounded(kImage, 5), root / "semantic.png");

    PipelineConfig cfg = complete_config(Mode::multimodal_blend);
    cfg.target_image_path = root / "target.png";
    cfg.semantic_image_path = root / "semantic.png";
    cfg.checkpoint_path = root / "model.ckpt";
    cfg.dump_trajectory = true;

    cfg.output_dir = root / "a";
    const RunRecord first = run_pipeline(cfg);
    cfg.output_dir = root / "b";
    run_pipeline(cfg);

    CHECK(slurp(root / "a" / kRunRecordName) == slurp(root / "b" / kRunRecordName));
    CHECK(slurp(root / "a" / kRunRecordName) == first.serialize());
    CHECK(slurp(root / "a" / kOutputImageName) == slurp(root / "b" / kOutputImageName));
    CHECK(slurp(root / "a" / kTimingName).rfind("wall-ms=", 0) == 0);
    CHECK(load_image(root / "a" / kOutputImageName, 16).dims() == kImage);
    CHECK(load_tensor(root / "a" / "z_T.bin").dims() == kImage);
    CHECK(fs::exists(root / "a" / "latent_0.bin"));

    cfg.checkpoint_path = root / "missing.ckpt";
    CHECK_THROWS_AS(run_pipeline(cfg), IoError);
}
