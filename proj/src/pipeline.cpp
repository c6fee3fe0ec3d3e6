#include "crossart/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "crossart/checkpoint.hpp"
#include "crossart/encoders.hpp"
#include "crossart/errors.hpp"
#include "crossart/image_io.hpp"
#include "crossart/rng.hpp"

namespace crossart {

namespace {

// Seed offset for the fixed noise that forward-noises the semantic image.
constexpr std::uint64_t kSemanticNoiseStream = 0x5e3a171cULL;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError("invalid number for " + key + ": '" + v + "'");
    }
    return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
    Int out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("invalid integer for " + key + ": '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
}

double rms(const ImageTensor& t) {
    return std::sqrt(t.squared_norm() / static_cast<double>(t.size()));
}

}  // namespace

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::variation: return "variation";
        case Mode::editing: return "editing";
        case Mode::style_transfer: return "style_transfer";
        case Mode::fusion: return "fusion";
        case Mode::multimodal_blend: return "multimodal_blend";
    }
    return "variation";
}

Mode parse_mode(const std::string& name) {
    for (Mode m : {Mode::variation, Mode::editing, Mode::style_transfer, Mode::fusion,
                   Mode::multimodal_blend}) {
        if (to_string(m) == name) return m;
    }
    throw ConfigError("unknown mode '" + name + "'");
}

bool mode_uses_semantic(Mode mode) {
    return mode == Mode::style_transfer || mode == Mode::fusion || mode == Mode::multimodal_blend;
}

bool mode_uses_prompt(Mode mode) {
    return mode == Mode::editing || mode == Mode::multimodal_blend;
}

void PipelineConfig::validate() const {
    if (mode_uses_semantic(mode) && !semantic_image_path) {
        throw ConfigError(to_string(mode) + " mode requires semantic-image-path");
    }
    if (mode_uses_prompt(mode) && (!prompt || prompt->empty())) {
        throw ConfigError(to_string(mode) + " mode requires a prompt");
    }
    if (steps < 1) throw ConfigError("steps must be at least 1");
    if (resolution < 1) throw ConfigError("resolution must be positive");
    if (fixed_point_iters < 0) throw ConfigError("fixed-point-iters must be non-negative");
    try {
        guidance.validate();
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
}

void apply_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "mode") cfg.mode = parse_mode(value);
    else if (key == "steps") cfg.steps = parse_int<int>(key, value);
    else if (key == "condition-scale") cfg.guidance.condition_scale = parse_double(key, value);
    else if (key == "semantic-scale") cfg.guidance.semantic_scale = parse_double(key, value);
    else if (key == "text-scale") cfg.guidance.text_scale = parse_double(key, value);
    else if (key == "resolution") cfg.resolution = parse_int<int>(key, value);
    else if (key == "seed") cfg.seed = parse_int<std::uint64_t>(key, value);
    else if (key == "target-image-path") cfg.target_image_path = value;
    else if (key == "semantic-image-path") {
        if (value.empty()) cfg.semantic_image_path.reset();
        else cfg.semantic_image_path = value;
    } else if (key == "prompt") {
        if (value.empty()) cfg.prompt.reset();
        else cfg.prompt = value;
    } else if (key == "checkpoint-path") cfg.checkpoint_path = value;
    else if (key == "output-dir") cfg.output_dir = value;
    else if (key == "schedule") cfg.schedule = parse_schedule_kind(value);
    else if (key == "fixed-point-iters") cfg.fixed_point_iters = parse_int<int>(key, value);
    else if (key == "normalize") cfg.normalize = parse_bool(key, value);
    else if (key == "artbn-direction") {
        if (value == "target-to-semantic") cfg.artbn_direction = ArtBnDirection::target_to_semantic;
        else if (value == "semantic-to-target") cfg.artbn_direction = ArtBnDirection::semantic_to_target;
        else throw ConfigError("invalid artbn-direction '" + value + "'");
    } else if (key == "dump-trajectory") cfg.dump_trajectory = parse_bool(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.rfind("record.", 0) == 0) continue;
        out.emplace_back(key, trim(t.substr(eq + 1)));
    }
    return out;
}

PipelineConfig load_config_file(const std::filesystem::path& path, PipelineConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    for (const auto& [k, v] : parse_key_values(ss.str())) apply_config_value(base, k, v);
    return base;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::vector<std::pair<std::string, std::string>> echo_config(const PipelineConfig& cfg) {
    return {
        {"mode", to_string(cfg.mode)},
        {"steps", std::to_string(cfg.steps)},
        {"condition-scale", format_double(cfg.guidance.condition_scale)},
        {"semantic-scale", format_double(cfg.guidance.semantic_scale)},
        {"text-scale", format_double(cfg.guidance.text_scale)},
        {"resolution", std::to_string(cfg.resolution)},
        {"seed", std::to_string(cfg.seed)},
        {"target-image-path", cfg.target_image_path.string()},
        {"semantic-image-path", cfg.semantic_image_path ? cfg.semantic_image_path->string() : ""},
        {"prompt", cfg.prompt.value_or("")},
        {"checkpoint-path", cfg.checkpoint_path.string()},
        {"schedule", to_string(cfg.schedule)},
        {"fixed-point-iters", std::to_string(cfg.fixed_point_iters)},
        {"normalize", cfg.normalize ? "true" : "false"},
        {"artbn-direction", cfg.artbn_direction == ArtBnDirection::target_to_semantic
                                ? "target-to-semantic"
                                : "semantic-to-target"},
        {"dump-trajectory", cfg.dump_trajectory ? "true" : "false"},
    };
}

GenerationResult generate(const PipelineConfig& cfg, const DenoiserState& denoiser,
                          const ImageTensor& target, const std::optional<ImageTensor>& semantic) {
    cfg.validate();
    const bool use_semantic = mode_uses_semantic(cfg.mode);
    const bool use_prompt = mode_uses_prompt(cfg.mode);
    if (use_semantic && !semantic) throw ConfigError("semantic image missing for " + to_string(cfg.mode));
    if (target.dims().n != 1) throw ShapeError("target must be a single image");
    if (use_semantic && semantic->dims() != target.dims()) {
        throw ContextError("semantic image " + semantic->dims().str() + " differs from target " +
                           target.dims().str());
    }

    const NoiseSchedule sched = make_schedule(cfg.steps, cfg.schedule);
    const TextEncoder encoder(denoiser.config.text_seed, denoiser.config.text_width);

    CrossArtContext uncond;
    uncond.text = encoder.encode(std::string_view{});
    uncond.guidance = cfg.guidance;
    uncond.align.normalize = cfg.normalize;
    uncond.align.direction = cfg.artbn_direction;
    if (use_semantic && semantic->dims().h % kDefaultPatch == 0 &&
        semantic->dims().w % kDefaultPatch == 0) {
        uncond.image = encode_image(*semantic, kDefaultPatch, denoiser.config.text_seed);
    }
    std::optional<CrossArtContext> cond;
    if (use_prompt) {
        cond = uncond;
        cond->text = encoder.encode(*cfg.prompt);
    }

    ConditioningBundle bundle{uncond.text, uncond.image, cfg.guidance};

    // Inversion runs on the target alone with the unconditional prompt.
    const EpsFn invert_eps = [&](const LatentState& s, const ConditioningBundle&) {
        return denoise(denoiser, s.z, sched.level(s.t), uncond);
    };

    GenerationResult result;
    result.inversion = ddim_invert(target, invert_eps, bundle, sched, cfg.fixed_point_iters);
    result.z_T = result.inversion.back().z;

    std::optional<ImageTensor> semantic_noise;
    if (use_semantic) semantic_noise = gaussian_tensor(target.dims(), cfg.seed ^ kSemanticNoiseStream);

    const EpsFn sample_eps = [&](const LatentState& s, const ConditioningBundle&) {
        const double level = sched.level(s.t);
        CrossArtContext u = uncond;
        if (use_semantic) {
            const ImageTensor sem_t = forward_noise(*semantic, s.t - 1, *semantic_noise, sched);
            u.semantic = record_semantic_pass(denoiser, sem_t, level, uncond);
        }
        ImageTensor eps_u = denoise(denoiser, s.z, level, u);
        if (!cond) return eps_u;
        CrossArtContext c = *cond;
        c.semantic = u.semantic;
        const ImageTensor eps_c = denoise(denoiser, s.z, level, c);
        return cfg_combine(eps_u, eps_c, cfg.guidance.condition_scale);
    };

    const ImageTensor& z_T = result.z_T;
    const int T = sched.steps;
    const StepCallback callback = [&](const LatentState& s, int t) {
        return inversion_callback(s, t, z_T, T);
    };
    LatentState start{ImageTensor(target.dims()), T, cfg.seed};
    result.sampling = ddim_sample(start, sample_eps, bundle, sched, callback, cfg.seed);
    result.output = result.sampling.front().z;
    result.latent_norms.reserve(result.sampling.size());
    for (const LatentState& s : result.sampling) result.latent_norms.push_back(rms(s.z));
    return result;
}

std::string RunRecord::serialize() const {
    std::ostringstream os;
    os << "# crossart run record v1\n";
    for (const auto& [k, v] : config_echo) os << k << "=" << v << "\n";
    os << "record.schedule=" << to_string(schedule) << "\n";
    for (std::size_t i = 0; i < outputs.size(); ++i) os << "record.output." << i << "=" << outputs[i] << "\n";
    for (std::size_t t = 0; t < latent_norms.size(); ++t) {
        os << "record.latent-norm." << t << "=" << format_double(latent_norms[t]) << "\n";
    }
    return os.str();
}

std::filesystem::path resolve_output_dir(const std::filesystem::path& output_dir) {
    if (output_dir.is_relative()) {
        if (const char* root = std::getenv("CROSSART_OUTPUT_ROOT"); root && *root) {
            return std::filesystem::path(root) / output_dir;
        }
    }
    return output_dir;
}

namespace {

void write_atomically(const std::filesystem::path& path, const std::string& text) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string());
}

}  // namespace

RunRecord run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const DenoiserState denoiser = load_checkpoint(cfg.checkpoint_path);
    const ImageTensor target = load_image(cfg.target_image_path, cfg.resolution);
    std::optional<ImageTensor> semantic;
    if (mode_uses_semantic(cfg.mode)) semantic = load_image(*cfg.semantic_image_path, cfg.resolution);

    const GenerationResult gen = generate(cfg, denoiser, target, semantic);

    const std::filesystem::path dir = resolve_output_dir(cfg.output_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string());

    RunRecord record;
    record.config_echo = echo_config(cfg);
    record.latent_norms = gen.latent_norms;
    record.schedule = cfg.schedule;
    save_image(gen.output, dir / kOutputImageName);
    record.outputs.push_back(kOutputImageName);
    if (cfg.dump_trajectory) {
        save_tensor(gen.z_T, dir / "z_T.bin", cfg.steps);
        record.outputs.push_back("z_T.bin");
        for (const LatentState& s : gen.sampling) {
            const std::string name = "latent_" + std::to_string(s.t) + ".bin";
            save_tensor(s.z, dir / name, s.t);
            record.outputs.push_back(name);
        }
    }
    write_atomically(dir / kRunRecordName, record.serialize());

    record.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    write_atomically(dir / kTimingName, "wall-ms=" + format_double(record.wall_ms) + "\n");
    return record;
}

}  // namespace crossart
