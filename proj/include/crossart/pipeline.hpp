#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crossart/attention.hpp"
#include "crossart/denoiser.hpp"
#include "crossart/diffusion.hpp"
#include "crossart/tensor.hpp"

namespace crossart {

enum class Mode { variation, editing, style_transfer, fusion, multimodal_blend };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& name);

bool mode_uses_semantic(Mode mode);
bool mode_uses_prompt(Mode mode);

struct PipelineConfig {
    Mode mode = Mode::variation;
    int steps = kDefaultSteps;
    GuidanceConfig guidance;
    int resolution = 64;
    std::uint64_t seed = 0;
    std::filesystem::path target_image_path;
    std::optional<std::filesystem::path> semantic_image_path;
    std::optional<std::string> prompt;
    std::filesystem::path checkpoint_path;
    std::filesystem::path output_dir = "out";
    ScheduleKind schedule = ScheduleKind::linear;
    int fixed_point_iters = 3;
    bool normalize = true;
    ArtBnDirection artbn_direction = ArtBnDirection::target_to_semantic;
    bool dump_trajectory = false;

    /// Mode requirement matrix; throws ConfigError before any compute.
    void validate() const;
};

/// Applies one kebab-case key (as used by CLI flags and config files).
/// Throws ConfigError on unknown keys or unparsable values.
void apply_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Parses "key = value" lines; '#' starts a comment. Keys beginning with
/// "record." are skipped so a run record can be replayed as a config file.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);
PipelineConfig load_config_file(const std::filesystem::path& path, PipelineConfig base = {});

/// Config echo in key=value form; output-dir is left out.
std::vector<std::pair<std::string, std::string>> echo_config(const PipelineConfig& cfg);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

struct GenerationResult {
    ImageTensor output;
    ImageTensor z_T;
    std::vector<LatentState> inversion;  // z_0 ... z_T
    std::vector<LatentState> sampling;   // indexed by t
    std::vector<double> latent_norms;    // RMS of the sampled latent, indexed by t
};

/// Core of a run: invert the target, install the inversion callback, then
/// sample with the mode's cross-art context. `semantic` is required exactly
/// when the mode uses one.
GenerationResult generate(const PipelineConfig& cfg, const DenoiserState& denoiser,
                          const ImageTensor& target, const std::optional<ImageTensor>& semantic);

struct RunRecord {
    std::vector<std::pair<std::string, std::string>> config_echo;
    std::vector<double> latent_norms;
    std::vector<std::string> outputs;  // relative to the output directory
    ScheduleKind schedule = ScheduleKind::linear;
    double wall_ms = 0.0;

    /// Deterministic key=value text; wall-clock time is not part of it.
    std::string serialize() const;
};

/// Directory a run writes to: output_dir, resolved against $CROSSART_OUTPUT_ROOT
/// when relative and the variable is set.
std::filesystem::path resolve_output_dir(const std::filesystem::path& output_dir);

inline constexpr const char* kRunRecordName = "run.txt";
inline constexpr const char* kTimingName = "timing.txt";
inline constexpr const char* kOutputImageName = "output.png";

/// Loads inputs and checkpoint, generates, and writes output.png, run.txt
/// (atomically) and timing.txt into the output directory.
RunRecord run_pipeline(const PipelineConfig& cfg);

}  // namespace crossart
