#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossart/attention.hpp"
#include "crossart/diffusion.hpp"
#include "crossart/encoders.hpp"
#include "crossart/tensor.hpp"

namespace crossart {

/// Shape of the tiny U-Net noise predictor.
///
/// Level l runs at resolution / 2^l. Level 0 has base_channels, deeper levels
/// 2 * base_channels. Attention blocks run on every level listed in
/// attn_levels: once on the way down, twice in the bottleneck (if listed),
/// once on the way up.
struct DenoiserConfig {
    int in_channels = 3;
    int base_channels = 32;
    int depth = 2;
    std::vector<int> attn_levels{1, 2};
    int heads = 4;
    int time_embed_dim = 64;
    int groups = 8;
    int text_width = kTextWidth;
    std::uint64_t text_seed = 1234;

    void validate() const;
    int channels_at(int level) const { return level == 0 ? base_channels : 2 * base_channels; }
    bool has_attention(int level) const;
    bool operator==(const DenoiserConfig&) const = default;
};

/// Flat parameter vector plus the configuration that defines its layout.
struct DenoiserState {
    DenoiserConfig config;
    std::vector<double> parameters;
    std::uint64_t seed = 0;

    std::size_t param_count() const noexcept { return parameters.size(); }
};

std::size_t parameter_count(const DenoiserConfig& config);
int attention_layer_count(const DenoiserConfig& config);

/// Names and offsets of every parameter block, in storage order.
struct ParamEntry {
    std::string name;
    std::size_t offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
};
std::vector<ParamEntry> parameter_table(const DenoiserConfig& config);

/// Fan-in scaled normal initialization; norms start at gamma = 1, beta = 0.
DenoiserState init_denoiser(const DenoiserConfig& config, std::uint64_t seed);

/// Raw semantic-stream projections captured at each attention layer.
struct SemanticCache {
    std::vector<AttentionProjections> layers;
    Dims source;
};

/// Everything the attention blocks consume besides the latent.
struct CrossArtContext {
    std::optional<SemanticCache> semantic;
    std::optional<TextEmbedding> text;
    std::optional<ImageEmbedding> image;
    GuidanceConfig guidance;
    StyleAlignOptions align;
};

/// Time conditioning input: log-SNR of the noise level, mapped onto [0, 1000].
double noise_level_feature(double alpha_bar);

/// Epsilon prediction at noise level alpha_bar. At every attention block the
/// target projections go through build_style_aligned, shared_attention and
/// decoupled_cross_attention using `ctx`.
ImageTensor denoise(const DenoiserState& state, const ImageTensor& z_t, double alpha_bar,
                    const CrossArtContext& ctx);

/// Runs the semantic stream and captures its raw Q/K/V at every attention layer.
/// The stream itself attends along the target-only path of `ctx_minimal`.
SemanticCache record_semantic_pass(const DenoiserState& state, const ImageTensor& semantic_z_t,
                                   double alpha_bar, const CrossArtContext& ctx_minimal);

/// Diagnostic forward with plain multi-head self-attention and no text branch.
ImageTensor denoise_plain(const DenoiserState& state, const ImageTensor& z_t, double alpha_bar);

/// One training example for the epsilon objective.
struct TrainingExample {
    ImageTensor x0;   // 1 x C x H x W
    ImageTensor eps;  // same dims
    double alpha_bar = 0.5;
    std::optional<TextEmbedding> text;
};

/// Settings of the differentiable (training) forward.
struct TrainingForward {
    bool normalize = true;
    double text_scale = 1.0;
    double epsilon = 1e-5;
};

/// MSE between predicted and true eps. Adds d(loss)/d(parameters) into `grad`
/// when given (grad must have param_count entries).
double loss_and_gradient(const DenoiserState& state, const TrainingExample& example,
                         std::span<double> grad = {}, const TrainingForward& options = {});

/// Differentiable-path forward without gradients; matches denoise() on a
/// target-only context with the same settings.
ImageTensor denoise_training_path(const DenoiserState& state, const ImageTensor& z_t,
                                  double alpha_bar, const std::optional<TextEmbedding>& text,
                                  const TrainingForward& options = {});

}  // namespace crossart
