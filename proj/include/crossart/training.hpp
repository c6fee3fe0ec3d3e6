#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crossart/denoiser.hpp"
#include "crossart/diffusion.hpp"
#include "crossart/tensor.hpp"

namespace crossart {

enum class StyleFamily { oil, ink };

std::string to_string(StyleFamily family);
/// Caption used for text-conditioned training of each family.
std::string family_caption(StyleFamily family);

struct SyntheticDataset {
    std::vector<ImageTensor> images;  // 1 x 3 x R x R, values in [0, 1]
    std::vector<StyleFamily> families;
};

/// Procedural "artworks": a 3-colour palette, a background wash and 1-4 shapes
/// (disk, stripe band, triangle). Even indices are warm "oil" pieces with
/// canvas grain, odd indices cool "ink" pieces.
SyntheticDataset make_synthetic_dataset(int count, int resolution, std::uint64_t seed);

struct TrainOptions {
    int batch_size = 1;
    /// One caption per dataset image; empty trains without text.
    std::vector<std::string> captions;
    /// Probability of swapping a caption for the empty prompt.
    double caption_dropout = 0.2;
    int schedule_steps = 1000;
    ScheduleKind schedule = ScheduleKind::cosine;
    TrainingForward forward;
    std::function<void(int step, double loss)> on_step;
};

struct TrainResult {
    DenoiserState state;
    std::vector<double> loss_history;  // one entry per step
};

/// Plain SGD on the epsilon-prediction MSE with t drawn uniformly from the
/// training schedule. Throws DivergenceError on a non-finite loss.
TrainResult train_toy(const DenoiserState& state, const std::vector<ImageTensor>& dataset,
                      int steps, double lr, std::uint64_t seed, const TrainOptions& options = {});

}  // namespace crossart
