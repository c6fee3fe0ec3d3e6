#include "crossart/training.hpp"

#include <cmath>

#include "crossart/errors.hpp"
#include "crossart/rng.hpp"

namespace crossart {

TrainResult train_toy(const DenoiserState& state, const std::vector<ImageTensor>& dataset,
                      int steps, double lr, std::uint64_t seed, const TrainOptions& options) {
    if (steps < 0) throw DomainError("steps must be non-negative");
    TrainResult result{state, {}};
    if (steps == 0) return result;
    if (dataset.empty()) throw DomainError("training needs a non-empty dataset");
    for (const ImageTensor& img : dataset) {
        if (img.dims() != dataset.front().dims() || img.dims().n != 1) {
            throw ShapeError("training images must share 1 x C x H x W dims");
        }
    }
    if (!options.captions.empty() && options.captions.size() != dataset.size()) {
        throw ConfigError("caption count differs from dataset size");
    }
    if (options.batch_size < 1) throw DomainError("batch_size must be positive");

    const NoiseSchedule sched = make_schedule(options.schedule_steps, options.schedule);
    std::vector<TextEmbedding> caption_embeddings;
    std::optional<TextEmbedding> empty_prompt;
    if (!options.captions.empty()) {
        const TextEncoder encoder(state.config.text_seed, state.config.text_width);
        for (const std::string& c : options.captions) caption_embeddings.push_back(encoder.encode(c));
        empty_prompt = encoder.encode(std::string_view{});
    }

    Rng rng(seed);
    std::vector<double> grad(state.param_count());
    result.loss_history.reserve(static_cast<std::size_t>(steps));
    for (int step = 0; step < steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (int b = 0; b < options.batch_size; ++b) {
            const std::size_t idx = rng.below(dataset.size());
            const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps)));
            TrainingExample ex{dataset[idx], gaussian_tensor(dataset[idx].dims(), rng),
                               sched.alpha_bar[static_cast<std::size_t>(t)], std::nullopt};
            if (!caption_embeddings.empty()) {
                ex.text = rng.uniform() < options.caption_dropout ? *empty_prompt
                                                                   : caption_embeddings[idx];
            }
            loss += loss_and_gradient(result.state, ex, grad, options.forward);
        }
        loss /= options.batch_size;
        if (!std::isfinite(loss)) {
            throw DivergenceError(static_cast<std::size_t>(step),
                                  "training diverged at step " + std::to_string(step));
        }
        const double step_size = lr / options.batch_size;
        for (std::size_t i = 0; i < grad.size(); ++i) result.state.parameters[i] -= step_size * grad[i];
        result.loss_history.push_back(loss);
        if (options.on_step) options.on_step(step, loss);
    }
    return result;
}

}  // namespace crossart
