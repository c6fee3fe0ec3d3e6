// Command-line front end: generate, train, make-dataset, invert.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "crossart/checkpoint.hpp"
#include "crossart/errors.hpp"
#include "crossart/image_io.hpp"
#include "crossart/pipeline.hpp"
#include "crossart/training.hpp"

namespace fs = std::filesystem;
using namespace crossart;

namespace {

const char* const kConfigKeys[] = {
    "mode", "steps", "condition-scale", "semantic-scale", "text-scale", "resolution", "seed",
    "target-image-path", "semantic-image-path", "prompt", "checkpoint-path", "output-dir",
    "schedule", "fixed-point-iters", "normalize", "artbn-direction", "dump-trajectory",
};

int run_generate(const std::string& config_path, const std::map<std::string, CLI::Option*>& opts,
                 const std::map<std::string, std::string>& values) {
    PipelineConfig cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path);
    for (const auto& [key, opt] : opts) {
        if (opt->count() > 0) apply_config_value(cfg, key, values.at(key));
    }
    const RunRecord record = run_pipeline(cfg);
    const fs::path dir = resolve_output_dir(cfg.output_dir);
    std::cout << "wrote " << (dir / kOutputImageName).string() << " and "
              << (dir / kRunRecordName).string() << " in " << format_double(record.wall_ms)
              << " ms\n";
    return 0;
}

struct TrainArgs {
    int count = 256;
    int resolution = 32;
    int steps = 2000;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::uint64_t dataset_seed = 1;
    int batch_size = 1;
    bool no_captions = false;
    std::string checkpoint = "denoiser.ckpt";
    std::string loss_history;
    int log_every = 100;
};

int run_train(const TrainArgs& a) {
    const SyntheticDataset ds = make_synthetic_dataset(a.count, a.resolution, a.dataset_seed);
    std::vector<ImageTensor> images;
    for (const ImageTensor& img : ds.images) images.push_back(to_model_range(img));

    TrainOptions opts;
    opts.batch_size = a.batch_size;
    if (!a.no_captions) {
        for (StyleFamily f : ds.families) opts.captions.push_back(family_caption(f));
    }
    double window = 0.0;
    opts.on_step = [&](int step, double loss) {
        window += loss;
        if ((step + 1) % a.log_every == 0) {
            std::printf("step %5d  mean loss %.5f\n", step + 1, window / a.log_every);
            std::fflush(stdout);
            window = 0.0;
        }
    };
    const DenoiserState init = init_denoiser(DenoiserConfig{}, a.seed);
    const TrainResult result = train_toy(init, images, a.steps, a.lr, a.seed, opts);
    save_checkpoint(result.state, a.checkpoint);
    if (!a.loss_history.empty()) {
        std::ofstream out(a.loss_history);
        if (!out) throw IoError("cannot write " + a.loss_history);
        for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
            out << i << " " << format_double(result.loss_history[i]) << "\n";
        }
    }
    std::cout << "saved " << a.checkpoint << " (" << result.state.param_count() << " parameters)\n";
    return 0;
}

int run_make_dataset(int count, int resolution, std::uint64_t seed, const std::string& out_dir) {
    const fs::path dir = resolve_output_dir(out_dir);
    fs::create_directories(dir);
    const SyntheticDataset ds = make_synthetic_dataset(count, resolution, seed);
    std::ofstream labels(dir / "labels.txt");
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "art_%04zu.png", i);
        save_unit_image(ds.images[i], dir / name);
        labels << name << " " << to_string(ds.families[i]) << "\n";
    }
    std::cout << "wrote " << ds.images.size() << " images to " << dir.string() << "\n";
    return 0;
}

int run_invert(PipelineConfig cfg) {
    cfg.mode = Mode::variation;
    cfg.guidance.condition_scale = 1.0;
    const DenoiserState denoiser = load_checkpoint(cfg.checkpoint_path);
    const ImageTensor target = load_image(cfg.target_image_path, cfg.resolution);
    const GenerationResult gen = generate(cfg, denoiser, target, std::nullopt);
    const fs::path dir = resolve_output_dir(cfg.output_dir);
    fs::create_directories(dir);
    save_tensor(gen.z_T, dir / "z_T.bin", cfg.steps);
    if (cfg.dump_trajectory) {
        for (const LatentState& s : gen.inversion) {
            save_tensor(s.z, dir / ("inversion_" + std::to_string(s.t) + ".bin"), s.t);
        }
    }
    save_image(gen.output, dir / "reconstruction.png");
    std::printf("z_T rms %.6f, reconstruction mse %.3e\n",
                std::sqrt(gen.z_T.squared_norm() / gen.z_T.size()),
                mean_squared_error(gen.output, target));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-art-attention toy diffusion pipeline"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "Run one of the five application modes");
    std::string config_path;
    gen->add_option("--config", config_path, "key = value config file (flags override it)");
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> opts;
    for (const char* key : kConfigKeys) {
        values[key];
        opts[key] = gen->add_option(std::string("--") + key, values[key]);
    }

    auto* train = app.add_subcommand("train", "Train the toy denoiser on synthetic artworks");
    TrainArgs ta;
    train->add_option("--count", ta.count, "dataset size");
    train->add_option("--resolution", ta.resolution);
    train->add_option("--steps", ta.steps);
    train->add_option("--lr", ta.lr);
    train->add_option("--seed", ta.seed, "initialization and sampling seed");
    train->add_option("--dataset-seed", ta.dataset_seed);
    train->add_option("--batch-size", ta.batch_size);
    train->add_flag("--no-captions", ta.no_captions, "train without text conditioning");
    train->add_option("--checkpoint-path", ta.checkpoint);
    train->add_option("--loss-history", ta.loss_history, "write per-step losses here");
    train->add_option("--log-every", ta.log_every)->check(CLI::PositiveNumber);

    auto* mk = app.add_subcommand("make-dataset", "Write synthetic artworks as PNGs");
    int mk_count = 16;
    int mk_res = 64;
    std::uint64_t mk_seed = 1;
    std::string mk_out = "dataset";
    mk->add_option("--count", mk_count);
    mk->add_option("--resolution", mk_res);
    mk->add_option("--seed", mk_seed);
    mk->add_option("--output-dir", mk_out);

    auto* inv = app.add_subcommand("invert", "DDIM-invert an image and reconstruct it");
    std::string inv_config;
    std::map<std::string, std::string> inv_values;
    std::map<std::string, CLI::Option*> inv_opts;
    inv->add_option("--config", inv_config);
    for (const char* key : {"target-image-path", "checkpoint-path", "output-dir", "steps",
                            "resolution", "schedule", "fixed-point-iters", "dump-trajectory",
                            "text-scale", "seed"}) {
        inv_values[key];
        inv_opts[key] = inv->add_option(std::string("--") + key, inv_values[key]);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return run_generate(config_path, opts, values);
        if (*train) return run_train(ta);
        if (*mk) return run_make_dataset(mk_count, mk_res, mk_seed, mk_out);
        if (*inv) {
            PipelineConfig cfg;
            if (!inv_config.empty()) cfg = load_config_file(inv_config);
            for (const auto& [key, opt] : inv_opts) {
                if (opt->count() > 0) apply_config_value(cfg, key, inv_values.at(key));
            }
            return run_invert(cfg);
        }
    } catch (const crossart::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
