#include "crossart/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "crossart/autograd.hpp"
#include "crossart/errors.hpp"
#include "crossart/rng.hpp"

namespace crossart {

namespace {

struct Block {
    std::size_t offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
};

struct ResParams {
    int cin = 0;
    int cout = 0;
    Block gn1_g, gn1_b, conv1_w, conv1_b, temb_w, temb_b, gn2_g, gn2_b, conv2_w, conv2_b;
    std::optional<Block> skip_w, skip_b;
};

struct AttnParams {
    int channels = 0;
    Block gn_g, gn_b, wq, wk, wv, wo, bo, tq, tk, tv;
};

struct Layout {
    Block temb1_w, temb1_b, temb2_w, temb2_b, conv_in_w, conv_in_b;
    std::vector<ResParams> down_res;
    std::vector<std::optional<AttnParams>> down_attn;
    ResParams mid1, mid2;
    std::optional<AttnParams> mid_attn1, mid_attn2;
    std::vector<ResParams> up_res;  // indexed by level
    std::vector<std::optional<AttnParams>> up_attn;
    Block out_gn_g, out_gn_b, out_w, out_b;
    std::vector<ParamEntry> table;
    std::size_t total = 0;
};

class LayoutBuilder {
public:
    Block add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        Block b{total_, rows, cols};
        table_.push_back(ParamEntry{name, total_, rows, cols});
        total_ += static_cast<std::size_t>(rows * cols);
        return b;
    }

    ResParams res(const std::string& name, int cin, int cout, int temb) {
        ResParams r;
        r.cin = cin;
        r.cout = cout;
        r.gn1_g = add(name + ".gn1.gamma", cin, 1);
        r.gn1_b = add(name + ".gn1.beta", cin, 1);
        r.conv1_w = add(name + ".conv1.weight", cout, cin * 9);
        r.conv1_b = add(name + ".conv1.bias", cout, 1);
        r.temb_w = add(name + ".temb.weight", cout, temb);
        r.temb_b = add(name + ".temb.bias", cout, 1);
        r.gn2_g = add(name + ".gn2.gamma", cout, 1);
        r.gn2_b = add(name + ".gn2.beta", cout, 1);
        r.conv2_w = add(name + ".conv2.weight", cout, cout * 9);
        r.conv2_b = add(name + ".conv2.bias", cout, 1);
        if (cin != cout) {
            r.skip_w = add(name + ".skip.weight", cout, cin);
            r.skip_b = add(name + ".skip.bias", cout, 1);
        }
        return r;
    }

    AttnParams attn(const std::string& name, int channels, int text_width) {
        AttnParams a;
        a.channels = channels;
        a.gn_g = add(name + ".gn.gamma", channels, 1);
        a.gn_b = add(name + ".gn.beta", channels, 1);
        a.wq = add(name + ".to_q", channels, channels);
        a.wk = add(name + ".to_k", channels, channels);
        a.wv = add(name + ".to_v", channels, channels);
        a.wo = add(name + ".to_out.weight", channels, channels);
        a.bo = add(name + ".to_out.bias", 1, channels);
        a.tq = add(name + ".text.to_q", channels, channels);
        a.tk = add(name + ".text.to_k", text_width, channels);
        a.tv = add(name + ".text.to_v", text_width, channels);
        return a;
    }

    std::vector<ParamEntry> table() const { return table_; }
    std::size_t total() const { return total_; }

private:
    std::vector<ParamEntry> table_;
    std::size_t total_ = 0;
};

Layout build_layout(const DenoiserConfig& cfg) {
    cfg.validate();
    LayoutBuilder b;
    Layout L;
    const int te = cfg.time_embed_dim;
    L.temb1_w = b.add("time.fc1.weight", te, te);
    L.temb1_b = b.add("time.fc1.bias", te, 1);
    L.temb2_w = b.add("time.fc2.weight", te, te);
    L.temb2_b = b.add("time.fc2.bias", te, 1);
    L.conv_in_w = b.add("conv_in.weight", cfg.base_channels, cfg.in_channels * 9);
    L.conv_in_b = b.add("conv_in.bias", cfg.base_channels, 1);

    int cur = cfg.base_channels;
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string name = "down" + std::to_string(l);
        L.down_res.push_back(b.res(name + ".res", cur, cfg.channels_at(l), te));
        cur = cfg.channels_at(l);
        if (cfg.has_attention(l)) {
            L.down_attn.emplace_back(b.attn(name + ".attn", cur, cfg.text_width));
        } else {
            L.down_attn.emplace_back();
        }
    }
    const int mid = cfg.channels_at(cfg.depth);
    L.mid1 = b.res("mid.res1", cur, mid, te);
    if (cfg.has_attention(cfg.depth)) L.mid_attn1 = b.attn("mid.attn1", mid, cfg.text_width);
    L.mid2 = b.res("mid.res2", mid, mid, te);
    if (cfg.has_attention(cfg.depth)) L.mid_attn2 = b.attn("mid.attn2", mid, cfg.text_width);
    cur = mid;

    L.up_res.resize(static_cast<std::size_t>(cfg.depth));
    L.up_attn.resize(static_cast<std::size_t>(cfg.depth));
    for (int l = cfg.depth - 1; l >= 0; --l) {
        const std::string name = "up" + std::to_string(l);
        L.up_res[l] = b.res(name + ".res", cur + cfg.channels_at(l), cfg.channels_at(l), te);
        cur = cfg.channels_at(l);
        if (cfg.has_attention(l)) L.up_attn[l] = b.attn(name + ".attn", cur, cfg.text_width);
    }
    L.out_gn_g = b.add("out.gn.gamma", cur, 1);
    L.out_gn_b = b.add("out.gn.beta", cur, 1);
    L.out_w = b.add("out.conv.weight", cfg.in_channels, cur * 9);
    L.out_b = b.add("out.conv.bias", cfg.in_channels, 1);
    L.table = b.table();
    L.total = b.total();
    return L;
}

constexpr double kNormEpsilon = 1e-5;

using AttentionHook =
    std::function<ad::Var(ad::Tape&, int layer, const ad::Var& tokens, const AttnParams&)>;

class UNet {
public:
    UNet(const DenoiserState& state, ad::Tape& tape)
        : cfg_(state.config), layout_(build_layout(state.config)), params_(state.parameters),
          tape_(tape) {
        if (params_.size() != layout_.total) {
            throw ShapeError("denoiser parameter count does not match its configuration");
        }
    }

    ad::Var param(const Block& b) { return tape_.parameter(params_, b.offset, b.rows, b.cols); }

    // x: [C, H*W] for one sample.
    ad::Var forward(const ad::Var& x, int height, int width, double alpha_bar,
                    const AttentionHook& hook) {
        using namespace ad;
        layer_ = 0;
        temb_ = time_embedding(alpha_bar);

        Var h = conv3x3(tape_, x, param(layout_.conv_in_w), param(layout_.conv_in_b), height, width);
        std::vector<Var> skips;
        std::vector<std::pair<int, int>> sizes;
        int hh = height;
        int ww = width;
        for (int l = 0; l < cfg_.depth; ++l) {
            h = res_block(h, layout_.down_res[l], hh, ww);
            if (layout_.down_attn[l]) h = attn_block(h, *layout_.down_attn[l], hook);
            skips.push_back(h);
            sizes.emplace_back(hh, ww);
            h = avg_pool2(tape_, h, hh, ww);
            hh /= 2;
            ww /= 2;
        }
        h = res_block(h, layout_.mid1, hh, ww);
        if (layout_.mid_attn1) h = attn_block(h, *layout_.mid_attn1, hook);
        h = res_block(h, layout_.mid2, hh, ww);
        if (layout_.mid_attn2) h = attn_block(h, *layout_.mid_attn2, hook);
        for (int l = cfg_.depth - 1; l >= 0; --l) {
            h = upsample2(tape_, h, hh, ww);
            hh *= 2;
            ww *= 2;
            h = concat_rows(tape_, h, skips[l]);
            h = res_block(h, layout_.up_res[l], hh, ww);
            if (layout_.up_attn[l]) h = attn_block(h, *layout_.up_attn[l], hook);
        }
        h = silu(tape_, group_norm(tape_, h, cfg_.groups, param(layout_.out_gn_g),
                                   param(layout_.out_gn_b), kNormEpsilon));
        return conv3x3(tape_, h, param(layout_.out_w), param(layout_.out_b), hh, ww);
    }

    std::span<const double> parameters() const { return params_; }

private:
    ad::Var time_embedding(double alpha_bar) {
        using namespace ad;
        const int dim = cfg_.time_embed_dim;
        const int half = dim / 2;
        const double v = noise_level_feature(alpha_bar);
        Matrix e(dim, 1);
        for (int j = 0; j < half; ++j) {
            const double f = std::exp(-std::log(10000.0) * j / static_cast<double>(half));
            e(j, 0) = std::sin(v * f);
            e(half + j, 0) = std::cos(v * f);
        }
        if (dim % 2 == 1) e(dim - 1, 0) = 0.0;
        Var t = tape_.constant(std::move(e));
        t = add(tape_, matmul(tape_, param(layout_.temb1_w), t), param(layout_.temb1_b));
        t = silu(tape_, t);
        return add(tape_, matmul(tape_, param(layout_.temb2_w), t), param(layout_.temb2_b));
    }

    ad::Var res_block(const ad::Var& x, const ResParams& p, int height, int width) {
        using namespace ad;
        Var h = silu(tape_, group_norm(tape_, x, cfg_.groups, param(p.gn1_g), param(p.gn1_b),
                                       kNormEpsilon));
        h = conv3x3(tape_, h, param(p.conv1_w), param(p.conv1_b), height, width);
        Var t = add(tape_, matmul(tape_, param(p.temb_w), silu(tape_, temb_)), param(p.temb_b));
        h = add_col_bias(tape_, h, t);
        h = silu(tape_, group_norm(tape_, h, cfg_.groups, param(p.gn2_g), param(p.gn2_b),
                                   kNormEpsilon));
        h = conv3x3(tape_, h, param(p.conv2_w), param(p.conv2_b), height, width);
        Var skip = x;
        if (p.skip_w) {
            skip = add_col_bias(tape_, matmul(tape_, param(*p.skip_w), x), param(*p.skip_b));
        }
        return add(tape_, h, skip);
    }

    ad::Var attn_block(const ad::Var& x, const AttnParams& p, const AttentionHook& hook) {
        using namespace ad;
        Var h = group_norm(tape_, x, cfg_.groups, param(p.gn_g), param(p.gn_b), kNormEpsilon);
        Var tokens = transpose(tape_, h);
        Var fused = hook(tape_, layer_++, tokens, p);
        Var out = add_row_bias(tape_, matmul(tape_, fused, param(p.wo)), param(p.bo));
        return add(tape_, x, transpose(tape_, out));
    }

    const DenoiserConfig& cfg_;
    Layout layout_;
    std::span<const double> params_;
    ad::Tape& tape_;
    ad::Var temb_;
    int layer_ = 0;
};

Matrix sample_to_matrix(const ImageTensor& z, int n) {
    const Dims& d = z.dims();
    const double* base = z.values().data() + static_cast<std::size_t>(n) * d.c * d.plane();
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(base, d.c, static_cast<Eigen::Index>(d.plane()));
}

void matrix_to_sample(const Matrix& m, ImageTensor& z, int n) {
    const Dims& d = z.dims();
    double* base = z.values().data() + static_cast<std::size_t>(n) * d.c * d.plane();
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<RowMajor>(base, d.c, static_cast<Eigen::Index>(d.plane())) = m;
}

void check_input(const DenoiserState& state, const ImageTensor& z) {
    const Dims& d = z.dims();
    const int div = 1 << state.config.depth;
    if (d.c != state.config.in_channels) throw ShapeError("denoiser: channel count mismatch");
    if (d.h % div != 0 || d.w % div != 0) {
        throw ShapeError("denoiser: resolution " + d.str() + " not divisible by 2^depth");
    }
    if (!(std::isfinite(z.values()[0]) && z.all_finite())) {
        throw NonFiniteError("denoiser: non-finite latent");
    }
}

struct Projections {
    Matrix q, k, v;
};

Projections project(const Matrix& tokens, std::span<const double> params, const AttnParams& p) {
    auto w = [&](const Block& b) {
        return Eigen::Map<const Matrix>(params.data() + b.offset, b.rows, b.cols);
    };
    return Projections{tokens * w(p.wq), tokens * w(p.wk), tokens * w(p.wv)};
}

std::optional<AttentionProjections> text_projections(const Matrix& tokens,
                                                     std::span<const double> params,
                                                     const AttnParams& p,
                                                     const std::optional<TextEmbedding>& text,
                                                     int heads) {
    if (!text) return std::nullopt;
    auto w = [&](const Block& b) {
        return Eigen::Map<const Matrix>(params.data() + b.offset, b.rows, b.cols);
    };
    if (text->embedding.cols() != p.tk.rows) {
        throw ContextError("text embedding width does not match the denoiser");
    }
    return AttentionProjections{tokens * w(p.tq), text->embedding * w(p.tk),
                                text->embedding * w(p.tv), heads};
}

// Inference hook: shared attention followed by decoupled text cross-attention.
AttentionHook cross_art_hook(std::span<const double> params, const DenoiserConfig& cfg,
                             const CrossArtContext& ctx, SemanticCache* recorder) {
    return [params, &cfg, &ctx, recorder](ad::Tape& tape, int layer, const ad::Var& tokens,
                                          const AttnParams& p) {
        Projections pr = project(tokens->value, params, p);
        AttentionProjections target{std::move(pr.q), std::move(pr.k), std::move(pr.v), cfg.heads};
        if (recorder) recorder->layers.push_back(target);

        std::optional<AttentionProjections> semantic;
        if (ctx.semantic && !recorder) {
            const AttentionProjections& s = ctx.semantic->layers.at(static_cast<std::size_t>(layer));
            if (s.k.cols() != target.k.cols() || s.k.rows() != target.k.rows()) {
                throw ContextError("semantic cache layer " + std::to_string(layer) +
                                   " does not match the target pass");
            }
            semantic = s;
        }
        const StyleAlignedSet set =
            build_style_aligned(target, semantic, ctx.guidance.semantic_scale, ctx.align);
        Matrix z_prime = shared_attention(set);
        auto text = text_projections(tokens->value, params, p, ctx.text, cfg.heads);
        if (!text) return tape.constant(std::move(z_prime));
        FusedAttentionOutput fused =
            decoupled_cross_attention(z_prime, *text, ctx.guidance.text_scale);
        return tape.constant(std::move(fused.z_double_prime));
    };
}

// Differentiable hook: target-only path (optional token normalization) plus text branch.
AttentionHook training_hook(const DenoiserConfig& cfg, UNet& net,
                            const std::optional<TextEmbedding>& text,
                            const TrainingForward& options) {
    return [&cfg, &net, &text, options](ad::Tape& tape, int, const ad::Var& tokens,
                                        const AttnParams& p) {
        using namespace ad;
        Var q = matmul(tape, tokens, net.param(p.wq));
        Var k = matmul(tape, tokens, net.param(p.wk));
        Var v = matmul(tape, tokens, net.param(p.wv));
        if (options.normalize) {
            q = token_norm(tape, q, options.epsilon);
            k = token_norm(tape, k, options.epsilon);
        }
        Var z = multi_head_attention(tape, q, k, v, cfg.heads);
        if (!text || options.text_scale == 0.0) return z;
        if (text->embedding.cols() != p.tk.rows) {
            throw ContextError("text embedding width does not match the denoiser");
        }
        Var e = tape.constant(text->embedding);
        Var tq = matmul(tape, tokens, net.param(p.tq));
        Var tk = matmul(tape, e, net.param(p.tk));
        Var tv = matmul(tape, e, net.param(p.tv));
        Var branch = multi_head_attention(tape, tq, tk, tv, cfg.heads);
        return add(tape, z, scale(tape, branch, options.text_scale));
    };
}

ImageTensor run_inference(const DenoiserState& state, const ImageTensor& z, double alpha_bar,
                          const std::function<AttentionHook(UNet&)>& make_hook) {
    check_input(state, z);
    const Dims& d = z.dims();
    ImageTensor out(d);
    for (int n = 0; n < d.n; ++n) {
        ad::Tape tape(false);
        UNet net(state, tape);
        const AttentionHook hook = make_hook(net);
        ad::Var y = net.forward(tape.constant(sample_to_matrix(z, n)), d.h, d.w, alpha_bar, hook);
        matrix_to_sample(y->value, out, n);
    }
    return out;
}

}  // namespace

void DenoiserConfig::validate() const {
    if (in_channels < 1 || base_channels < 1 || depth < 1 || heads < 1 || time_embed_dim < 2 ||
        groups < 1 || text_width < 1) {
        throw ConfigError("denoiser config: sizes must be positive (depth >= 1)");
    }
    if (base_channels % groups != 0) throw ConfigError("base_channels must be divisible by groups");
    if (base_channels % heads != 0) throw ConfigError("base_channels must be divisible by heads");
    for (int l : attn_levels) {
        if (l < 0 || l > depth) throw ConfigError("attention level outside [0, depth]");
    }
}

bool DenoiserConfig::has_attention(int level) const {
    return std::find(attn_levels.begin(), attn_levels.end(), level) != attn_levels.end();
}

std::size_t parameter_count(const DenoiserConfig& config) { return build_layout(config).total; }

int attention_layer_count(const DenoiserConfig& config) {
    config.validate();
    int count = 0;
    for (int l = 0; l < config.depth; ++l) count += config.has_attention(l) ? 2 : 0;
    if (config.has_attention(config.depth)) count += 2;
    return count;
}

std::vector<ParamEntry> parameter_table(const DenoiserConfig& config) {
    return build_layout(config).table;
}

DenoiserState init_denoiser(const DenoiserConfig& config, std::uint64_t seed) {
    const Layout layout = build_layout(config);
    DenoiserState state;
    state.config = config;
    state.seed = seed;
    state.parameters.assign(layout.total, 0.0);
    Rng rng(seed);
    for (const ParamEntry& e : layout.table) {
        const auto ends_with = [&](std::string_view s) {
            return e.name.size() >= s.size() && e.name.compare(e.name.size() - s.size(), s.size(), s) == 0;
        };
        double* p = state.parameters.data() + e.offset;
        const std::size_t n = static_cast<std::size_t>(e.rows * e.cols);
        if (ends_with("gamma")) {
            std::fill(p, p + n, 1.0);
        } else if (ends_with("beta") || ends_with("bias")) {
            std::fill(p, p + n, 0.0);
        } else {
            // to_q/to_k/... are stored [in, out]; everything else [out, in].
            const bool in_rows = e.name.find(".to_") != std::string::npos;
            const double fan_in = static_cast<double>(in_rows ? e.rows : e.cols);
            double gain = 1.0 / std::sqrt(fan_in);
            if (e.name.rfind("out.conv", 0) == 0 || ends_with("to_out.weight")) gain *= 0.1;
            for (std::size_t i = 0; i < n; ++i) p[i] = rng.normal() * gain;
        }
    }
    return state;
}

double noise_level_feature(double alpha_bar) {
    const double a = std::clamp(alpha_bar, 1e-12, 1.0 - 1e-12);
    const double log_snr = std::log(a / (1.0 - a));
    return 500.0 + 40.0 * log_snr;
}

ImageTensor denoise(const DenoiserState& state, const ImageTensor& z_t, double alpha_bar,
                    const CrossArtContext& ctx) {
    ctx.guidance.validate();
    if (ctx.semantic) {
        if (static_cast<int>(ctx.semantic->layers.size()) != attention_layer_count(state.config)) {
            throw ContextError("semantic cache layer count differs from the denoiser's");
        }
        const Dims& s = ctx.semantic->source;
        if (s.h != z_t.dims().h || s.w != z_t.dims().w || s.c != z_t.dims().c) {
            throw ContextError("semantic cache recorded at " + s.str() + ", target is " +
                               z_t.dims().str());
        }
    }
    return run_inference(state, z_t, alpha_bar, [&](UNet& net) {
        return cross_art_hook(net.parameters(), state.config, ctx, nullptr);
    });
}

SemanticCache record_semantic_pass(const DenoiserState& state, const ImageTensor& semantic_z_t,
                                   double alpha_bar, const CrossArtContext& ctx_minimal) {
    if (semantic_z_t.dims().n != 1) throw ShapeError("semantic pass expects a single sample");
    SemanticCache cache;
    cache.source = semantic_z_t.dims();
    CrossArtContext minimal = ctx_minimal;
    minimal.semantic.reset();
    run_inference(state, semantic_z_t, alpha_bar, [&](UNet& net) {
        return cross_art_hook(net.parameters(), state.config, minimal, &cache);
    });
    return cache;
}

ImageTensor denoise_plain(const DenoiserState& state, const ImageTensor& z_t, double alpha_bar) {
    return run_inference(state, z_t, alpha_bar, [&](UNet&) -> AttentionHook {
        const DenoiserConfig& cfg = state.config;
        std::span<const double> params = state.parameters;
        return [&cfg, params](ad::Tape& tape, int, const ad::Var& tokens, const AttnParams& p) {
            Projections pr = project(tokens->value, params, p);
            return tape.constant(
                scaled_dot_attention(AttentionProjections{pr.q, pr.k, pr.v, cfg.heads}));
        };
    });
}

ImageTensor denoise_training_path(const DenoiserState& state, const ImageTensor& z_t,
                                  double alpha_bar, const std::optional<TextEmbedding>& text,
                                  const TrainingForward& options) {
    return run_inference(state, z_t, alpha_bar, [&](UNet& net) {
        return training_hook(state.config, net, text, options);
    });
}

double loss_and_gradient(const DenoiserState& state, const TrainingExample& example,
                         std::span<double> grad, const TrainingForward& options) {
    require_same_dims(example.x0, example.eps, "loss_and_gradient");
    if (example.x0.dims().n != 1) throw ShapeError("training example must hold one sample");
    if (!grad.empty() && grad.size() != state.param_count()) {
        throw ShapeError("gradient buffer size differs from parameter count");
    }
    const Dims& d = example.x0.dims();
    const double a = example.alpha_bar;
    const Matrix x0 = sample_to_matrix(example.x0, 0);
    const Matrix eps = sample_to_matrix(example.eps, 0);
    const Matrix xt = std::sqrt(a) * x0 + std::sqrt(1.0 - a) * eps;

    ad::Tape tape(!grad.empty());
    UNet net(state, tape);
    const AttentionHook hook = training_hook(state.config, net, example.text, options);
    ad::Var pred = net.forward(tape.constant(xt), d.h, d.w, a, hook);
    ad::Var loss = ad::mse(tape, pred, eps);
    if (!grad.empty()) {
        tape.backward(loss);
        tape.accumulate_parameter_grads(grad);
    }
    return loss->value(0, 0);
}

}  // namespace crossart
