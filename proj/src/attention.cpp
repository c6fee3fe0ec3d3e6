#include "crossart/attention.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "crossart/errors.hpp"
#include "crossart/stats.hpp"

namespace crossart {

namespace {

// Token matrix [m, d] viewed as a 1 x d x m x 1 tensor: columns are channels.
ImageTensor as_channel_tensor(const Matrix& x) {
    ImageTensor t(Dims{1, static_cast<int>(x.cols()), static_cast<int>(x.rows()), 1});
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        auto plane = t.plane(0, static_cast<int>(c));
        for (Eigen::Index r = 0; r < x.rows(); ++r) plane[r] = x(r, c);
    }
    return t;
}

Matrix from_channel_tensor(const ImageTensor& t) {
    const Dims& d = t.dims();
    Matrix x(d.h, d.c);
    for (int c = 0; c < d.c; ++c) {
        auto plane = t.plane(0, c);
        for (int r = 0; r < d.h; ++r) x(r, c) = plane[r];
    }
    return x;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

}  // namespace

void validate(const AttentionProjections& p) {
    require(p.heads >= 1, "attention: heads must be positive");
    require(p.q.cols() == p.k.cols(), "attention: query/key widths differ");
    require(p.k.rows() == p.v.rows(), "attention: key/value row counts differ");
    require(p.k.rows() >= 1 && p.q.rows() >= 1, "attention: empty projections");
    require(p.q.cols() % p.heads == 0 && p.v.cols() % p.heads == 0,
            "attention: widths not divisible by head count");
}

namespace {

// Softmax weights stored transposed, [keys, queries], so each query's
// distribution is a contiguous column of the column-major matrix.
Matrix weights_by_column(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& k,
                         double scale, const Vector& column_bias) {
    Matrix logits = (k * q.transpose()) * scale;
    if (column_bias.size() > 0) logits.colwise() += column_bias;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        auto col = logits.col(c);
        const double peak = col.maxCoeff();
        col = (col.array() - peak).exp();
        col /= col.sum();
    }
    return logits;
}

}  // namespace

Matrix attention_weights(const Matrix& q, const Matrix& k, double scale,
                         const Vector& column_bias) {
    return weights_by_column(q, k, scale, column_bias).transpose();
}

Matrix attend(const AttentionProjections& p, const Vector& column_bias) {
    validate(p);
    require(column_bias.size() == 0 || column_bias.size() == p.k.rows(),
            "attention: bias length differs from key count");
    const Eigen::Index dk = p.q.cols() / p.heads;
    const Eigen::Index dv = p.v.cols() / p.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    Matrix out(p.q.rows(), p.v.cols());
    for (int h = 0; h < p.heads; ++h) {
        const Matrix w = weights_by_column(p.q.middleCols(h * dk, dk), p.k.middleCols(h * dk, dk),
                                           scale, column_bias);
        out.middleCols(h * dv, dv).noalias() = w.transpose() * p.v.middleCols(h * dv, dv);
    }
    return out;
}

Matrix scaled_dot_attention(const AttentionProjections& p) { return attend(p); }

Matrix normalize_tokens(const Matrix& x, double epsilon) {
    return from_channel_tensor(instance_norm(as_channel_tensor(x), epsilon));
}

Matrix art_bn_tokens(const Matrix& x, const Matrix& style, double epsilon) {
    return from_channel_tensor(art_bn(as_channel_tensor(x), as_channel_tensor(style), epsilon));
}

StyleAlignedSet build_style_aligned(const AttentionProjections& target,
                                    const std::optional<AttentionProjections>& semantic,
                                    double semantic_scale, const StyleAlignOptions& options) {
    validate(target);
    if (!(semantic_scale >= 0.0 && semantic_scale <= 1.0)) {
        throw DomainError("semantic_scale must lie in [0, 1]");
    }
    if (semantic) {
        validate(*semantic);
        require(semantic->k.cols() == target.k.cols() && semantic->v.cols() == target.v.cols() &&
                    semantic->q.cols() == target.q.cols(),
                "style alignment: semantic and target widths differ");
        require(semantic->heads == target.heads, "style alignment: head counts differ");
    }

    StyleAlignedSet s;
    s.target = target;
    s.semantic = semantic;
    s.semantic_scale = semantic_scale;

    const bool use_semantic_stats = semantic.has_value() && semantic_scale > 0.0;
    Matrix k_semantic;
    if (semantic) k_semantic = semantic->k;

    if (!options.normalize) {
        s.q_hat_t = target.q;
        s.k_hat_t = target.k;
    } else if (!use_semantic_stats) {
        s.q_hat_t = normalize_tokens(target.q, options.epsilon);
        s.k_hat_t = normalize_tokens(target.k, options.epsilon);
    } else if (options.direction == ArtBnDirection::target_to_semantic) {
        s.q_hat_t = art_bn_tokens(target.q, semantic->q, options.epsilon);
        s.k_hat_t = art_bn_tokens(target.k, semantic->k, options.epsilon);
    } else {
        s.q_hat_t = target.q;
        s.k_hat_t = target.k;
        k_semantic = art_bn_tokens(semantic->k, target.k, options.epsilon);
    }

    if (semantic) {
        s.k_ts.resize(k_semantic.rows() + s.k_hat_t.rows(), s.k_hat_t.cols());
        s.k_ts << k_semantic, s.k_hat_t;
        s.v_ts.resize(semantic->v.rows() + target.v.rows(), target.v.cols());
        s.v_ts << semantic->v, target.v;
    } else {
        s.k_ts = s.k_hat_t;
        s.v_ts = target.v;
    }
    return s;
}

Matrix shared_attention(const StyleAlignedSet& s) {
    AttentionProjections p{s.q_hat_t, s.k_ts, s.v_ts, s.target.heads};
    const Eigen::Index ms = s.semantic_rows();
    if (ms == 0) return attend(p);
    Vector bias = Vector::Zero(p.k.rows());
    const double b = s.semantic_scale > 0.0 ? std::log(s.semantic_scale)
                                            : -std::numeric_limits<double>::infinity();
    bias.head(ms).setConstant(b);
    return attend(p, bias);
}

FusedAttentionOutput decoupled_cross_attention(const Matrix& z_prime,
                                               const AttentionProjections& text,
                                               double text_scale) {
    validate(text);
    require(z_prime.rows() == text.q.rows(), "cross attention: query rows differ from features");
    require(z_prime.cols() == text.v.cols(), "cross attention: value width differs from features");
    if (!(text_scale >= 0.0)) throw DomainError("text_scale must be non-negative");

    FusedAttentionOutput out;
    out.z_prime = z_prime;
    out.text_scale = text_scale;
    out.text_branch = attend(text);
    out.z_double_prime = z_prime;
    if (text_scale != 0.0) out.z_double_prime += text_scale * out.text_branch;
    return out;
}

}  // namespace crossart
