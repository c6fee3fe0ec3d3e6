#pragma once

#include <optional>

#include <Eigen/Dense>

namespace crossart {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Query/key/value projections, one token per row.
/// q: [m_q, d_k], k: [m_k, d_k], v: [m_k, d_h]; d_k and d_h divisible by heads.
struct AttentionProjections {
    Matrix q;
    Matrix k;
    Matrix v;
    int heads = 1;

    Eigen::Index key_dim() const { return q.cols(); }
    Eigen::Index value_dim() const { return v.cols(); }
};

/// Throws ShapeError unless the projection invariants hold.
void validate(const AttentionProjections& p);

/// Row-stochastic attention weights for one head: softmax(q k^T * scale + column_bias).
/// `column_bias` may be empty or hold one entry per key; -infinity masks a key.
Matrix attention_weights(const Matrix& q, const Matrix& k, double scale,
                         const Vector& column_bias = Vector());

/// Multi-head attention with an optional additive logit bias per key.
/// Each head uses the scale 1/sqrt(d_k / heads).
Matrix attend(const AttentionProjections& p, const Vector& column_bias = Vector());

/// softmax(Q K^T / sqrt(d)) V per head, heads concatenated along columns.
Matrix scaled_dot_attention(const AttentionProjections& p);

/// Which side of the pair ArtBN renormalizes.
enum class ArtBnDirection {
    /// Target queries/keys take the semantic statistics (literal reading of the formula).
    target_to_semantic,
    /// Semantic keys take the target statistics; target queries/keys are left raw.
    semantic_to_target,
};

struct StyleAlignOptions {
    /// Diagnostic switch; when false, queries and keys pass through unnormalized.
    bool normalize = true;
    ArtBnDirection direction = ArtBnDirection::target_to_semantic;
    double epsilon = 1e-5;
};

/// Inputs to shared attention. Semantic rows come first in the key/value stacks.
struct StyleAlignedSet {
    AttentionProjections target;
    std::optional<AttentionProjections> semantic;
    Matrix q_hat_t;
    Matrix k_hat_t;
    Matrix k_ts;
    Matrix v_ts;
    double semantic_scale = 1.0;

    Eigen::Index semantic_rows() const { return semantic ? semantic->k.rows() : 0; }
};

/// Normalizes target queries/keys (ArtBN against the semantic projections when
/// present, plain instance normalization otherwise) and stacks the shared keys
/// and values. Statistics run per feature column across tokens.
///
/// A semantic_scale of 0 masks the semantic keys; normalization then takes the
/// target-only path so the whole block reduces exactly to the no-semantic case.
StyleAlignedSet build_style_aligned(const AttentionProjections& target,
                                    const std::optional<AttentionProjections>& semantic,
                                    double semantic_scale,
                                    const StyleAlignOptions& options = {});

/// Z' = softmax(Q_hat K_ts^T / sqrt(d) + b) V_ts, b = ln(semantic_scale) on semantic keys.
Matrix shared_attention(const StyleAlignedSet& s);

struct FusedAttentionOutput {
    Matrix z_prime;
    Matrix text_branch;
    Matrix z_double_prime;
    double text_scale = 1.0;
};

/// Z'' = Z' + text_scale * softmax(Q_text K_text^T / sqrt(d)) V_text.
FusedAttentionOutput decoupled_cross_attention(const Matrix& z_prime,
                                               const AttentionProjections& text,
                                               double text_scale);

/// Per-column instance normalization of a token matrix (tokens are the spatial axis).
Matrix normalize_tokens(const Matrix& x, double epsilon);

/// Renormalizes the columns of x to the per-column statistics of style.
Matrix art_bn_tokens(const Matrix& x, const Matrix& style, double epsilon);

}  // namespace crossart
