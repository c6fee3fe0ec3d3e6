#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "crossart/attention.hpp"

namespace crossart::ad {

/// One value in the computation graph. `grad` is sized lazily on first use.
struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Node&)> backward;
    bool needs_grad = false;

    Matrix& grad_ref() {
        if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
        return grad;
    }
};

using Var = std::shared_ptr<Node>;

/// Reverse-mode tape. When not recording, nodes carry values only and are
/// released as soon as their handles go out of scope.
class Tape {
public:
    explicit Tape(bool record) : record_(record) {}

    bool recording() const noexcept { return record_; }

    Var constant(Matrix value);
    /// Leaf bound to parameters[offset, offset + rows * cols), column-major.
    Var parameter(std::span<const double> parameters, std::size_t offset, Eigen::Index rows,
                  Eigen::Index cols);
    /// Creates an interior node; `backward` is dropped when not recording or
    /// when no input needs a gradient.
    Var make(Matrix value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward);

    /// Seeds d(loss)/d(loss) = 1 and walks the tape backwards.
    void backward(const Var& loss);

    /// Adds every parameter gradient into `flat` (same layout as the parameters).
    void accumulate_parameter_grads(std::span<double> flat) const;

private:
    bool record_;
    std::vector<Var> nodes_;
    std::vector<std::pair<Var, std::size_t>> params_;
};

Var matmul(Tape& tape, const Var& a, const Var& b);
/// a * b^T without materializing the transpose in the graph.
Var matmul_nt(Tape& tape, const Var& a, const Var& b);
Var add(Tape& tape, const Var& a, const Var& b);
Var scale(Tape& tape, const Var& a, double s);
Var transpose(Tape& tape, const Var& a);
/// x [r, c] + b [r, 1] broadcast over columns.
Var add_col_bias(Tape& tape, const Var& x, const Var& b);
/// x [r, c] + b [1, c] broadcast over rows.
Var add_row_bias(Tape& tape, const Var& x, const Var& b);
Var silu(Tape& tape, const Var& x);
Var concat_rows(Tape& tape, const Var& a, const Var& b);

/// 3x3 convolution, zero padding 1, on a [C_in, H*W] map; weight [C_out, C_in*9]
/// indexed (ci * 9 + ky * 3 + kx); bias [C_out, 1].
Var conv3x3(Tape& tape, const Var& x, const Var& weight, const Var& bias, int height, int width);
Var avg_pool2(Tape& tape, const Var& x, int height, int width);
Var upsample2(Tape& tape, const Var& x, int height, int width);

/// Group normalization over [C, H*W] with affine gamma/beta [C, 1].
Var group_norm(Tape& tape, const Var& x, int groups, const Var& gamma, const Var& beta,
               double epsilon);
/// Per-column normalization over rows (tokens), population variance, no affine.
Var token_norm(Tape& tape, const Var& x, double epsilon);
/// Multi-head softmax attention on token-row matrices, scale 1/sqrt(d_k / heads).
Var multi_head_attention(Tape& tape, const Var& q, const Var& k, const Var& v, int heads);

/// Mean of squared differences, returned as a 1x1 node.
Var mse(Tape& tape, const Var& prediction, const Matrix& target);

}  // namespace crossart::ad
