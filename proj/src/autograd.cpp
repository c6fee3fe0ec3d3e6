#include "crossart/autograd.hpp"

#include <cmath>

#include "crossart/errors.hpp"

namespace crossart::ad {

Var Tape::constant(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

Var Tape::parameter(std::span<const double> parameters, std::size_t offset, Eigen::Index rows,
                    Eigen::Index cols) {
    auto n = std::make_shared<Node>();
    n->value = Eigen::Map<const Matrix>(parameters.data() + offset, rows, cols);
    n->needs_grad = record_;
    if (record_) params_.emplace_back(n, offset);
    return n;
}

Var Tape::make(Matrix value, std::initializer_list<Var> inputs,
               std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (record_) {
        for (const Var& in : inputs) n->needs_grad = n->needs_grad || in->needs_grad;
        if (n->needs_grad) {
            n->backward = std::move(backward);
            nodes_.push_back(n);
        }
    }
    return n;
}

void Tape::backward(const Var& loss) {
    if (!record_) throw Error("backward on a non-recording tape");
    if (loss->value.size() != 1) throw ShapeError("backward expects a scalar loss");
    loss->grad_ref()(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.grad.size() != 0 && n.backward) n.backward(n);
    }
}

void Tape::accumulate_parameter_grads(std::span<double> flat) const {
    for (const auto& [node, offset] : params_) {
        if (node->grad.size() == 0) continue;
        Eigen::Map<Matrix>(flat.data() + offset, node->value.rows(), node->value.cols()) +=
            node->grad;
    }
}

Var matmul(Tape& tape, const Var& a, const Var& b) {
    Matrix out = a->value * b->value;
    return tape.make(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->needs_grad) a->grad_ref().noalias() += self.grad * b->value.transpose();
        if (b->needs_grad) b->grad_ref().noalias() += a->value.transpose() * self.grad;
    });
}

Var matmul_nt(Tape& tape, const Var& a, const Var& b) {
    Matrix out = a->value * b->value.transpose();
    return tape.make(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->needs_grad) a->grad_ref().noalias() += self.grad * b->value;
        if (b->needs_grad) b->grad_ref().noalias() += self.grad.transpose() * a->value;
    });
}

Var add(Tape& tape, const Var& a, const Var& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols()) {
        throw ShapeError("ad::add: shape mismatch");
    }
    Matrix out = a->value + b->value;
    return tape.make(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->needs_grad) a->grad_ref() += self.grad;
        if (b->needs_grad) b->grad_ref() += self.grad;
    });
}

Var scale(Tape& tape, const Var& a, double s) {
    Matrix out = a->value * s;
    return tape.make(std::move(out), {a}, [a, s](Node& self) {
        if (a->needs_grad) a->grad_ref() += s * self.grad;
    });
}

Var transpose(Tape& tape, const Var& a) {
    Matrix out = a->value.transpose();
    return tape.make(std::move(out), {a}, [a](Node& self) {
        if (a->needs_grad) a->grad_ref() += self.grad.transpose();
    });
}

Var add_col_bias(Tape& tape, const Var& x, const Var& b) {
    if (b->value.cols() != 1 || b->value.rows() != x->value.rows()) {
        throw ShapeError("ad::add_col_bias: bias must be [rows, 1]");
    }
    Matrix out = x->value;
    out.colwise() += b->value.col(0);
    return tape.make(std::move(out), {x, b}, [x, b](Node& self) {
        if (x->needs_grad) x->grad_ref() += self.grad;
        if (b->needs_grad) b->grad_ref() += self.grad.rowwise().sum();
    });
}

Var add_row_bias(Tape& tape, const Var& x, const Var& b) {
    if (b->value.rows() != 1 || b->value.cols() != x->value.cols()) {
        throw ShapeError("ad::add_row_bias: bias must be [1, cols]");
    }
    Matrix out = x->value;
    out.rowwise() += b->value.row(0);
    return tape.make(std::move(out), {x, b}, [x, b](Node& self) {
        if (x->needs_grad) x->grad_ref() += self.grad;
        if (b->needs_grad) b->grad_ref() += self.grad.colwise().sum();
    });
}

Var silu(Tape& tape, const Var& x) {
    const auto sig = (1.0 / (1.0 + (-x->value.array()).exp())).eval();
    Matrix out = (x->value.array() * sig).matrix();
    return tape.make(std::move(out), {x}, [x, sig](Node& self) {
        if (!x->needs_grad) return;
        x->grad_ref().array() +=
            self.grad.array() * (sig * (1.0 + x->value.array() * (1.0 - sig)));
    });
}

Var concat_rows(Tape& tape, const Var& a, const Var& b) {
    if (a->value.cols() != b->value.cols()) throw ShapeError("ad::concat_rows: column mismatch");
    Matrix out(a->value.rows() + b->value.rows(), a->value.cols());
    out << a->value, b->value;
    return tape.make(std::move(out), {a, b}, [a, b](Node& self) {
        const Eigen::Index ra = a->value.rows();
        if (a->needs_grad) a->grad_ref() += self.grad.topRows(ra);
        if (b->needs_grad) b->grad_ref() += self.grad.bottomRows(b->value.rows());
    });
}

namespace {

// cols[(ci*9 + ky*3 + kx), y*W + x] = in[ci, (y+ky-1)*W + (x+kx-1)], zero outside.
Matrix im2col(const Matrix& in, int height, int width) {
    const Eigen::Index channels = in.rows();
    Matrix cols = Matrix::Zero(channels * 9, static_cast<Eigen::Index>(height) * width);
    for (Eigen::Index ci = 0; ci < channels; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const Eigen::Index row = ci * 9 + ky * 3 + kx;
                for (int y = 0; y < height; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= height) continue;
                    const int x_lo = std::max(0, 1 - kx);
                    const int x_hi = std::min(width, width + 1 - kx);
                    for (int x = x_lo; x < x_hi; ++x) {
                        cols(row, y * width + x) = in(ci, sy * width + x + kx - 1);
                    }
                }
            }
        }
    }
    return cols;
}

void col2im_add(const Matrix& cols, Matrix& out, int height, int width) {
    const Eigen::Index channels = out.rows();
    for (Eigen::Index ci = 0; ci < channels; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const Eigen::Index row = ci * 9 + ky * 3 + kx;
                for (int y = 0; y < height; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= height) continue;
                    const int x_lo = std::max(0, 1 - kx);
                    const int x_hi = std::min(width, width + 1 - kx);
                    for (int x = x_lo; x < x_hi; ++x) {
                        out(ci, sy * width + x + kx - 1) += cols(row, y * width + x);
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv3x3(Tape& tape, const Var& x, const Var& weight, const Var& bias, int height, int width) {
    if (x->value.cols() != static_cast<Eigen::Index>(height) * width) {
        throw ShapeError("ad::conv3x3: feature map size mismatch");
    }
    if (weight->value.cols() != x->value.rows() * 9) {
        throw ShapeError("ad::conv3x3: weight/input channel mismatch");
    }
    Matrix cols = im2col(x->value, height, width);
    Matrix out = weight->value * cols;
    out.colwise() += bias->value.col(0);
    const bool keep = tape.recording();
    return tape.make(std::move(out), {x, weight, bias},
                     [x, weight, bias, height, width,
                      cols = keep ? std::move(cols) : Matrix()](Node& self) {
                         if (weight->needs_grad)
                             weight->grad_ref().noalias() += self.grad * cols.transpose();
                         if (bias->needs_grad) bias->grad_ref() += self.grad.rowwise().sum();
                         if (x->needs_grad) {
                             const Matrix dcols = weight->value.transpose() * self.grad;
                             col2im_add(dcols, x->grad_ref(), height, width);
                         }
                     });
}

Var avg_pool2(Tape& tape, const Var& x, int height, int width) {
    if (height % 2 != 0 || width % 2 != 0) throw ShapeError("ad::avg_pool2: odd extent");
    const int oh = height / 2;
    const int ow = width / 2;
    const Eigen::Index channels = x->value.rows();
    Matrix out(channels, oh * ow);
    for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
            const int i00 = (2 * y) * width + 2 * xx;
            out.col(y * ow + xx) = 0.25 * (x->value.col(i00) + x->value.col(i00 + 1) +
                                           x->value.col(i00 + width) + x->value.col(i00 + width + 1));
        }
    }
    return tape.make(std::move(out), {x}, [x, oh, ow, width](Node& self) {
        if (!x->needs_grad) return;
        Matrix& g = x->grad_ref();
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                const int i00 = (2 * y) * width + 2 * xx;
                const auto gc = (0.25 * self.grad.col(y * ow + xx)).eval();
                g.col(i00) += gc;
                g.col(i00 + 1) += gc;
                g.col(i00 + width) += gc;
                g.col(i00 + width + 1) += gc;
            }
        }
    });
}

Var upsample2(Tape& tape, const Var& x, int height, int width) {
    const int oh = height * 2;
    const int ow = width * 2;
    Matrix out(x->value.rows(), oh * ow);
    for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) out.col(y * ow + xx) = x->value.col((y / 2) * width + xx / 2);
    return tape.make(std::move(out), {x}, [x, oh, ow, width](Node& self) {
        if (!x->needs_grad) return;
        Matrix& g = x->grad_ref();
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) g.col((y / 2) * width + xx / 2) += self.grad.col(y * ow + xx);
    });
}

Var group_norm(Tape& tape, const Var& x, int groups, const Var& gamma, const Var& beta,
               double epsilon) {
    const Eigen::Index channels = x->value.rows();
    const Eigen::Index pixels = x->value.cols();
    if (channels % groups != 0) throw ShapeError("ad::group_norm: channels not divisible by groups");
    const Eigen::Index per = channels / groups;
    const double count = static_cast<double>(per * pixels);

    Matrix xhat(channels, pixels);
    Vector inv_std(groups);
    for (int g = 0; g < groups; ++g) {
        auto block = x->value.middleRows(g * per, per);
        const double mu = block.sum() / count;
        const double var = (block.array() - mu).square().sum() / count;
        inv_std(g) = 1.0 / std::sqrt(var + epsilon);
        xhat.middleRows(g * per, per) = (block.array() - mu) * inv_std(g);
    }
    Matrix out = (xhat.array().colwise() * gamma->value.col(0).array()).matrix();
    out.colwise() += beta->value.col(0);
    return tape.make(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, groups, per, count](Node& self) {
                         if (gamma->needs_grad)
                             gamma->grad_ref() += (self.grad.array() * xhat.array()).rowwise().sum().matrix();
                         if (beta->needs_grad) beta->grad_ref() += self.grad.rowwise().sum();
                         if (!x->needs_grad) return;
                         const Matrix dxhat =
                             (self.grad.array().colwise() * gamma->value.col(0).array()).matrix();
                         Matrix& gx = x->grad_ref();
                         for (int g = 0; g < groups; ++g) {
                             auto dh = dxhat.middleRows(g * per, per).array();
                             auto xh = xhat.middleRows(g * per, per).array();
                             const double sum_d = dh.sum();
                             const double sum_dx = (dh * xh).sum();
                             gx.middleRows(g * per, per).array() +=
                                 (inv_std(g) / count) * (count * dh - sum_d - xh * sum_dx);
                         }
                     });
}

Var token_norm(Tape& tape, const Var& x, double epsilon) {
    const Eigen::Index rows = x->value.rows();
    const double count = static_cast<double>(rows);
    const Eigen::RowVectorXd mu = x->value.colwise().mean();
    const Matrix centered = x->value.rowwise() - mu;
    const Eigen::RowVectorXd inv_std =
        ((centered.array().square().colwise().sum() / count) + epsilon).sqrt().inverse().matrix();
    Matrix xhat = (centered.array().rowwise() * inv_std.array()).matrix();
    Matrix out = xhat;
    return tape.make(std::move(out), {x}, [x, xhat = std::move(xhat), inv_std, count](Node& self) {
        if (!x->needs_grad) return;
        const auto& dh = self.grad.array();
        const Eigen::RowVectorXd sum_d = self.grad.colwise().sum();
        const Eigen::RowVectorXd sum_dx = (dh * xhat.array()).colwise().sum().matrix();
        Matrix gx = (count * dh).matrix();
        gx.rowwise() -= sum_d;
        gx.array() -= xhat.array().rowwise() * sum_dx.array();
        gx.array().rowwise() *= (inv_std.array() / count);
        x->grad_ref() += gx;
    });
}

Var multi_head_attention(Tape& tape, const Var& q, const Var& k, const Var& v, int heads) {
    const Eigen::Index dk = q->value.cols() / heads;
    const Eigen::Index dv = v->value.cols() / heads;
    if (q->value.cols() != k->value.cols() || k->value.rows() != v->value.rows() ||
        q->value.cols() % heads != 0 || v->value.cols() % heads != 0) {
        throw ShapeError("ad::multi_head_attention: inconsistent projections");
    }
    const double s = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Matrix> weights(static_cast<std::size_t>(heads));
    Matrix out(q->value.rows(), v->value.cols());
    for (int h = 0; h < heads; ++h) {
        Matrix& w = weights[static_cast<std::size_t>(h)];
        w = attention_weights(q->value.middleCols(h * dk, dk), k->value.middleCols(h * dk, dk), s);
        out.middleCols(h * dv, dv).noalias() = w * v->value.middleCols(h * dv, dv);
    }
    if (!tape.recording()) weights.clear();
    return tape.make(std::move(out), {q, k, v},
                     [q, k, v, heads, dk, dv, s, weights = std::move(weights)](Node& self) {
                         for (int h = 0; h < heads; ++h) {
                             const Matrix& w = weights[static_cast<std::size_t>(h)];
                             const auto dout = self.grad.middleCols(h * dv, dv);
                             if (v->needs_grad)
                                 v->grad_ref().middleCols(h * dv, dv).noalias() += w.transpose() * dout;
                             if (!q->needs_grad && !k->needs_grad) continue;
                             const Matrix dw = dout * v->value.middleCols(h * dv, dv).transpose();
                             const Vector row_dot = (dw.array() * w.array()).rowwise().sum();
                             const Matrix dlogits =
                                 (w.array() * (dw.array().colwise() - row_dot.array())).matrix() * s;
                             if (q->needs_grad)
                                 q->grad_ref().middleCols(h * dk, dk).noalias() +=
                                     dlogits * k->value.middleCols(h * dk, dk);
                             if (k->needs_grad)
                                 k->grad_ref().middleCols(h * dk, dk).noalias() +=
                                     dlogits.transpose() * q->value.middleCols(h * dk, dk);
                         }
                     });
}

Var mse(Tape& tape, const Var& prediction, const Matrix& target) {
    if (prediction->value.rows() != target.rows() || prediction->value.cols() != target.cols()) {
        throw ShapeError("ad::mse: shape mismatch");
    }
    const Matrix diff = prediction->value - target;
    const double n = static_cast<double>(diff.size());
    Matrix out(1, 1);
    out(0, 0) = diff.squaredNorm() / n;
    return tape.make(std::move(out), {prediction}, [prediction, diff, n](Node& self) {
        if (prediction->needs_grad) prediction->grad_ref() += (2.0 * self.grad(0, 0) / n) * diff;
    });
}

}  // namespace crossart::ad
