#include "rmnet/ops.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "rmnet/random.hpp"

namespace rmnet {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;

void require_rank(const char* op, const char* what, const Shape& shape, std::size_t rank) {
    if (shape.size() != rank) {
        std::ostringstream os;
        os << op << ": " << what << " must have rank " << rank << ", got " << shape_string(shape);
        throw DimensionError(os.str());
    }
}

[[noreturn]] void axis_mismatch(const char* op, const char* axis, Index got, Index expected) {
    std::ostringstream os;
    os << op << ": axis " << axis << " is " << got << ", expected " << expected;
    throw DimensionError(os.str());
}

template <typename S>
void im2col(const S* image, Index channels, Index height, Index width, Index kh, Index kw,
            Index stride, Index pad, Index out_h, Index out_w, S* col) {
    for (Index c = 0; c < channels; ++c) {
        for (Index ky = 0; ky < kh; ++ky) {
            for (Index kx = 0; kx < kw; ++kx) {
                S* row = col + ((c * kh + ky) * kw + kx) * out_h * out_w;
                for (Index oy = 0; oy < out_h; ++oy) {
                    const Index iy = oy * stride - pad + ky;
                    for (Index ox = 0; ox < out_w; ++ox) {
                        const Index ix = ox * stride - pad + kx;
                        const bool inside = iy >= 0 && iy < height && ix >= 0 && ix < width;
                        row[oy * out_w + ox] = inside ? image[(c * height + iy) * width + ix] : S(0);
                    }
                }
            }
        }
    }
}

template <typename S>
void col2im(const S* col, Index channels, Index height, Index width, Index kh, Index kw,
            Index stride, Index pad, Index out_h, Index out_w, S* image) {
    for (Index c = 0; c < channels; ++c) {
        for (Index ky = 0; ky < kh; ++ky) {
            for (Index kx = 0; kx < kw; ++kx) {
                const S* row = col + ((c * kh + ky) * kw + kx) * out_h * out_w;
                for (Index oy = 0; oy < out_h; ++oy) {
                    const Index iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= height) continue;
                    for (Index ox = 0; ox < out_w; ++ox) {
                        const Index ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= width) continue;
                        image[(c * height + iy) * width + ix] += row[oy * out_w + ox];
                    }
                }
            }
        }
    }
}

struct ConvGeometry {
    Index n, c, h, w, k, kh, kw, out_h, out_w;
};

template <typename S>
ConvGeometry conv_geometry(const char* op, const Tensor<S>& input, const Tensor<S>& weight,
                           Index stride, Index padding, bool depthwise) {
    require_rank(op, "input", input.shape(), 4);
    require_rank(op, "weight", weight.shape(), 4);
    if (stride < 1) throw DimensionError(std::string(op) + ": stride must be >= 1");
    if (padding < 0) throw DimensionError(std::string(op) + ": padding must be >= 0");
    ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                   weight.dim(0), weight.dim(2), weight.dim(3), 0, 0};
    if (g.kh % 2 == 0) axis_mismatch(op, "2 (kernel height, must be odd)", g.kh, g.kh + 1);
    if (g.kw % 2 == 0) axis_mismatch(op, "3 (kernel width, must be odd)", g.kw, g.kw + 1);
    if (depthwise) {
        if (weight.dim(1) != 1) axis_mismatch(op, "1 of weight (filters per channel)", weight.dim(1), 1);
        if (weight.dim(0) != g.c) axis_mismatch(op, "0 of weight (channels)", weight.dim(0), g.c);
    } else if (weight.dim(1) != g.c) {
        axis_mismatch(op, "1 of weight (input channels)", weight.dim(1), g.c);
    }
    if (g.h + 2 * padding < g.kh) axis_mismatch(op, "2 of input (height too small for kernel)", g.h, g.kh);
    if (g.w + 2 * padding < g.kw) axis_mismatch(op, "3 of input (width too small for kernel)", g.w, g.kw);
    g.out_h = window_output(g.h, g.kh, stride, padding);
    g.out_w = window_output(g.w, g.kw, stride, padding);
    return g;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, Index stride, Index padding) {
    const ConvGeometry g = conv_geometry("conv2d", input, weight, stride, padding, false);
    const Index patch = g.c * g.kh * g.kw;
    const Index pixels = g.out_h * g.out_w;
    const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0;

    Buffer<S> out(g.n * g.k * pixels);
    Eigen::Map<const MatrixR<S>> wmat(weight.raw(), g.k, patch);
    MatrixR<S> col;
    if (!pointwise) col.resize(patch, pixels);
    for (Index n = 0; n < g.n; ++n) {
        const S* image = input.raw() + n * g.c * g.h * g.w;
        Eigen::Map<MatrixR<S>> y(out.data() + n * g.k * pixels, g.k, pixels);
        if (pointwise) {
            y.noalias() = wmat * Eigen::Map<const MatrixR<S>>(image, g.c, pixels);
        } else {
            im2col(image, g.c, g.h, g.w, g.kh, g.kw, stride, padding, g.out_h, g.out_w, col.data());
            y.noalias() = wmat * col;
        }
    }

    auto backward = [g, stride, padding, patch, pixels, pointwise](Node<S>& self) {
        auto& x = *self.inputs[0];
        auto& w = *self.inputs[1];
        Eigen::Map<const MatrixR<S>> wmat(w.value.data(), g.k, patch);
        MatrixR<S> col;
        MatrixR<S> dcol;
        if (!pointwise) col.resize(patch, pixels);
        for (Index n = 0; n < g.n; ++n) {
            const S* image = x.value.data() + n * g.c * g.h * g.w;
            Eigen::Map<const MatrixR<S>> dy(self.grad.data() + n * g.k * pixels, g.k, pixels);
            if (w.requires_grad) {
                Eigen::Map<MatrixR<S>> dw(w.grad_buffer().data(), g.k, patch);
                if (pointwise) {
                    dw.noalias() += dy * Eigen::Map<const MatrixR<S>>(image, g.c, pixels).transpose();
                } else {
                    im2col(image, g.c, g.h, g.w, g.kh, g.kw, stride, padding, g.out_h, g.out_w, col.data());
                    dw.noalias() += dy * col.transpose();
                }
            }
            if (x.requires_grad) {
                S* dx = x.grad_buffer().data() + n * g.c * g.h * g.w;
                if (pointwise) {
                    Eigen::Map<MatrixR<S>>(dx, g.c, pixels).noalias() += wmat.transpose() * dy;
                } else {
                    dcol.noalias() = wmat.transpose() * dy;
                    col2im(dcol.data(), g.c, g.h, g.w, g.kh, g.kw, stride, padding, g.out_h, g.out_w, dx);
                }
            }
        }
    };
    return make_result<S>("conv2d", {g.n, g.k, g.out_h, g.out_w}, std::move(out),
                          {input.node(), weight.node()}, backward);
}

template <typename S>
Tensor<S> depthwise_conv2d(const Tensor<S>& input, const Tensor<S>& weight, Index stride, Index padding) {
    const ConvGeometry g = conv_geometry("depthwise_conv2d", input, weight, stride, padding, true);
    Buffer<S> out = Buffer<S>::Zero(g.n * g.c * g.out_h * g.out_w);
    const S* x = input.raw();
    const S* w = weight.raw();
    for (Index n = 0; n < g.n; ++n) {
        for (Index c = 0; c < g.c; ++c) {
            const S* plane = x + (n * g.c + c) * g.h * g.w;
            const S* filt = w + c * g.kh * g.kw;
            S* dst = out.data() + (n * g.c + c) * g.out_h * g.out_w;
            for (Index oy = 0; oy < g.out_h; ++oy) {
                for (Index ky = 0; ky < g.kh; ++ky) {
                    const Index iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    for (Index kx = 0; kx < g.kw; ++kx) {
                        const S wv = filt[ky * g.kw + kx];
                        for (Index ox = 0; ox < g.out_w; ++ox) {
                            const Index ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= g.w) continue;
                            dst[oy * g.out_w + ox] += wv * plane[iy * g.w + ix];
                        }
                    }
                }
            }
        }
    }

    auto backward = [g, stride, padding](Node<S>& self) {
        auto& xin = *self.inputs[0];
        auto& win = *self.inputs[1];
        S* dx = xin.requires_grad ? xin.grad_buffer().data() : nullptr;
        S* dw = win.requires_grad ? win.grad_buffer().data() : nullptr;
        for (Index n = 0; n < g.n; ++n) {
            for (Index c = 0; c < g.c; ++c) {
                const Index plane_off = (n * g.c + c) * g.h * g.w;
                const S* plane = xin.value.data() + plane_off;
                const S* filt = win.value.data() + c * g.kh * g.kw;
                const S* dy = self.grad.data() + (n * g.c + c) * g.out_h * g.out_w;
                for (Index oy = 0; oy < g.out_h; ++oy) {
                    for (Index ky = 0; ky < g.kh; ++ky) {
                        const Index iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= g.h) continue;
                        for (Index kx = 0; kx < g.kw; ++kx) {
                            const S wv = filt[ky * g.kw + kx];
                            S acc = 0;
                            for (Index ox = 0; ox < g.out_w; ++ox) {
                                const Index ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= g.w) continue;
                                const S d = dy[oy * g.out_w + ox];
                                acc += d * plane[iy * g.w + ix];
                                if (dx) dx[plane_off + iy * g.w + ix] += d * wv;
                            }
                            if (dw) dw[c * g.kh * g.kw + ky * g.kw + kx] += acc;
                        }
                    }
                }
            }
        }
    };
    return make_result<S>("depthwise_conv2d", {g.n, g.c, g.out_h, g.out_w}, std::move(out),
                          {input.node(), weight.node()}, backward);
}

template <typename S>
Tensor<S> elu(const Tensor<S>& input) {
    const auto& x = input.data();
    Buffer<S> out = (x > S(0)).select(x, x.exp() - S(1));
    auto backward = [](Node<S>& self) {
        auto& in = *self.inputs[0];
        const auto& xv = in.value;
        // d/dx (e^x - 1) = e^x = y + 1 on the negative side
        in.grad_buffer() += self.grad * (xv > S(0)).select(Buffer<S>::Ones(xv.size()), self.value + S(1));
    };
    return make_result<S>("elu", input.shape(), std::move(out), {input.node()}, backward);
}

template <typename S>
Tensor<S> relu(const Tensor<S>& input) {
    Buffer<S> out = input.data().max(S(0));
    auto backward = [](Node<S>& self) {
        auto& in = *self.inputs[0];
        in.grad_buffer() += (in.value > S(0)).select(self.grad, S(0));
    };
    return make_result<S>("relu", input.shape(), std::move(out), {input.node()}, backward);
}

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& input, Index kernel, Index stride, Index padding) {
    require_rank("max_pool2d", "input", input.shape(), 4);
    const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (kernel < 1 || stride < 1) throw DimensionError("max_pool2d: kernel and stride must be >= 1");
    if (padding >= kernel) throw DimensionError("max_pool2d: padding must be smaller than kernel");
    if (kernel > h + 2 * padding) axis_mismatch("max_pool2d", "2 (height smaller than kernel)", h, kernel);
    if (kernel > w + 2 * padding) axis_mismatch("max_pool2d", "3 (width smaller than kernel)", w, kernel);
    const Index oh = window_output(h, kernel, stride, padding);
    const Index ow = window_output(w, kernel, stride, padding);

    Buffer<S> out(n * c * oh * ow);
    auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
    const S* x = input.raw();
    Index o = 0;
    for (Index plane = 0; plane < n * c; ++plane) {
        const S* src = x + plane * h * w;
        for (Index oy = 0; oy < oh; ++oy) {
            for (Index ox = 0; ox < ow; ++ox, ++o) {
                S best = -std::numeric_limits<S>::infinity();
                Index best_idx = -1;
                for (Index ky = 0; ky < kernel; ++ky) {
                    const Index iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (Index kx = 0; kx < kernel; ++kx) {
                        const Index ix = ox * stride - padding + kx;
                        if (ix < 0 || ix >= w) continue;
                        const S v = src[iy * w + ix];
                        if (best_idx < 0 || v > best) {
                            best = v;
                            best_idx = plane * h * w + iy * w + ix;
                        }
                    }
                }
                out[o] = best;
                (*argmax)[static_cast<std::size_t>(o)] = best_idx;
            }
        }
    }
    auto backward = [argmax](Node<S>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (Index i = 0; i < self.grad.size(); ++i) g[(*argmax)[static_cast<std::size_t>(i)]] += self.grad[i];
    };
    return make_result<S>("max_pool2d", {n, c, oh, ow}, std::move(out), {input.node()}, backward);
}

template <typename S>
Tensor<S> global_max_pool(const Tensor<S>& input) {
    require_rank("global_max_pool", "input", input.shape(), 4);
    const Index n = input.dim(0), c = input.dim(1), area = input.dim(2) * input.dim(3);
    Buffer<S> out(n * c);
    auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n * c));
    for (Index p = 0; p < n * c; ++p) {
        const S* src = input.raw() + p * area;
        Index best = 0;
        for (Index i = 1; i < area; ++i) {
            if (src[i] > src[best]) best = i;
        }
        out[p] = src[best];
        (*argmax)[static_cast<std::size_t>(p)] = p * area + best;
    }
    auto backward = [argmax](Node<S>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (Index i = 0; i < self.grad.size(); ++i) g[(*argmax)[static_cast<std::size_t>(i)]] += self.grad[i];
    };
    return make_result<S>("global_max_pool", {n, c}, std::move(out), {input.node()}, backward);
}

template <typename S>
Tensor<S> batch_norm(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                     RunningStats<S>& stats, Mode mode, double momentum, double epsilon) {
    if (input.rank() != 4 && input.rank() != 2) {
        throw DimensionError("batch_norm: input must have rank 2 or 4, got " + shape_string(input.shape()));
    }
    const Index n = input.dim(0), c = input.dim(1);
    const Index area = input.rank() == 4 ? input.dim(2) * input.dim(3) : 1;
    if (gamma.size() != c) axis_mismatch("batch_norm", "0 of gamma (channels)", gamma.size(), c);
    if (beta.size() != c) axis_mismatch("batch_norm", "0 of beta (channels)", beta.size(), c);
    if (stats.mean.size() != c || stats.var.size() != c) {
        axis_mismatch("batch_norm", "0 of running statistics (channels)", stats.mean.size(), c);
    }
    const Index count = n * area;
    const S eps = static_cast<S>(epsilon);

    Buffer<S> mean(c), inv_std(c);
    if (mode == Mode::train) {
        for (Index ch = 0; ch < c; ++ch) {
            S sum = 0;
            for (Index b = 0; b < n; ++b) sum += input.data().segment((b * c + ch) * area, area).sum();
            const S mu = sum / static_cast<S>(count);
            S sq = 0;
            for (Index b = 0; b < n; ++b) {
                sq += (input.data().segment((b * c + ch) * area, area) - mu).square().sum();
            }
            const S var = sq / static_cast<S>(count);
            mean[ch] = mu;
            inv_std[ch] = S(1) / std::sqrt(var + eps);
            const S unbiased = count > 1 ? sq / static_cast<S>(count - 1) : var;
            const S mom = static_cast<S>(momentum);
            stats.mean[ch] = (S(1) - mom) * stats.mean[ch] + mom * mu;
            stats.var[ch] = (S(1) - mom) * stats.var[ch] + mom * unbiased;
        }
    } else {
        mean = stats.mean;
        inv_std = (stats.var + eps).sqrt().inverse();
    }

    auto xhat = std::make_shared<Buffer<S>>(input.size());
    Buffer<S> out(input.size());
    for (Index b = 0; b < n; ++b) {
        for (Index ch = 0; ch < c; ++ch) {
            const Index off = (b * c + ch) * area;
            xhat->segment(off, area) = (input.data().segment(off, area) - mean[ch]) * inv_std[ch];
            out.segment(off, area) = xhat->segment(off, area) * gamma[ch] + beta[ch];
        }
    }

    const bool batch_stats = mode == Mode::train;
    auto backward = [xhat, inv_std, n, c, area, count, batch_stats](Node<S>& self) {
        auto& x = *self.inputs[0];
        auto& gm = *self.inputs[1];
        auto& bt = *self.inputs[2];
        const auto& dy = self.grad;
        for (Index ch = 0; ch < c; ++ch) {
            S sum_dy = 0, sum_dy_xhat = 0;
            for (Index b = 0; b < n; ++b) {
                const Index off = (b * c + ch) * area;
                sum_dy += dy.segment(off, area).sum();
                sum_dy_xhat += (dy.segment(off, area) * xhat->segment(off, area)).sum();
            }
            if (gm.requires_grad) gm.grad_buffer()[ch] += sum_dy_xhat;
            if (bt.requires_grad) bt.grad_buffer()[ch] += sum_dy;
            if (!x.requires_grad) continue;
            const S g = gm.value[ch];
            auto& dx = x.grad_buffer();
            const S m = static_cast<S>(count);
            for (Index b = 0; b < n; ++b) {
                const Index off = (b * c + ch) * area;
                if (batch_stats) {
                    dx.segment(off, area) += (g * inv_std[ch] / m) *
                        (m * dy.segment(off, area) - sum_dy - xhat->segment(off, area) * sum_dy_xhat);
                } else {
                    dx.segment(off, area) += g * inv_std[ch] * dy.segment(off, area);
                }
            }
        }
    };
    return make_result<S>("batch_norm", input.shape(), std::move(out),
                          {input.node(), gamma.node(), beta.node()}, backward);
}

template <typename S>
Tensor<S> dropout(const Tensor<S>& input, double ratio, Mode mode, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw ConfigError("dropout: ratio must lie in [0, 1), got " + std::to_string(ratio));
    }
    if (mode == Mode::eval || ratio == 0.0) return input;
    Rng rng(seed);
    auto mask = std::make_shared<Buffer<S>>(input.size());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - ratio));
    for (Index i = 0; i < input.size(); ++i) (*mask)[i] = rng.uniform() < ratio ? S(0) : keep_scale;
    Buffer<S> out = input.data() * *mask;
    auto backward = [mask](Node<S>& self) { self.inputs[0]->grad_buffer() += self.grad * *mask; };
    return make_result<S>("dropout", input.shape(), std::move(out), {input.node()}, backward);
}

template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& input, double epsilon) {
    require_rank("l2_normalize", "input", input.shape(), 2);
    const Index n = input.dim(0), d = input.dim(1);
    Eigen::Map<const MatrixR<S>> x(input.raw(), n, d);
    auto norms = std::make_shared<Buffer<S>>(n);
    Buffer<S> out(n * d);
    Eigen::Map<MatrixR<S>> y(out.data(), n, d);
    for (Index i = 0; i < n; ++i) {
        const S norm = std::max(x.row(i).norm(), static_cast<S>(epsilon));
        (*norms)[i] = norm;
        y.row(i) = x.row(i) / norm;
    }
    const S eps = static_cast<S>(epsilon);
    auto backward = [norms, n, d, eps](Node<S>& self) {
        auto& in = *self.inputs[0];
        Eigen::Map<const MatrixR<S>> yv(self.value.data(), n, d);
        Eigen::Map<const MatrixR<S>> dy(self.grad.data(), n, d);
        Eigen::Map<MatrixR<S>> dx(in.grad_buffer().data(), n, d);
        Eigen::Map<const MatrixR<S>> xv(in.value.data(), n, d);
        for (Index i = 0; i < n; ++i) {
            const S norm = (*norms)[i];
            if (xv.row(i).norm() > eps) {
                dx.row(i) += (dy.row(i) - yv.row(i) * dy.row(i).dot(yv.row(i))) / norm;
            } else {
                dx.row(i) += dy.row(i) / norm;
            }
        }
    };
    return make_result<S>("l2_normalize", input.shape(), std::move(out), {input.node()}, backward);
}

template <typename S>
Tensor<S> linear(const Tensor<S>& input, const Tensor<S>& weight) {
    require_rank("linear", "input", input.shape(), 2);
    require_rank("linear", "weight", weight.shape(), 2);
    const Index n = input.dim(0), d = input.dim(1), k = weight.dim(1);
    if (weight.dim(0) != d) axis_mismatch("linear", "0 of weight (inner dimension)", weight.dim(0), d);
    Buffer<S> out(n * k);
    Eigen::Map<MatrixR<S>>(out.data(), n, k).noalias() =
        Eigen::Map<const MatrixR<S>>(input.raw(), n, d) * Eigen::Map<const MatrixR<S>>(weight.raw(), d, k);
    auto backward = [n, d, k](Node<S>& self) {
        auto& x = *self.inputs[0];
        auto& w = *self.inputs[1];
        Eigen::Map<const MatrixR<S>> dy(self.grad.data(), n, k);
        if (x.requires_grad) {
            Eigen::Map<MatrixR<S>>(x.grad_buffer().data(), n, d).noalias() +=
                dy * Eigen::Map<const MatrixR<S>>(w.value.data(), d, k).transpose();
        }
        if (w.requires_grad) {
            Eigen::Map<MatrixR<S>>(w.grad_buffer().data(), d, k).noalias() +=
                Eigen::Map<const MatrixR<S>>(x.value.data(), n, d).transpose() * dy;
        }
    };
    return make_result<S>("linear", {n, k}, std::move(out), {input.node(), weight.node()}, backward);
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& input) {
    require_rank("transpose", "input", input.shape(), 2);
    const Index r = input.dim(0), c = input.dim(1);
    Buffer<S> out(r * c);
    Eigen::Map<MatrixR<S>>(out.data(), c, r) = Eigen::Map<const MatrixR<S>>(input.raw(), r, c).transpose();
    auto backward = [r, c](Node<S>& self) {
        Eigen::Map<MatrixR<S>>(self.inputs[0]->grad_buffer().data(), r, c) +=
            Eigen::Map<const MatrixR<S>>(self.grad.data(), c, r).transpose();
    };
    return make_result<S>("transpose", {c, r}, std::move(out), {input.node()}, backward);
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
    }
    auto backward = [](Node<S>& self) {
        for (auto& in : self.inputs) {
            if (in->requires_grad) in->grad_buffer() += self.grad;
        }
    };
    return make_result<S>("add", a.shape(), a.data() + b.data(), {a.node(), b.node()}, backward);
}

template <typename S>
Tensor<S> scale(const Tensor<S>& input, S factor) {
    auto backward = [factor](Node<S>& self) { self.inputs[0]->grad_buffer() += self.grad * factor; };
    return make_result<S>("scale", input.shape(), input.data() * factor, {input.node()}, backward);
}

template <typename S>
Tensor<S> pad_channels(const Tensor<S>& input, Index channels) {
    require_rank("pad_channels", "input", input.shape(), 4);
    const Index n = input.dim(0), c = input.dim(1), area = input.dim(2) * input.dim(3);
    if (channels < c) axis_mismatch("pad_channels", "1 (cannot shrink channels)", c, channels);
    Buffer<S> out = Buffer<S>::Zero(n * channels * area);
    for (Index b = 0; b < n; ++b) out.segment(b * channels * area, c * area) = input.data().segment(b * c * area, c * area);
    auto backward = [n, c, channels, area](Node<S>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (Index b = 0; b < n; ++b) g.segment(b * c * area, c * area) += self.grad.segment(b * channels * area, c * area);
    };
    return make_result<S>("pad_channels", {n, channels, input.dim(2), input.dim(3)}, std::move(out),
                          {input.node()}, backward);
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
    require_rank("softmax", "logits", logits.shape(), 2);
    const Index n = logits.dim(0), k = logits.dim(1);
    Buffer<S> out(n * k);
    Eigen::Map<const MatrixR<S>> z(logits.raw(), n, k);
    Eigen::Map<MatrixR<S>> p(out.data(), n, k);
    for (Index i = 0; i < n; ++i) {
        p.row(i) = (z.row(i).array() - z.row(i).maxCoeff()).exp().matrix();
        p.row(i) /= p.row(i).sum();
    }
    auto backward = [n, k](Node<S>& self) {
        Eigen::Map<const MatrixR<S>> pv(self.value.data(), n, k);
        Eigen::Map<const MatrixR<S>> dp(self.grad.data(), n, k);
        Eigen::Map<MatrixR<S>> dz(self.inputs[0]->grad_buffer().data(), n, k);
        for (Index i = 0; i < n; ++i) {
            const S inner = dp.row(i).dot(pv.row(i));
            dz.row(i).array() += pv.row(i).array() * (dp.row(i).array() - inner);
        }
    };
    return make_result<S>("softmax", logits.shape(), std::move(out), {logits.node()}, backward);
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& probabilities, std::span<const int> labels, bool* clamped) {
    require_rank("cross_entropy", "probabilities", probabilities.shape(), 2);
    const Index n = probabilities.dim(0), k = probabilities.dim(1);
    if (static_cast<Index>(labels.size()) != n) axis_mismatch("cross_entropy", "0 (labels)", static_cast<Index>(labels.size()), n);
    Eigen::Map<const MatrixR<S>> p(probabilities.raw(), n, k);
    const S floor = static_cast<S>(kProbabilityFloor);
    auto used = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n));
    S total = 0;
    bool any_clamped = false;
    for (Index i = 0; i < n; ++i) {
        if (std::abs(p.row(i).sum() - S(1)) > S(1e-6)) {
            throw ContractError("cross_entropy: row " + std::to_string(i) + " does not sum to 1");
        }
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range");
        S py = p(i, y);
        if (py < floor) {
            any_clamped = true;
            py = floor;
        }
        (*used)[static_cast<std::size_t>(i)] = py;
        total -= std::log(py);
    }
    if (clamped) *clamped = any_clamped;
    if (any_clamped) warn("cross_entropy: probability at true label clamped to 1e-12");
    std::vector<int> lab(labels.begin(), labels.end());
    auto backward = [used, lab, n, k, floor](Node<S>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const S upstream = self.grad[0];
        for (Index i = 0; i < n; ++i) {
            const S py = self.inputs[0]->value[i * k + lab[static_cast<std::size_t>(i)]];
            if (py >= floor) g[i * k + lab[static_cast<std::size_t>(i)]] -= upstream / (static_cast<S>(n) * py);
        }
        (void)used;
    };
    Buffer<S> value(1);
    value[0] = total / static_cast<S>(n);
    return make_result<S>("cross_entropy", {1}, std::move(value), {probabilities.node()}, backward);
}

#define RMNET_INSTANTIATE_OPS(S)                                                                  \
    template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, Index, Index);                  \
    template Tensor<S> depthwise_conv2d(const Tensor<S>&, const Tensor<S>&, Index, Index);        \
    template Tensor<S> elu(const Tensor<S>&);                                                     \
    template Tensor<S> relu(const Tensor<S>&);                                                    \
    template Tensor<S> max_pool2d(const Tensor<S>&, Index, Index, Index);                         \
    template Tensor<S> global_max_pool(const Tensor<S>&);                                         \
    template Tensor<S> batch_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,           \
                                  RunningStats<S>&, Mode, double, double);                        \
    template Tensor<S> dropout(const Tensor<S>&, double, Mode, std::uint64_t);                    \
    template Tensor<S> l2_normalize(const Tensor<S>&, double);                                    \
    template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&);                                \
    template Tensor<S> transpose(const Tensor<S>&);                                             \
    template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                   \
    template Tensor<S> scale(const Tensor<S>&, S);                                                \
    template Tensor<S> pad_channels(const Tensor<S>&, Index);                                     \
    template Tensor<S> softmax(const Tensor<S>&);                                                 \
    template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>, bool*);

RMNET_INSTANTIATE_OPS(float)
RMNET_INSTANTIATE_OPS(double)

}  // namespace rmnet
