#include "cipher/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "cipher/error.hpp"

namespace cipher::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

bool wants(const Node& self, std::size_t i) {
    return i < self.parents.size() && self.parents[i] && self.parents[i]->requires_grad;
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
    if (x.value().ndim() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
                         shape_str(x.shape()));
    }
}

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

template <typename F>
Tensor map_values(const Tensor& x, F f) {
    Tensor out(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
    return out;
}

struct ConvGeom {
    std::int64_t n, cin, h, w, cout, k, ho, wo;
    int stride, pad;
    std::int64_t col_rows() const { return cin * k * k; }
    std::int64_t col_cols() const { return ho * wo; }
    bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Writes the K x (ho*wo) patch matrix of one sample; rows are ld apart.
void im2col(const ConvGeom& g, const double* x, double* cols, std::int64_t ld) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
        const double* xc = x + c * g.h * g.w;
        for (std::int64_t ki = 0; ki < g.k; ++ki) {
            for (std::int64_t kj = 0; kj < g.k; ++kj) {
                double* row = cols + ((c * g.k + ki) * g.k + kj) * ld;
                for (std::int64_t oh = 0; oh < g.ho; ++oh) {
                    const std::int64_t ih = oh * g.stride - g.pad + ki;
                    double* dst = row + oh * g.wo;
                    if (ih < 0 || ih >= g.h) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = xc + ih * g.w;
                    for (std::int64_t ow = 0; ow < g.wo; ++ow) {
                        const std::int64_t iw = ow * g.stride - g.pad + kj;
                        dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvGeom& g, const double* cols, double* dx, std::int64_t ld) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
        double* xc = dx + c * g.h * g.w;
        for (std::int64_t ki = 0; ki < g.k; ++ki) {
            for (std::int64_t kj = 0; kj < g.k; ++kj) {
                const double* row = cols + ((c * g.k + ki) * g.k + kj) * ld;
                for (std::int64_t oh = 0; oh < g.ho; ++oh) {
                    const std::int64_t ih = oh * g.stride - g.pad + ki;
                    if (ih < 0 || ih >= g.h) continue;
                    for (std::int64_t ow = 0; ow < g.wo; ++ow) {
                        const std::int64_t iw = ow * g.stride - g.pad + kj;
                        if (iw >= 0 && iw < g.w) xc[ih * g.w + iw] += row[oh * g.wo + ow];
                    }
                }
            }
        }
    }
}

// Samples per GEMM so the patch matrix stays around 512 KB.
std::int64_t conv_chunk(const ConvGeom& g) {
    const std::int64_t per = std::max<std::int64_t>(1, g.col_rows() * g.col_cols());
    return std::clamp<std::int64_t>((std::int64_t{1} << 16) / per, 1, g.n);
}

// K x (b*ho*wo) patch matrix for samples [n0, n0 + b).
void gather_cols(const ConvGeom& g, const double* x, std::int64_t n0, std::int64_t b, MatR& cols) {
    const std::int64_t hw = g.col_cols();
    const std::int64_t in_stride = g.cin * g.h * g.w;
    cols.resize(g.col_rows(), b * hw);
    for (std::int64_t i = 0; i < b; ++i) {
        const double* xn = x + (n0 + i) * in_stride;
        if (g.pointwise()) {
            cols.middleCols(i * hw, hw) = CMapR(xn, g.cin, hw);
        } else {
            im2col(g, xn, cols.data() + i * hw, b * hw);
        }
    }
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
        if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
        if (wants(self, 1)) self.parents[1]->accumulate(map_values(self.grad, [](double g) { return -g; }));
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (wants(self, 0)) {
            Tensor g = self.grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= bv[i];
            self.parents[0]->accumulate(g);
        }
        if (wants(self, 1)) {
            Tensor g = self.grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= av[i];
            self.parents[1]->accumulate(g);
        }
    });
}

Var scale(const Var& a, double s) {
    return make_result(map_values(a.value(), [s](double v) { return v * s; }), {a}, [s](Node& self) {
        self.parents[0]->accumulate(map_values(self.grad, [s](double g) { return g * s; }));
    });
}

Var add_scalar(const Var& a, double s) {
    return make_result(map_values(a.value(), [s](double v) { return v + s; }), {a},
                       [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Var add_channelwise(const Var& x, const Var& v) {
    require_rank(x, 4, "add_channelwise");
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (v.shape() != Shape{n, c}) {
        throw ShapeError("add_channelwise: expected " + shape_str({n, c}) + " got " + shape_str(v.shape()));
    }
    Tensor out = x.value();
    for (std::int64_t i = 0; i < n * c; ++i) {
        const double add = v.value()[i];
        for (std::int64_t p = 0; p < hw; ++p) out[i * hw + p] += add;
    }
    return make_result(std::move(out), {x, v}, [n, c, hw](Node& self) {
        if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
        if (wants(self, 1)) {
            Tensor g(Shape{n, c});
            for (std::int64_t i = 0; i < n * c; ++i) {
                double s = 0.0;
                for (std::int64_t p = 0; p < hw; ++p) s += self.grad[i * hw + p];
                g[i] = s;
            }
            self.parents[1]->accumulate(g);
        }
    });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int padding, double weight_scale) {
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d weight");
    if (x.dim(1) != w.dim(1)) {
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " has " + std::to_string(x.dim(1)) +
                         " channels but weight " + shape_str(w.shape()) + " expects " + std::to_string(w.dim(1)));
    }
    if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: non-square kernel " + shape_str(w.shape()));
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
    ConvGeom g{};
    g.n = x.dim(0);
    g.cin = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.cout = w.dim(0);
    g.k = w.dim(2);
    g.stride = stride;
    g.pad = padding;
    g.ho = (g.h + 2 * padding - g.k) / stride + 1;
    g.wo = (g.w + 2 * padding - g.k) / stride + 1;
    if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
    if (bias.defined() && bias.shape() != Shape{g.cout}) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(g.cout));
    }

    Tensor out(Shape{g.n, g.cout, g.ho, g.wo});
    CMapR wm(w.value().ptr(), g.cout, g.col_rows());
    const std::int64_t hw = g.col_cols();
    const std::int64_t chunk = conv_chunk(g);
    MatR cols, prod;
    for (std::int64_t n0 = 0; n0 < g.n; n0 += chunk) {
        const std::int64_t b = std::min(chunk, g.n - n0);
        gather_cols(g, x.value().ptr(), n0, b, cols);
        prod.noalias() = weight_scale * (wm * cols);
        for (std::int64_t i = 0; i < b; ++i) {
            MapR on(out.ptr() + (n0 + i) * g.cout * hw, g.cout, hw);
            on = prod.middleCols(i * hw, hw);
            if (bias.defined()) {
                for (std::int64_t c = 0; c < g.cout; ++c) on.row(c).array() += bias.value()[c];
            }
        }
    }

    return make_result(std::move(out), {x, w, bias}, [g, weight_scale](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& wv = self.parents[1]->value;
        const bool need_x = wants(self, 0), need_w = wants(self, 1), need_b = wants(self, 2);
        CMapR wm(wv.ptr(), g.cout, g.col_rows());
        const std::int64_t hw = g.col_cols();
        const std::int64_t in_stride = g.cin * g.h * g.w;
        const std::int64_t chunk = conv_chunk(g);
        Tensor dx = need_x ? Tensor(xv.shape(), 0.0) : Tensor{};
        MatR dw = need_w ? MatR::Zero(g.cout, g.col_rows()) : MatR{};
        Tensor db = need_b ? Tensor(Shape{g.cout}, 0.0) : Tensor{};
        MatR cols, grad, dcols;
        for (std::int64_t n0 = 0; n0 < g.n; n0 += chunk) {
            const std::int64_t b = std::min(chunk, g.n - n0);
            grad.resize(g.cout, b * hw);
            for (std::int64_t i = 0; i < b; ++i) {
                grad.middleCols(i * hw, hw) = CMapR(self.grad.ptr() + (n0 + i) * g.cout * hw, g.cout, hw);
            }
            if (need_b) {
                for (std::int64_t c = 0; c < g.cout; ++c) db[c] += grad.row(c).sum();
            }
            if (need_w) {
                gather_cols(g, xv.ptr(), n0, b, cols);
                dw.noalias() += grad * cols.transpose();
            }
            if (need_x) {
                dcols.noalias() = weight_scale * (wm.transpose() * grad);
                for (std::int64_t i = 0; i < b; ++i) {
                    double* dxn = dx.ptr() + (n0 + i) * in_stride;
                    if (g.pointwise()) {
                        MapR(dxn, g.cin, hw) += dcols.middleCols(i * hw, hw);
                    } else {
                        col2im_add(g, dcols.data() + i * hw, dxn, b * hw);
                    }
                }
            }
        }
        if (need_x) self.parents[0]->accumulate(dx);
        if (need_w) {
            Tensor dwt(wv.shape());
            MapR(dwt.ptr(), g.cout, g.col_rows()) = weight_scale * dw;
            self.parents[1]->accumulate(dwt);
        }
        if (need_b) self.parents[2]->accumulate(db);
    });
}

Var linear(const Var& x, const Var& w, const Var& bias, double weight_scale) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear weight");
    const auto n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (w.dim(1) != in) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
    }
    if (bias.defined() && bias.shape() != Shape{out_dim}) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(out_dim));
    }
    Tensor out(Shape{n, out_dim});
    MapR om(out.ptr(), n, out_dim);
    om.noalias() = weight_scale * (CMapR(x.value().ptr(), n, in) * CMapR(w.value().ptr(), out_dim, in).transpose());
    if (bias.defined()) {
        for (std::int64_t r = 0; r < n; ++r) {
            for (std::int64_t c = 0; c < out_dim; ++c) om(r, c) += bias.value()[c];
        }
    }
    return make_result(std::move(out), {x, w, bias}, [n, in, out_dim, weight_scale](Node& self) {
        CMapR gm(self.grad.ptr(), n, out_dim);
        if (wants(self, 0)) {
            Tensor dx(Shape{n, in});
            MapR(dx.ptr(), n, in).noalias() = weight_scale * (gm * CMapR(self.parents[1]->value.ptr(), out_dim, in));
            self.parents[0]->accumulate(dx);
        }
        if (wants(self, 1)) {
            Tensor dw(Shape{out_dim, in});
            MapR(dw.ptr(), out_dim, in).noalias() =
                weight_scale * (gm.transpose() * CMapR(self.parents[0]->value.ptr(), n, in));
            self.parents[1]->accumulate(dw);
        }
        if (wants(self, 2)) {
            Tensor db(Shape{out_dim}, 0.0);
            for (std::int64_t r = 0; r < n; ++r) {
                for (std::int64_t c = 0; c < out_dim; ++c) db[c] += gm(r, c);
            }
            self.parents[2]->accumulate(db);
        }
    });
}

Var leaky_relu(const Var& x, double slope) {
    return make_result(map_values(x.value(), [slope](double v) { return v >= 0.0 ? v : slope * v; }), {x},
                       [slope](Node& self) {
                           const Tensor& xv = self.parents[0]->value;
                           Tensor g = self.grad;
                           for (std::int64_t i = 0; i < g.numel(); ++i) {
                               if (xv[i] < 0.0) g[i] *= slope;
                           }
                           self.parents[0]->accumulate(g);
                       });
}

Var silu(const Var& x) {
    return make_result(map_values(x.value(), [](double v) { return v / (1.0 + std::exp(-v)); }), {x},
                       [](Node& self) {
                           const Tensor& xv = self.parents[0]->value;
                           Tensor g = self.grad;
                           for (std::int64_t i = 0; i < g.numel(); ++i) {
                               const double s = 1.0 / (1.0 + std::exp(-xv[i]));
                               g[i] *= s * (1.0 + xv[i] * (1.0 - s));
                           }
                           self.parents[0]->accumulate(g);
                       });
}

Var sigmoid(const Var& x) {
    return make_result(map_values(x.value(), [](double v) { return 1.0 / (1.0 + std::exp(-v)); }), {x},
                       [](Node& self) {
                           Tensor g = self.grad;
                           for (std::int64_t i = 0; i < g.numel(); ++i) {
                               const double s = self.value[i];
                               g[i] *= s * (1.0 - s);
                           }
                           self.parents[0]->accumulate(g);
                       });
}

Var tanh(const Var& x) {
    return make_result(map_values(x.value(), [](double v) { return std::tanh(v); }), {x}, [](Node& self) {
        Tensor g = self.grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= 1.0 - self.value[i] * self.value[i];
        self.parents[0]->accumulate(g);
    });
}

Var avg_pool2(const Var& x) {
    require_rank(x, 4, "avg_pool2");
    const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial size " + shape_str(x.shape()));
    const auto ho = h / 2, wo = w / 2;
    Tensor out(Shape{n, c, ho, wo});
    const Tensor& xv = x.value();
    for (std::int64_t p = 0; p < n * c; ++p) {
        const double* src = xv.ptr() + p * h * w;
        double* dst = out.ptr() + p * ho * wo;
        for (std::int64_t i = 0; i < ho; ++i) {
            for (std::int64_t j = 0; j < wo; ++j) {
                dst[i * wo + j] = 0.25 * (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] +
                                          src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]);
            }
        }
    }
    return make_result(std::move(out), {x}, [n, c, h, w, ho, wo](Node& self) {
        Tensor dx(Shape{n, c, h, w});
        for (std::int64_t p = 0; p < n * c; ++p) {
            const double* g = self.grad.ptr() + p * ho * wo;
            double* d = dx.ptr() + p * h * w;
            for (std::int64_t i = 0; i < h; ++i) {
                for (std::int64_t j = 0; j < w; ++j) d[i * w + j] = 0.25 * g[(i / 2) * wo + j / 2];
            }
        }
        self.parents[0]->accumulate(dx);
    });
}

Var upsample_nearest2(const Var& x) {
    require_rank(x, 4, "upsample_nearest2");
    const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out(Shape{n, c, 2 * h, 2 * w});
    const Tensor& xv = x.value();
    for (std::int64_t p = 0; p < n * c; ++p) {
        const double* src = xv.ptr() + p * h * w;
        double* dst = out.ptr() + p * 4 * h * w;
        for (std::int64_t i = 0; i < 2 * h; ++i) {
            for (std::int64_t j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
        }
    }
    return make_result(std::move(out), {x}, [n, c, h, w](Node& self) {
        Tensor dx(Shape{n, c, h, w}, 0.0);
        for (std::int64_t p = 0; p < n * c; ++p) {
            const double* g = self.grad.ptr() + p * 4 * h * w;
            double* d = dx.ptr() + p * h * w;
            for (std::int64_t i = 0; i < 2 * h; ++i) {
                for (std::int64_t j = 0; j < 2 * w; ++j) d[(i / 2) * w + j / 2] += g[i * 2 * w + j];
            }
        }
        self.parents[0]->accumulate(dx);
    });
}

Var concat_channels(const Var& a, const Var& b) {
    require_rank(a, 4, "concat_channels");
    require_rank(b, 4, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
    Tensor out(Shape{n, ca + cb, a.dim(2), a.dim(3)});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(a.value().ptr() + i * ca * hw, ca * hw, out.ptr() + i * (ca + cb) * hw);
        std::copy_n(b.value().ptr() + i * cb * hw, cb * hw, out.ptr() + i * (ca + cb) * hw + ca * hw);
    }
    return make_result(std::move(out), {a, b}, [n, ca, cb, hw](Node& self) {
        for (int which = 0; which < 2; ++which) {
            if (!wants(self, which)) continue;
            const auto cw = which == 0 ? ca : cb;
            const auto off = which == 0 ? 0 : ca * hw;
            Tensor g(self.parents[which]->value.shape());
            for (std::int64_t i = 0; i < n; ++i) {
                std::copy_n(self.grad.ptr() + i * (ca + cb) * hw + off, cw * hw, g.ptr() + i * cw * hw);
            }
            self.parents[which]->accumulate(g);
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Shape original = x.shape();
    return make_result(x.value().reshaped(std::move(shape)), {x}, [original](Node& self) {
        self.parents[0]->accumulate(self.grad.reshaped(original));
    });
}

Var pixel_norm(const Var& x, double eps) {
    const auto rank = x.value().ndim();
    if (rank != 2 && rank != 4) throw ShapeError("pixel_norm: expected rank 2 or 4, got " + shape_str(x.shape()));
    const auto n = x.dim(0), c = x.dim(1);
    const auto hw = rank == 4 ? x.dim(2) * x.dim(3) : 1;
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    std::vector<double> inv(static_cast<std::size_t>(n * hw));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t p = 0; p < hw; ++p) {
            double ss = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double v = xv[(i * c + ch) * hw + p];
                ss += v * v;
            }
            const double r = 1.0 / std::sqrt(ss / static_cast<double>(c) + eps);
            inv[i * hw + p] = r;
            for (std::int64_t ch = 0; ch < c; ++ch) out[(i * c + ch) * hw + p] = xv[(i * c + ch) * hw + p] * r;
        }
    }
    return make_result(std::move(out), {x}, [n, c, hw, inv = std::move(inv)](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        Tensor dx(xv.shape());
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t p = 0; p < hw; ++p) {
                const double r = inv[i * hw + p];
                double dot = 0.0;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const auto idx = (i * c + ch) * hw + p;
                    dot += self.grad[idx] * xv[idx];
                }
                const double k = r * r * r * dot / static_cast<double>(c);
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const auto idx = (i * c + ch) * hw + p;
                    dx[idx] = r * self.grad[idx] - xv[idx] * k;
                }
            }
        }
        self.parents[0]->accumulate(dx);
    });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps) {
    require_rank(x, 4, "group_norm");
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (groups < 1 || c % groups != 0) {
        throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
    }
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) throw ShapeError("group_norm: affine shape mismatch");
    const auto cg = c / groups;
    const auto group_size = cg * hw;
    const Tensor& xv = x.value();
    Tensor xhat(xv.shape());
    Tensor out(xv.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(n * groups));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t g = 0; g < groups; ++g) {
            const auto base = (i * c + g * cg) * hw;
            double mu = 0.0;
            for (std::int64_t e = 0; e < group_size; ++e) mu += xv[base + e];
            mu /= static_cast<double>(group_size);
            double var = 0.0;
            for (std::int64_t e = 0; e < group_size; ++e) {
                const double d = xv[base + e] - mu;
                var += d * d;
            }
            var /= static_cast<double>(group_size);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[i * groups + g] = is;
            for (std::int64_t e = 0; e < group_size; ++e) {
                const auto ch = g * cg + e / hw;
                const double xh = (xv[base + e] - mu) * is;
                xhat[base + e] = xh;
                out[base + e] = xh * gamma.value()[ch] + beta.value()[ch];
            }
        }
    }
    return make_result(std::move(out), {x, gamma, beta},
                       [n, c, hw, groups, cg, group_size, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           const Tensor& gam = self.parents[1]->value;
                           const Tensor& gy = self.grad;
                           if (wants(self, 1) || wants(self, 2)) {
                               Tensor dgamma(Shape{c}, 0.0), dbeta(Shape{c}, 0.0);
                               for (std::int64_t i = 0; i < n; ++i) {
                                   for (std::int64_t ch = 0; ch < c; ++ch) {
                                       for (std::int64_t p = 0; p < hw; ++p) {
                                           const auto idx = (i * c + ch) * hw + p;
                                           dgamma[ch] += gy[idx] * xhat[idx];
                                           dbeta[ch] += gy[idx];
                                       }
                                   }
                               }
                               if (wants(self, 1)) self.parents[1]->accumulate(dgamma);
                               if (wants(self, 2)) self.parents[2]->accumulate(dbeta);
                           }
                           if (wants(self, 0)) {
                               Tensor dx(self.parents[0]->value.shape());
                               std::vector<double> dxh(static_cast<std::size_t>(group_size));
                               for (std::int64_t i = 0; i < n; ++i) {
                                   for (std::int64_t g = 0; g < groups; ++g) {
                                       const auto base = (i * c + g * cg) * hw;
                                       double m1 = 0.0, m2 = 0.0;
                                       for (std::int64_t e = 0; e < group_size; ++e) {
                                           const auto ch = g * cg + e / hw;
                                           dxh[e] = gy[base + e] * gam[ch];
                                           m1 += dxh[e];
                                           m2 += dxh[e] * xhat[base + e];
                                       }
                                       m1 /= static_cast<double>(group_size);
                                       m2 /= static_cast<double>(group_size);
                                       const double is = inv_std[i * groups + g];
                                       for (std::int64_t e = 0; e < group_size; ++e) {
                                           dx[base + e] = is * (dxh[e] - m1 - xhat[base + e] * m2);
                                       }
                                   }
                               }
                               self.parents[0]->accumulate(dx);
                           }
                       });
}

Var minibatch_stddev(const Var& x, std::optional<double> fixed_value) {
    require_rank(x, 4, "minibatch_stddev");
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (n < 1) throw ShapeError("minibatch_stddev: empty batch");
    const auto positions = c * hw;
    const Tensor& xv = x.value();

    std::vector<double> mu(static_cast<std::size_t>(positions), 0.0), sigma(static_cast<std::size_t>(positions), 0.0);
    double stat = 0.0;
    if (fixed_value) {
        stat = *fixed_value;
    } else {
        for (std::int64_t p = 0; p < positions; ++p) {
            // Shift by the first sample so identical samples give a mean that is exactly theirs.
            const double x0 = xv[p];
            double shift = 0.0;
            for (std::int64_t i = 1; i < n; ++i) shift += xv[i * positions + p] - x0;
            const double m = x0 + shift / static_cast<double>(n);
            double var = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double d = xv[i * positions + p] - m;
                var += d * d;
            }
            mu[p] = m;
            sigma[p] = std::sqrt(var / static_cast<double>(n));
            stat += sigma[p];
        }
        stat /= static_cast<double>(positions);
    }

    Tensor out(Shape{n, c + 1, x.dim(2), x.dim(3)});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(xv.ptr() + i * positions, positions, out.ptr() + i * (positions + hw));
        std::fill_n(out.ptr() + i * (positions + hw) + positions, hw, stat);
    }
    const bool live = !fixed_value.has_value();
    return make_result(std::move(out), {x},
                       [n, positions, hw, live, mu = std::move(mu), sigma = std::move(sigma)](Node& self) {
                           const Tensor& xv = self.parents[0]->value;
                           Tensor dx(xv.shape());
                           double dstat = 0.0;
                           for (std::int64_t i = 0; i < n; ++i) {
                               const double* g = self.grad.ptr() + i * (positions + hw);
                               std::copy_n(g, positions, dx.ptr() + i * positions);
                               for (std::int64_t p = 0; p < hw; ++p) dstat += g[positions + p];
                           }
                           if (live) {
                               const double k = dstat / static_cast<double>(positions) / static_cast<double>(n);
                               for (std::int64_t p = 0; p < positions; ++p) {
                                   // sqrt is not differentiable at zero spread; take the zero subgradient.
                                   if (sigma[p] <= 0.0) continue;
                                   for (std::int64_t i = 0; i < n; ++i) {
                                       dx[i * positions + p] += k * (xv[i * positions + p] - mu[p]) / sigma[p];
                                   }
                               }
                           }
                           self.parents[0]->accumulate(dx);
                       });
}

Var spatial_attention(const Var& q, const Var& k, const Var& v) {
    require_rank(q, 4, "spatial_attention");
    require_same(q, k, "spatial_attention");
    require_same(q, v, "spatial_attention");
    const auto n = q.dim(0), c = q.dim(1), hw = q.dim(2) * q.dim(3);
    const double a = 1.0 / std::sqrt(static_cast<double>(c));
    Tensor out(q.shape());
    std::vector<MatR> probs(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        CMapR qi(q.value().ptr() + i * c * hw, c, hw);
        CMapR ki(k.value().ptr() + i * c * hw, c, hw);
        CMapR vi(v.value().ptr() + i * c * hw, c, hw);
        MatR s = a * (qi.transpose() * ki);
        for (std::int64_t r = 0; r < hw; ++r) {
            const double mx = s.row(r).maxCoeff();
            s.row(r) = (s.row(r).array() - mx).exp();
            s.row(r) /= s.row(r).sum();
        }
        MapR(out.ptr() + i * c * hw, c, hw).noalias() = vi * s.transpose();
        probs[i] = std::move(s);
    }
    return make_result(std::move(out), {q, k, v}, [n, c, hw, a, probs = std::move(probs)](Node& self) {
        Tensor dq(Shape{n, c, hw}), dk(Shape{n, c, hw}), dv(Shape{n, c, hw});
        for (std::int64_t i = 0; i < n; ++i) {
            CMapR gi(self.grad.ptr() + i * c * hw, c, hw);
            CMapR qi(self.parents[0]->value.ptr() + i * c * hw, c, hw);
            CMapR ki(self.parents[1]->value.ptr() + i * c * hw, c, hw);
            CMapR vi(self.parents[2]->value.ptr() + i * c * hw, c, hw);
            const MatR& p = probs[i];
            MapR(dv.ptr() + i * c * hw, c, hw).noalias() = gi * p;
            MatR dp = gi.transpose() * vi;
            MatR ds = p.cwiseProduct(dp);
            for (std::int64_t r = 0; r < hw; ++r) {
                const double dot = ds.row(r).sum();
                ds.row(r) -= dot * p.row(r);
            }
            MapR(dq.ptr() + i * c * hw, c, hw).noalias() = a * (ki * ds.transpose());
            MapR(dk.ptr() + i * c * hw, c, hw).noalias() = a * (qi * ds);
        }
        const Shape& shape = self.value.shape();
        if (wants(self, 0)) self.parents[0]->accumulate(dq.reshaped(shape));
        if (wants(self, 1)) self.parents[1]->accumulate(dk.reshaped(shape));
        if (wants(self, 2)) self.parents[2]->accumulate(dv.reshaped(shape));
    });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw DomainError("dropout: p must lie in [0,1), got " + std::to_string(p));
    if (p == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    const double s = 1.0 / (1.0 - p);
    Tensor mask(x.shape());
    for (std::int64_t i = 0; i < mask.numel(); ++i) mask[i] = keep(rng) ? s : 0.0;
    Tensor out = x.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
    return make_result(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
        Tensor g = self.grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= mask[i];
        self.parents[0]->accumulate(g);
    });
}

Var mean(const Var& x) {
    const auto count = x.value().numel();
    if (count == 0) throw ShapeError("mean of empty tensor");
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return make_result(Tensor(Shape{1}, s / static_cast<double>(count)), {x}, [count](Node& self) {
        self.parents[0]->accumulate(Tensor(self.parents[0]->value.shape(), self.grad[0] / static_cast<double>(count)));
    });
}

Var mse_loss(const Var& pred, const Tensor& target) {
    if (!pred.value().same_shape(target)) {
        throw ShapeError("mse_loss: " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    }
    const auto count = target.numel();
    if (count == 0) throw ShapeError("mse_loss on empty tensor");
    double s = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
        const double d = pred.value()[i] - target[i];
        s += d * d;
    }
    return make_result(Tensor(Shape{1}, s / static_cast<double>(count)), {pred}, [target, count](Node& self) {
        const Tensor& pv = self.parents[0]->value;
        Tensor g(pv.shape());
        const double k = 2.0 * self.grad[0] / static_cast<double>(count);
        for (std::int64_t i = 0; i < count; ++i) g[i] = k * (pv[i] - target[i]);
        self.parents[0]->accumulate(g);
    });
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
    if (logits.value().numel() != targets.numel() || targets.numel() == 0) {
        throw ShapeError("bce_with_logits: " + shape_str(logits.shape()) + " vs targets " + shape_str(targets.shape()));
    }
    const auto count = targets.numel();
    double s = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
        const double z = logits.value()[i];
        s += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
    }
    return make_result(Tensor(Shape{1}, s / static_cast<double>(count)), {logits}, [targets, count](Node& self) {
        const Tensor& zv = self.parents[0]->value;
        Tensor g(zv.shape());
        const double k = self.grad[0] / static_cast<double>(count);
        for (std::int64_t i = 0; i < count; ++i) g[i] = k * (1.0 / (1.0 + std::exp(-zv[i])) - targets[i]);
        self.parents[0]->accumulate(g);
    });
}

}  // namespace cipher::nn
