#include "flowsel/ops.hpp"

#include "flowsel/error.hpp"
#include "flowsel/simd/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace flowsel::nn {

namespace {

void require_same(const Shape& a, const Shape& b, const char* op) {
    if (!(a == b)) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

void require_scalar(const Shape& s, const char* op) {
    if (s.size() != 1) throw ShapeError(std::string(op) + ": expected a one-element operand, got " + s.str());
}

struct ConvGeometry {
    std::size_t h, w, k, pad, cin_g, cout_g, q, hw;
};

// Lays out the k*k shifted copies of cin_g input planes as rows of col.
void im2col(const double* in, const ConvGeometry& geo, double* col) {
    for (std::size_t ci = 0; ci < geo.cin_g; ++ci) {
        const double* plane = in + ci * geo.hw;
        for (std::size_t ky = 0; ky < geo.k; ++ky)
            for (std::size_t kx = 0; kx < geo.k; ++kx) {
                double* row = col + ((ci * geo.k + ky) * geo.k + kx) * geo.hw;
                for (std::size_t y = 0; y < geo.h; ++y) {
                    const auto sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(geo.pad);
                    for (std::size_t x = 0; x < geo.w; ++x) {
                        const auto sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(geo.pad);
                        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(geo.h) &&
                                            sx < static_cast<std::ptrdiff_t>(geo.w);
                        row[y * geo.w + x] = inside ? plane[sy * static_cast<std::ptrdiff_t>(geo.w) + sx] : 0.0;
                    }
                }
            }
    }
}

// Adjoint of im2col: accumulates col rows back into the input planes.
void col2im(const double* col, const ConvGeometry& geo, double* in) {
    for (std::size_t ci = 0; ci < geo.cin_g; ++ci) {
        double* plane = in + ci * geo.hw;
        for (std::size_t ky = 0; ky < geo.k; ++ky)
            for (std::size_t kx = 0; kx < geo.k; ++kx) {
                const double* row = col + ((ci * geo.k + ky) * geo.k + kx) * geo.hw;
                for (std::size_t y = 0; y < geo.h; ++y) {
                    const auto sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(geo.pad);
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(geo.h)) continue;
                    for (std::size_t x = 0; x < geo.w; ++x) {
                        const auto sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(geo.pad);
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(geo.w)) continue;
                        plane[sy * static_cast<std::ptrdiff_t>(geo.w) + sx] += row[y * geo.w + x];
                    }
                }
            }
    }
}

}  // namespace

Var conv2d(Graph& g, Var x, Var kernel, std::size_t groups) {
    const Shape xs = g.shape(x);
    const Shape ks = g.shape(kernel);
    if (ks.h != ks.w || (ks.h != 1 && ks.h != 3)) throw ShapeError("conv2d: kernel must be 1x1 or 3x3, got " + ks.str());
    if (groups == 0 || xs.c % groups != 0 || ks.n % groups != 0 || ks.c * groups != xs.c)
        throw ShapeError("conv2d: kernel " + ks.str() + " incompatible with input " + xs.str() + " and groups=" +
                         std::to_string(groups));

    const ConvGeometry geo{xs.h, xs.w, ks.h, ks.h / 2, xs.c / groups, ks.n / groups, ks.c * ks.h * ks.w, xs.plane()};
    const simd::Kernels& kern = simd::active();
    Tensor4 out(Shape{xs.n, ks.n, xs.h, xs.w});
    {
        const Tensor4& in = g.value(x);
        const Tensor4& kv = g.value(kernel);
        std::vector<double> col(geo.q * geo.hw);
        for (std::size_t n = 0; n < xs.n; ++n)
            for (std::size_t gi = 0; gi < groups; ++gi) {
                im2col(in.plane(n, gi * geo.cin_g), geo, col.data());
                for (std::size_t co = 0; co < geo.cout_g; ++co) {
                    const std::size_t oc = gi * geo.cout_g + co;
                    const double* krow = kv.raw() + oc * geo.q;
                    double* dst = out.plane(n, oc);
                    for (std::size_t q = 0; q < geo.q; ++q) kern.axpy(krow[q], col.data() + q * geo.hw, dst, geo.hw);
                }
            }
    }

    return g.record(std::move(out), {x, kernel}, [x, kernel, geo, groups, xs](Graph& g, std::uint32_t self) {
        const simd::Kernels& kern = simd::active();
        const Tensor4& dout = g.out_grad(self);
        const Tensor4& in = g.value(x);
        const Tensor4& kv = g.value(kernel);
        if (Tensor4* dx = g.grad_slot(x)) {
            std::vector<double> dcol(geo.q * geo.hw);
            for (std::size_t n = 0; n < xs.n; ++n)
                for (std::size_t gi = 0; gi < groups; ++gi) {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    for (std::size_t co = 0; co < geo.cout_g; ++co) {
                        const std::size_t oc = gi * geo.cout_g + co;
                        const double* krow = kv.raw() + oc * geo.q;
                        const double* src = dout.plane(n, oc);
                        for (std::size_t q = 0; q < geo.q; ++q)
                            kern.axpy(krow[q], src, dcol.data() + q * geo.hw, geo.hw);
                    }
                    col2im(dcol.data(), geo, dx->plane(n, gi * geo.cin_g));
                }
        }
        if (Tensor4* dk = g.grad_slot(kernel)) {
            std::vector<double> col(geo.q * geo.hw), colt(geo.hw * geo.q);
            for (std::size_t n = 0; n < xs.n; ++n)
                for (std::size_t gi = 0; gi < groups; ++gi) {
                    im2col(in.plane(n, gi * geo.cin_g), geo, col.data());
                    for (std::size_t q = 0; q < geo.q; ++q)
                        for (std::size_t p = 0; p < geo.hw; ++p) colt[p * geo.q + q] = col[q * geo.hw + p];
                    for (std::size_t co = 0; co < geo.cout_g; ++co) {
                        const std::size_t oc = gi * geo.cout_g + co;
                        const double* src = dout.plane(n, oc);
                        double* dst = dk->raw() + oc * geo.q;
                        for (std::size_t p = 0; p < geo.hw; ++p) kern.axpy(src[p], colt.data() + p * geo.q, dst, geo.q);
                    }
                }
        }
    });
}

Var add_bias(Graph& g, Var x, Var bias) {
    const Shape xs = g.shape(x);
    if (!(g.shape(bias) == Shape{1, xs.c, 1, 1})) throw ShapeError("add_bias: bias must be (1, C, 1, 1)");
    Tensor4 out = g.value(x);
    const Tensor4& b = g.value(bias);
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t c = 0; c < xs.c; ++c) {
            double* p = out.plane(n, c);
            for (std::size_t i = 0; i < xs.plane(); ++i) p[i] += b[c];
        }
    return g.record(std::move(out), {x, bias}, [x, bias, xs](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        if (Tensor4* dx = g.grad_slot(x))
            for (std::size_t i = 0; i < dout.size(); ++i) (*dx)[i] += dout[i];
        if (Tensor4* db = g.grad_slot(bias))
            for (std::size_t n = 0; n < xs.n; ++n)
                for (std::size_t c = 0; c < xs.c; ++c) {
                    const double* p = dout.plane(n, c);
                    for (std::size_t i = 0; i < xs.plane(); ++i) (*db)[c] += p[i];
                }
    });
}

Var batchnorm(Graph& g, Var x, Var scale, Var shift, Param& running_mean, Param& running_var,
              const BatchNormOptions& opt) {
    const Shape xs = g.shape(x);
    const Shape cs{1, xs.c, 1, 1};
    if (!(g.shape(scale) == cs) || !(g.shape(shift) == cs) || !(running_mean.value.shape() == cs) ||
        !(running_var.value.shape() == cs))
        throw ShapeError("batchnorm: channel count mismatch for input " + xs.str());

    const Tensor4& in = g.value(x);
    const Tensor4& gamma = g.value(scale);
    const Tensor4& beta = g.value(shift);
    const std::size_t count = xs.n * xs.plane();
    const bool batch = opt.mode == BatchNormMode::batch;

    std::vector<double> inv_std(xs.c);
    Tensor4 xhat(xs);
    Tensor4 out(xs);
    for (std::size_t c = 0; c < xs.c; ++c) {
        double mean = 0.0, var = 0.0;
        if (batch) {
            for (std::size_t n = 0; n < xs.n; ++n) {
                const double* p = in.plane(n, c);
                for (std::size_t i = 0; i < xs.plane(); ++i) mean += p[i];
            }
            mean /= static_cast<double>(count);
            for (std::size_t n = 0; n < xs.n; ++n) {
                const double* p = in.plane(n, c);
                for (std::size_t i = 0; i < xs.plane(); ++i) var += (p[i] - mean) * (p[i] - mean);
            }
            var /= static_cast<double>(count);
            if (opt.update_running) {
                const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
                running_mean.value[c] = (1.0 - opt.momentum) * running_mean.value[c] + opt.momentum * mean;
                running_var.value[c] = (1.0 - opt.momentum) * running_var.value[c] + opt.momentum * unbiased;
            }
        } else {
            mean = running_mean.value[c];
            var = running_var.value[c];
        }
        inv_std[c] = 1.0 / std::sqrt(var + opt.eps);
        for (std::size_t n = 0; n < xs.n; ++n) {
            const double* p = in.plane(n, c);
            double* h = xhat.plane(n, c);
            double* o = out.plane(n, c);
            for (std::size_t i = 0; i < xs.plane(); ++i) {
                h[i] = (p[i] - mean) * inv_std[c];
                o[i] = gamma[c] * h[i] + beta[c];
            }
        }
    }

    return g.record(std::move(out), {x, scale, shift},
                    [x, scale, shift, xs, count, batch, inv_std = std::move(inv_std),
                     xhat = std::move(xhat)](Graph& g, std::uint32_t self) {
                        const Tensor4& dout = g.out_grad(self);
                        const Tensor4& gamma = g.value(scale);
                        Tensor4* dx = g.grad_slot(x);
                        Tensor4* dgamma = g.grad_slot(scale);
                        Tensor4* dbeta = g.grad_slot(shift);
                        const auto m = static_cast<double>(count);
                        for (std::size_t c = 0; c < xs.c; ++c) {
                            double sum_dy = 0.0, sum_dy_xhat = 0.0;
                            for (std::size_t n = 0; n < xs.n; ++n) {
                                const double* dy = dout.plane(n, c);
                                const double* h = xhat.plane(n, c);
                                for (std::size_t i = 0; i < xs.plane(); ++i) {
                                    sum_dy += dy[i];
                                    sum_dy_xhat += dy[i] * h[i];
                                }
                            }
                            if (dgamma) (*dgamma)[c] += sum_dy_xhat;
                            if (dbeta) (*dbeta)[c] += sum_dy;
                            if (!dx) continue;
                            const double k = gamma[c] * inv_std[c];
                            for (std::size_t n = 0; n < xs.n; ++n) {
                                const double* dy = dout.plane(n, c);
                                const double* h = xhat.plane(n, c);
                                double* d = dx->plane(n, c);
                                for (std::size_t i = 0; i < xs.plane(); ++i) {
                                    if (batch)
                                        d[i] += k / m * (m * dy[i] - sum_dy - h[i] * sum_dy_xhat);
                                    else
                                        d[i] += k * dy[i];
                                }
                            }
                        }
                    });
}

Var avgpool2(Graph& g, Var x) {
    const Shape xs = g.shape(x);
    if (xs.h < 2 || xs.w < 2) throw ShapeError("avgpool2: spatial dims must be >= 2, got " + xs.str());
    const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
    const Tensor4& in = g.value(x);
    Tensor4 out(os);
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t i = 0; i < os.h; ++i)
                for (std::size_t j = 0; j < os.w; ++j) {
                    const double s = ((in.at(n, c, 2 * i, 2 * j) + in.at(n, c, 2 * i, 2 * j + 1)) +
                                      in.at(n, c, 2 * i + 1, 2 * j)) +
                                     in.at(n, c, 2 * i + 1, 2 * j + 1);
                    out.at(n, c, i, j) = s * 0.25;
                }
    return g.record(std::move(out), {x}, [x, os](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        Tensor4* dx = g.grad_slot(x);
        for (std::size_t n = 0; n < os.n; ++n)
            for (std::size_t c = 0; c < os.c; ++c)
                for (std::size_t i = 0; i < os.h; ++i)
                    for (std::size_t j = 0; j < os.w; ++j) {
                        const double d = dout.at(n, c, i, j) * 0.25;
                        dx->at(n, c, 2 * i, 2 * j) += d;
                        dx->at(n, c, 2 * i, 2 * j + 1) += d;
                        dx->at(n, c, 2 * i + 1, 2 * j) += d;
                        dx->at(n, c, 2 * i + 1, 2 * j + 1) += d;
                    }
    });
}

Var upsample_nearest(Graph& g, Var x, std::size_t target_h, std::size_t target_w) {
    const Shape xs = g.shape(x);
    if (target_h == 0 || target_w == 0) throw ShapeError("upsample_nearest: empty target");
    std::vector<std::int32_t> map(target_h * target_w);
    for (std::size_t i = 0; i < target_h; ++i)
        for (std::size_t j = 0; j < target_w; ++j)
            map[i * target_w + j] = static_cast<std::int32_t>((i * xs.h / target_h) * xs.w + j * xs.w / target_w);
    return remap(g, x, {std::move(map)}, target_h, target_w);
}

Var remap(Graph& g, Var x, const std::vector<std::vector<std::int32_t>>& maps, std::size_t out_h,
          std::size_t out_w) {
    const Shape xs = g.shape(x);
    const std::size_t cells = out_h * out_w;
    if (maps.size() != 1 && maps.size() != xs.n) throw ShapeError("remap: need one index map per sample");
    for (const auto& m : maps) {
        if (m.size() != cells) throw ShapeError("remap: index map has wrong size");
        for (std::int32_t k : m)
            if (k >= static_cast<std::int32_t>(xs.plane())) throw ShapeError("remap: index out of range");
    }
    const Shape os{xs.n, xs.c, out_h, out_w};
    const Tensor4& in = g.value(x);
    Tensor4 out(os);
    for (std::size_t n = 0; n < xs.n; ++n) {
        const auto& m = maps[maps.size() == 1 ? 0 : n];
        for (std::size_t c = 0; c < xs.c; ++c) {
            const double* src = in.plane(n, c);
            double* dst = out.plane(n, c);
            for (std::size_t k = 0; k < cells; ++k) dst[k] = m[k] >= 0 ? src[m[k]] : 0.0;
        }
    }
    return g.record(std::move(out), {x}, [x, maps, os, cells](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        Tensor4* dx = g.grad_slot(x);
        for (std::size_t n = 0; n < os.n; ++n) {
            const auto& m = maps[maps.size() == 1 ? 0 : n];
            for (std::size_t c = 0; c < os.c; ++c) {
                const double* src = dout.plane(n, c);
                double* dst = dx->plane(n, c);
                for (std::size_t k = 0; k < cells; ++k)
                    if (m[k] >= 0) dst[m[k]] += src[k];
            }
        }
    });
}

Var relu(Graph& g, Var x) {
    const Tensor4& in = g.value(x);
    g.note_kinks(in.data());
    Tensor4 out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return g.record(std::move(out), {x}, [x](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        const Tensor4& in = g.value(x);
        Tensor4* dx = g.grad_slot(x);
        for (std::size_t i = 0; i < in.size(); ++i)
            if (in[i] > 0.0) (*dx)[i] += dout[i];
    });
}

namespace {
constexpr double kSigmoidClamp = 30.0;

double logistic(double v) {
    v = std::clamp(v, -kSigmoidClamp, kSigmoidClamp);
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Graph& g, Var x) {
    const Tensor4& in = g.value(x);
    Tensor4 out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = logistic(in[i]);
    return g.record(std::move(out), {x}, [x](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        const Tensor4& in = g.value(x);
        const Tensor4& y = g.value(Var{self});
        Tensor4* dx = g.grad_slot(x);
        for (std::size_t i = 0; i < in.size(); ++i)
            if (std::abs(in[i]) < kSigmoidClamp) (*dx)[i] += dout[i] * y[i] * (1.0 - y[i]);
    });
}

Var add(Graph& g, Var a, Var b) {
    require_same(g.shape(a), g.shape(b), "add");
    const Tensor4& va = g.value(a);
    const Tensor4& vb = g.value(b);
    Tensor4 out(va.shape());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
    return g.record(std::move(out), {a, b}, [a, b](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        for (Var v : {a, b})
            if (Tensor4* d = g.grad_slot(v))
                for (std::size_t i = 0; i < dout.size(); ++i) (*d)[i] += dout[i];
    });
}

Var mul(Graph& g, Var a, Var b) {
    require_same(g.shape(a), g.shape(b), "mul");
    const Tensor4& va = g.value(a);
    Tensor4 out(va.shape());
    simd::active().mul(va.raw(), g.value(b).raw(), out.raw(), out.size());
    return g.record(std::move(out), {a, b}, [a, b](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        const Tensor4& va = g.value(a);
        const Tensor4& vb = g.value(b);
        if (Tensor4* da = g.grad_slot(a))
            for (std::size_t i = 0; i < dout.size(); ++i) (*da)[i] += dout[i] * vb[i];
        if (Tensor4* db = g.grad_slot(b))
            for (std::size_t i = 0; i < dout.size(); ++i) (*db)[i] += dout[i] * va[i];
    });
}

Var affine(Graph& g, Var x, double c0, double c1) {
    const Tensor4& in = g.value(x);
    Tensor4 out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = c0 + c1 * in[i];
    return g.record(std::move(out), {x}, [x, c1](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        Tensor4* dx = g.grad_slot(x);
        for (std::size_t i = 0; i < dout.size(); ++i) (*dx)[i] += c1 * dout[i];
    });
}

Var scale(Graph& g, Var x, Var s) {
    require_scalar(g.shape(s), "scale");
    const Tensor4& in = g.value(x);
    const double sv = g.value(s)[0];
    Tensor4 out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = sv * in[i];
    return g.record(std::move(out), {x, s}, [x, s](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        const Tensor4& in = g.value(x);
        if (Tensor4* dx = g.grad_slot(x)) {
            const double sv = g.value(s)[0];
            for (std::size_t i = 0; i < dout.size(); ++i) (*dx)[i] += sv * dout[i];
        }
        if (Tensor4* ds = g.grad_slot(s)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < dout.size(); ++i) acc += dout[i] * in[i];
            (*ds)[0] += acc;
        }
    });
}

Var scale_add(Graph& g, Var x, Var a, Var y) {
    require_same(g.shape(x), g.shape(y), "scale_add");
    require_scalar(g.shape(a), "scale_add");
    Tensor4 out = g.value(x);
    simd::active().axpy(g.value(a)[0], g.value(y).raw(), out.raw(), out.size());
    return g.record(std::move(out), {x, a, y}, [x, a, y](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        if (Tensor4* dx = g.grad_slot(x))
            for (std::size_t i = 0; i < dout.size(); ++i) (*dx)[i] += dout[i];
        if (Tensor4* da = g.grad_slot(a)) {
            const Tensor4& vy = g.value(y);
            double acc = 0.0;
            for (std::size_t i = 0; i < dout.size(); ++i) acc += dout[i] * vy[i];
            (*da)[0] += acc;
        }
        if (Tensor4* dy = g.grad_slot(y)) simd::active().axpy(g.value(a)[0], dout.raw(), dy->raw(), dout.size());
    });
}

Var softmax_channels(Graph& g, Var x) {
    const Shape xs = g.shape(x);
    const Tensor4& in = g.value(x);
    Tensor4 out(xs);
    for (std::size_t n = 0; n < xs.n; ++n)
        for (std::size_t p = 0; p < xs.plane(); ++p) {
            double hi = in.plane(n, 0)[p];
            for (std::size_t c = 1; c < xs.c; ++c) hi = std::max(hi, in.plane(n, c)[p]);
            double sum = 0.0;
            for (std::size_t c = 0; c < xs.c; ++c) {
                const double e = std::exp(in.plane(n, c)[p] - hi);
                out.plane(n, c)[p] = e;
                sum += e;
            }
            for (std::size_t c = 0; c < xs.c; ++c) out.plane(n, c)[p] /= sum;
        }
    return g.record(std::move(out), {x}, [x, xs](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        const Tensor4& y = g.value(Var{self});
        Tensor4* dx = g.grad_slot(x);
        for (std::size_t n = 0; n < xs.n; ++n)
            for (std::size_t p = 0; p < xs.plane(); ++p) {
                double inner = 0.0;
                for (std::size_t c = 0; c < xs.c; ++c) inner += dout.plane(n, c)[p] * y.plane(n, c)[p];
                for (std::size_t c = 0; c < xs.c; ++c)
                    dx->plane(n, c)[p] += y.plane(n, c)[p] * (dout.plane(n, c)[p] - inner);
            }
    });
}

Var pick(Graph& g, Var x, std::size_t c) {
    const Shape xs = g.shape(x);
    if (xs.n != 1 || xs.h != 1 || xs.w != 1 || c >= xs.c) throw ShapeError("pick: expected (1, C, 1, 1) and c < C");
    Tensor4 out(Shape{}, g.value(x)[c]);
    return g.record(std::move(out), {x}, [x, c](Graph& g, std::uint32_t self) {
        (*g.grad_slot(x))[c] += g.out_grad(self)[0];
    });
}

Var mean_of(Graph& g, const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("mean_of: no inputs");
    Tensor4 out = g.value(xs[0]);
    for (std::size_t k = 1; k < xs.size(); ++k) {
        require_same(out.shape(), g.shape(xs[k]), "mean_of");
        const Tensor4& v = g.value(xs[k]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    }
    const auto count = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= count;
    return g.record(std::move(out), xs, [count](Graph& g, std::uint32_t self) {
        const Tensor4& dout = g.out_grad(self);
        for (Var v : g.inputs(self))
            if (Tensor4* d = g.grad_slot(v))
                for (std::size_t i = 0; i < dout.size(); ++i) (*d)[i] += dout[i] / count;
    });
}

Var mse_loss(Graph& g, Var pred, Var target) {
    require_same(g.shape(pred), g.shape(target), "mse_loss");
    const Tensor4& p = g.value(pred);
    const Tensor4& t = g.value(target);
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
    const auto count = static_cast<double>(p.size());
    Tensor4 out(Shape{}, acc / count);
    return g.record(std::move(out), {pred, target}, [pred, target, count](Graph& g, std::uint32_t self) {
        const double dy = g.out_grad(self)[0];
        const Tensor4& p = g.value(pred);
        const Tensor4& t = g.value(target);
        if (Tensor4* dp = g.grad_slot(pred))
            for (std::size_t i = 0; i < p.size(); ++i) (*dp)[i] += 2.0 * (p[i] - t[i]) / count * dy;
        if (Tensor4* dt = g.grad_slot(target))
            for (std::size_t i = 0; i < p.size(); ++i) (*dt)[i] -= 2.0 * (p[i] - t[i]) / count * dy;
    });
}

Var dot_const(Graph& g, Var x, const Tensor4& weights) {
    require_same(g.shape(x), weights.shape(), "dot_const");
    const Tensor4& v = g.value(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * weights[i];
    return g.record(Tensor4(Shape{}, acc), {x}, [x, weights](Graph& g, std::uint32_t self) {
        simd::active().axpy(g.out_grad(self)[0], weights.raw(), g.grad_slot(x)->raw(), weights.size());
    });
}

Var detach(Graph& g, Var x) { return g.constant(g.value(x)); }

void sgd_step(ParamStore& params, double lr, double momentum) {
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = params[k];
        if (p.buffer || !p.trainable) continue;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            p.velocity[i] = momentum * p.velocity[i] + p.grad[i];
            p.value[i] = p.value[i] - lr * p.velocity[i];
        }
    }
}

}  // namespace flowsel::nn
