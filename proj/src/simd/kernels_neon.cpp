#include "flowsel/simd/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

#include <cmath>

namespace flowsel::simd {
namespace {

void distance_row(const double* q, FeatureColumns c, const double* w, double* out, std::size_t n) {
    const float64x2_t qt = vdupq_n_f64(q[0]);
    const float64x2_t qx = vdupq_n_f64(q[1]);
    const float64x2_t qy = vdupq_n_f64(q[2]);
    const float64x2_t qs = vdupq_n_f64(q[3]);
    const float64x2_t wt = vdupq_n_f64(w[0]);
    const float64x2_t wx = vdupq_n_f64(w[1]);
    const float64x2_t wy = vdupq_n_f64(w[2]);
    const float64x2_t ws = vdupq_n_f64(w[3]);
    std::size_t j = 0;
    for (; j + 2 <= n; j += 2) {
        const float64x2_t dt = vsubq_f64(qt, vld1q_f64(c.t + j));
        const float64x2_t dx = vsubq_f64(qx, vld1q_f64(c.x + j));
        const float64x2_t dy = vsubq_f64(qy, vld1q_f64(c.y + j));
        const float64x2_t ds = vsubq_f64(qs, vld1q_f64(c.s + j));
        float64x2_t acc = vmulq_f64(wt, vmulq_f64(dt, dt));
        acc = vaddq_f64(acc, vmulq_f64(wx, vmulq_f64(dx, dx)));
        acc = vaddq_f64(acc, vmulq_f64(wy, vmulq_f64(dy, dy)));
        acc = vaddq_f64(acc, vmulq_f64(ws, vmulq_f64(ds, ds)));
        vst1q_f64(out + j, vsqrtq_f64(acc));
    }
    for (; j < n; ++j) {
        const double dt = q[0] - c.t[j];
        const double dx = q[1] - c.x[j];
        const double dy = q[2] - c.y[j];
        const double ds = q[3] - c.s[j];
        double acc = w[0] * (dt * dt);
        acc = acc + w[1] * (dx * dx);
        acc = acc + w[2] * (dy * dy);
        acc = acc + w[3] * (ds * ds);
        out[j] = std::sqrt(acc);
    }
}

void min_update(double* r, const double* row, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t a = vld1q_f64(row + i);
        const float64x2_t b = vld1q_f64(r + i);
        vst1q_f64(r + i, vbslq_f64(vcltq_f64(a, b), a, b));
    }
    for (; i < n; ++i) r[i] = row[i] < r[i] ? row[i] : r[i];
}

double max_value(const double* v, std::size_t n) {
    double best = v[0];
    for (std::size_t i = 1; i < n; ++i) best = v[i] > best ? v[i] : best;
    return best;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
    for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

}  // namespace

const Kernels& neon_kernels() {
    static const Kernels k{Level::neon, distance_row, min_update, max_value, axpy, mul};
    return k;
}

}  // namespace flowsel::simd

#endif
