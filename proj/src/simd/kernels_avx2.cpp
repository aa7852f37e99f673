// Compiled with -mavx2 (no FMA); only reached after a runtime CPU check.
#include "flowsel/simd/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace flowsel::simd {
namespace {

void distance_row(const double* q, FeatureColumns c, const double* w, double* out, std::size_t n) {
    const __m256d qt = _mm256_set1_pd(q[0]);
    const __m256d qx = _mm256_set1_pd(q[1]);
    const __m256d qy = _mm256_set1_pd(q[2]);
    const __m256d qs = _mm256_set1_pd(q[3]);
    const __m256d wt = _mm256_set1_pd(w[0]);
    const __m256d wx = _mm256_set1_pd(w[1]);
    const __m256d wy = _mm256_set1_pd(w[2]);
    const __m256d ws = _mm256_set1_pd(w[3]);
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        const __m256d dt = _mm256_sub_pd(qt, _mm256_loadu_pd(c.t + j));
        const __m256d dx = _mm256_sub_pd(qx, _mm256_loadu_pd(c.x + j));
        const __m256d dy = _mm256_sub_pd(qy, _mm256_loadu_pd(c.y + j));
        const __m256d ds = _mm256_sub_pd(qs, _mm256_loadu_pd(c.s + j));
        __m256d acc = _mm256_mul_pd(wt, _mm256_mul_pd(dt, dt));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(wx, _mm256_mul_pd(dx, dx)));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(wy, _mm256_mul_pd(dy, dy)));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(ws, _mm256_mul_pd(ds, ds)));
        _mm256_storeu_pd(out + j, _mm256_sqrt_pd(acc));
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
    for (; i + 4 <= n; i += 4) {
        // min_pd(a, b) returns b unless a < b, matching the scalar select.
        const __m256d a = _mm256_loadu_pd(row + i);
        const __m256d b = _mm256_loadu_pd(r + i);
        _mm256_storeu_pd(r + i, _mm256_min_pd(a, b));
    }
    for (; i < n; ++i) r[i] = row[i] < r[i] ? row[i] : r[i];
}

double max_value(const double* v, std::size_t n) {
    std::size_t i = 0;
    double best = v[0];
    if (n >= 4) {
        __m256d acc = _mm256_loadu_pd(v);
        for (i = 4; i + 4 <= n; i += 4) acc = _mm256_max_pd(_mm256_loadu_pd(v + i), acc);
        alignas(32) double lanes[4];
        _mm256_store_pd(lanes, acc);
        best = lanes[0];
        for (int k = 1; k < 4; ++k) best = lanes[k] > best ? lanes[k] : best;
    } else {
        i = 1;
    }
    for (; i < n; ++i) best = v[i] > best ? v[i] : best;
    return best;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

}  // namespace

const Kernels& avx2_kernels() {
    static const Kernels k{Level::avx2, distance_row, min_update, max_value, axpy, mul};
    return k;
}

}  // namespace flowsel::simd
