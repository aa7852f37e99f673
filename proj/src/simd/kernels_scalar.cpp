#include "flowsel/simd/kernels.hpp"

#include <cmath>

namespace flowsel::simd {
namespace {

void distance_row(const double* q, FeatureColumns c, const double* w, double* out, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
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
    for (std::size_t i = 0; i < n; ++i) r[i] = row[i] < r[i] ? row[i] : r[i];
}

double max_value(const double* v, std::size_t n) {
    double best = v[0];
    for (std::size_t i = 1; i < n; ++i) best = v[i] > best ? v[i] : best;
    return best;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

}  // namespace

const Kernels& scalar_kernels() {
    static const Kernels k{Level::scalar, distance_row, min_update, max_value, axpy, mul};
    return k;
}

}  // namespace flowsel::simd
