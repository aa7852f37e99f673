#pragma once

// Data-parallel inner loops shared by the selector and the tensor engine.
//
// Every kernel has a scalar reference and vector variants (AVX2 on x86-64,
// NEON on AArch64). The variants perform the same IEEE operations in the same
// order per element, so results are bit-identical to the scalar reference;
// tests/simd_test.cpp checks this for every level the host supports.

#include <cstddef>
#include <string_view>

namespace flowsel::simd {

enum class Level { scalar, avx2, neon };

std::string_view to_string(Level level);
Level parse_level(std::string_view name);

/// Structure-of-arrays view of 4-D feature points.
struct FeatureColumns {
    const double* t;
    const double* x;
    const double* y;
    const double* s;
};

struct Kernels {
    Level level;

    /// out[j] = sqrt(((w0*dt^2 + w1*dx^2) + w2*dy^2) + w3*ds^2) with
    /// d* = query - column[j], for j in [0, count).
    void (*distance_row)(const double* query, FeatureColumns cols, const double* weights,
                         double* out, std::size_t count);

    /// r[i] = min(r[i], row[i]).
    void (*min_update)(double* r, const double* row, std::size_t count);

    /// Largest element; count must be > 0.
    double (*max_value)(const double* values, std::size_t count);

    /// y[i] += a * x[i].
    void (*axpy)(double a, const double* x, double* y, std::size_t count);

    /// out[i] = a[i] * b[i].
    void (*mul)(const double* a, const double* b, double* out, std::size_t count);
};

const Kernels& scalar_kernels();
#if defined(__x86_64__) || defined(_M_X64)
const Kernels& avx2_kernels();
#endif
#if defined(__aarch64__)
const Kernels& neon_kernels();
#endif

/// True when the running CPU can execute the given level.
bool supported(Level level);

/// Kernels for the active level. The first call resolves the level from the
/// FLOWSEL_SIMD environment variable (scalar|avx2|neon) or picks the best
/// supported one.
const Kernels& active();

/// Overrides the active level; throws flowsel::Error if unsupported.
void set_level(Level level);

/// Kernels for a specific level; throws flowsel::Error if unsupported.
const Kernels& kernels_for(Level level);

}  // namespace flowsel::simd
