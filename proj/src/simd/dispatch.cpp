#include "flowsel/error.hpp"
#include "flowsel/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace flowsel::simd {

std::string_view to_string(Level level) {
    switch (level) {
        case Level::scalar: return "scalar";
        case Level::avx2: return "avx2";
        case Level::neon: return "neon";
    }
    return "unknown";
}

Level parse_level(std::string_view name) {
    if (name == "scalar") return Level::scalar;
    if (name == "avx2") return Level::avx2;
    if (name == "neon") return Level::neon;
    throw Error("unknown SIMD level '" + std::string(name) + "'");
}

bool supported(Level level) {
    switch (level) {
        case Level::scalar: return true;
        case Level::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return __builtin_cpu_supports("avx2");
#else
            return false;
#endif
        case Level::neon:
#if defined(__aarch64__)
            return true;
#else
            return false;
#endif
    }
    return false;
}

const Kernels& kernels_for(Level level) {
    if (!supported(level)) throw Error("SIMD level '" + std::string(to_string(level)) + "' not supported on this CPU");
    switch (level) {
#if defined(__x86_64__) || defined(_M_X64)
        case Level::avx2: return avx2_kernels();
#endif
#if defined(__aarch64__)
        case Level::neon: return neon_kernels();
#endif
        default: return scalar_kernels();
    }
}

namespace {

const Kernels* resolve_default() {
    if (const char* env = std::getenv("FLOWSEL_SIMD"); env != nullptr && *env != '\0')
        return &kernels_for(parse_level(env));
    if (supported(Level::avx2)) return &kernels_for(Level::avx2);
    if (supported(Level::neon)) return &kernels_for(Level::neon);
    return &scalar_kernels();
}

std::atomic<const Kernels*>& slot() {
    static std::atomic<const Kernels*> current{resolve_default()};
    return current;
}

}  // namespace

const Kernels& active() { return *slot().load(std::memory_order_acquire); }

void set_level(Level level) { slot().store(&kernels_for(level), std::memory_order_release); }

}  // namespace flowsel::simd
