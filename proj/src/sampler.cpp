#include "flowsel/sampler.hpp"

#include "flowsel/error.hpp"
#include "flowsel/rng.hpp"
#include "flowsel/simd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace flowsel {

namespace {

// Marks selected points in r; below every real distance.
constexpr double kSelected = -1.0;

std::size_t first_index_of(std::span<const double> v, double value) {
    return static_cast<std::size_t>(std::find(v.begin(), v.end(), value) - v.begin());
}

}  // namespace

SelectionResult wgs_select(const DistanceMatrix& d, std::size_t m) {
    const std::size_t n = d.size();
    if (m == 0 || m > n)
        throw InvalidBudget("budget m=" + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");

    // Medoid-like start: mean distance closest to the median mean.
    std::vector<double> mean(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (double v : d.row(i)) acc += v;
        mean[i] = acc / static_cast<double>(n);
    }
    std::vector<double> sorted = mean;
    const std::size_t mid = (n - 1) / 2;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
    const double median = sorted[mid];
    std::size_t start = 0;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double gap = std::abs(mean[i] - median);
        if (gap < best_gap) {
            best_gap = gap;
            start = i;
        }
    }

    const simd::Kernels& k = simd::active();
    SelectionResult out;
    out.m = m;
    out.indices.reserve(m);
    out.radius_trace.reserve(m);

    std::vector<double> r(d.row(start).begin(), d.row(start).end());
    r[start] = kSelected;
    out.indices.push_back(start);
    out.radius_trace.push_back(std::max(0.0, k.max_value(r.data(), n)));

    while (out.indices.size() < m) {
        const double far = k.max_value(r.data(), n);
        const std::size_t next = first_index_of(r, far);
        out.indices.push_back(next);
        k.min_update(r.data(), d.row(next).data(), n);
        r[next] = kSelected;
        out.radius_trace.push_back(std::max(0.0, k.max_value(r.data(), n)));
    }
    out.coverage_radius = out.radius_trace.back();
    return out;
}

double coverage_radius(const DistanceMatrix& d, std::span<const std::size_t> subset) {
    if (subset.empty()) throw InvalidSubset("coverage radius of an empty subset");
    const std::size_t n = d.size();
    for (std::size_t j : subset)
        if (j >= n) throw InvalidSubset("subset index " + std::to_string(j) + " out of range");
    const simd::Kernels& k = simd::active();
    std::vector<double> r(d.row(subset[0]).begin(), d.row(subset[0]).end());
    for (std::size_t j : subset.subspan(1)) k.min_update(r.data(), d.row(j).data(), n);
    return k.max_value(r.data(), n);
}

std::size_t budget_for_ratio(std::size_t n, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidRatio(alpha);
    const auto m = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n)));
    return std::max<std::size_t>(1, m);
}

SelectionResult select_ratio(std::span<const FrameRecord> frames, double alpha, const WeightVector& w,
                             TimestampMode mode) {
    const std::size_t m = budget_for_ratio(frames.size(), alpha);
    const auto features = extract_features(frames, mode);
    return wgs_select(distance_matrix(features, w), m);
}

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::wgs: return "wgs";
        case Strategy::random: return "random";
        case Strategy::uniform: return "uniform";
    }
    return "unknown";
}

Strategy parse_strategy(std::string_view name) {
    if (name == "wgs") return Strategy::wgs;
    if (name == "random") return Strategy::random;
    if (name == "uniform") return Strategy::uniform;
    throw Error("unknown strategy '" + std::string(name) + "'");
}

std::vector<std::size_t> random_select(std::size_t n, std::size_t m, std::uint64_t seed) {
    if (m == 0 || m > n) throw InvalidBudget("budget outside [1, n]");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(perm[i], perm[j]);
    }
    perm.resize(m);
    return perm;
}

std::vector<std::size_t> uniform_select(std::size_t n, std::size_t m) {
    if (m == 0 || m > n) throw InvalidBudget("budget outside [1, n]");
    std::vector<std::size_t> out(m);
    for (std::size_t k = 0; k < m; ++k) out[k] = k * n / m;
    return out;
}

SelectionResult select_with(Strategy strategy, const DistanceMatrix& d, std::size_t m, std::uint64_t seed) {
    if (strategy == Strategy::wgs) return wgs_select(d, m);
    SelectionResult out;
    out.m = m;
    out.indices = strategy == Strategy::random ? random_select(d.size(), m, seed) : uniform_select(d.size(), m);
    const simd::Kernels& k = simd::active();
    const std::size_t n = d.size();
    std::vector<double> r(d.row(out.indices[0]).begin(), d.row(out.indices[0]).end());
    out.radius_trace.push_back(k.max_value(r.data(), n));
    for (std::size_t i = 1; i < m; ++i) {
        k.min_update(r.data(), d.row(out.indices[i]).data(), n);
        out.radius_trace.push_back(k.max_value(r.data(), n));
    }
    out.coverage_radius = out.radius_trace.back();
    return out;
}

}  // namespace flowsel
