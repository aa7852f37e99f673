#include "flowsel/features.hpp"

#include "flowsel/error.hpp"
#include "flowsel/simd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

namespace flowsel {

WeightVector::WeightVector(std::array<double, 4> w) : w_(w) {
    bool any_positive = false;
    for (double v : w_) {
        if (!std::isfinite(v) || v < 0.0) throw InvalidWeights("weights must be finite and non-negative");
        any_positive = any_positive || v > 0.0;
    }
    if (!any_positive) throw InvalidWeights("at least one weight must be positive");
}

WeightVector WeightVector::parse(const std::string& text) {
    std::array<double, 4> w{};
    std::stringstream ss(text);
    std::string item;
    std::size_t k = 0;
    while (std::getline(ss, item, ',')) {
        if (k == 4) throw InvalidWeights("expected 4 comma-separated weights, got more: " + text);
        try {
            std::size_t used = 0;
            w[k] = std::stod(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw InvalidWeights("bad weight '" + item + "'");
        }
        ++k;
    }
    if (k != 4) throw InvalidWeights("expected 4 comma-separated weights: " + text);
    return WeightVector(w);
}

namespace {

// Maps v in [lo, hi] onto [-1, 1]; a degenerate range maps to 0.
double project_unit(double v, double lo, double hi) {
    const double range = hi - lo;
    if (!(range > 0.0)) return 0.0;
    return 2.0 * ((v - lo) / range) - 1.0;
}

}  // namespace

std::vector<FeatureVector> extract_features(std::span<const FrameRecord> frames, TimestampMode mode) {
    if (frames.empty()) throw EmptyDataset();

    std::int64_t t_min = frames.front().t_us;
    double x_lo = frames.front().pose[0], x_hi = x_lo;
    double y_lo = frames.front().pose[1], y_hi = y_lo;
    for (const auto& f : frames) {
        if (f.t_us < 0) throw InvalidRecord(f.id, "negative timestamp");
        for (double c : f.pose)
            if (!std::isfinite(c)) throw InvalidRecord(f.id, "non-finite pose");
        t_min = std::min(t_min, f.t_us);
        x_lo = std::min(x_lo, f.pose[0]);
        x_hi = std::max(x_hi, f.pose[0]);
        y_lo = std::min(y_lo, f.pose[1]);
        y_hi = std::max(y_hi, f.pose[1]);
    }
    const std::int64_t t_ref = mode == TimestampMode::relative ? t_min : 0;

    const auto n = static_cast<double>(frames.size());
    std::vector<FeatureVector> out;
    out.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto& f = frames[i];
        out.push_back({
            static_cast<double>(f.t_us - t_ref) / kTimeScaleUs,
            project_unit(f.pose[0], x_lo, x_hi),
            project_unit(f.pose[1], y_lo, y_hi),
            static_cast<double>(i + 1) / n,
        });
    }
    return out;
}

double weighted_distance(const FeatureVector& a, const FeatureVector& b, const WeightVector& w) {
    const double dt = a.t - b.t;
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double ds = a.s - b.s;
    double acc = w.t() * (dt * dt);
    acc = acc + w.x() * (dx * dx);
    acc = acc + w.y() * (dy * dy);
    acc = acc + w.s() * (ds * ds);
    return std::sqrt(acc);
}

DistanceMatrix::DistanceMatrix(std::size_t n, std::vector<double> entries)
    : n_(n), entries_(std::move(entries)) {
    if (entries_.size() != n * n) throw Error("distance matrix buffer has wrong size");
}

DistanceMatrix distance_matrix(std::span<const FeatureVector> features, const WeightVector& w,
                               unsigned threads) {
    if (features.empty()) throw EmptyDataset();
    const std::size_t n = features.size();

    std::vector<double> t(n), x(n), y(n), s(n);
    for (std::size_t i = 0; i < n; ++i) {
        t[i] = features[i].t;
        x[i] = features[i].x;
        y[i] = features[i].y;
        s[i] = features[i].s;
    }
    const simd::Kernels& k = simd::active();
    std::vector<double> d(n * n, 0.0);

    // Row i fills the strict upper triangle (i, j > i) and mirrors it. Rows
    // are interleaved across workers to balance the triangular load.
    auto work = [&](std::size_t first, std::size_t stride) {
        for (std::size_t i = first; i < n; i += stride) {
            const std::size_t count = n - i - 1;
            if (count == 0) continue;
            const double q[4] = {t[i], x[i], y[i], s[i]};
            const simd::FeatureColumns cols{t.data() + i + 1, x.data() + i + 1, y.data() + i + 1,
                                            s.data() + i + 1};
            double* row = d.data() + i * n + i + 1;
            k.distance_row(q, cols, w.values().data(), row, count);
            for (std::size_t c = 0; c < count; ++c) d[(i + 1 + c) * n + i] = row[c];
        }
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    if (workers == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned p = 0; p < workers; ++p) pool.emplace_back(work, p, workers);
    }
    return DistanceMatrix(n, std::move(d));
}

}  // namespace flowsel
