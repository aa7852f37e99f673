#include "flowsel/oracles.hpp"

#include "flowsel/error.hpp"
#include "flowsel/flow.hpp"
#include "flowsel/rng.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <string>

namespace flowsel {

namespace {

// C(n, k), saturating at cap + 1.
std::uint64_t binomial_capped(std::uint64_t n, std::uint64_t k, std::uint64_t cap) {
    k = std::min(k, n - k);
    std::uint64_t c = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        c = c * (n - k + i) / i;
        if (c > cap) return cap + 1;
    }
    return c;
}

}  // namespace

KCenterSolution kcenter_bruteforce(const DistanceMatrix& d, std::size_t m) {
    const std::size_t n = d.size();
    if (m == 0 || m > n) throw InvalidBudget("budget outside [1, n]");
    if (binomial_capped(n, m, kMaxSubsets) > kMaxSubsets)
        throw InstanceTooLarge("C(" + std::to_string(n) + ", " + std::to_string(m) + ") exceeds " +
                               std::to_string(kMaxSubsets) + " subsets");

    std::vector<std::size_t> subset(m);
    std::iota(subset.begin(), subset.end(), std::size_t{0});
    KCenterSolution best{subset, coverage_radius(d, subset)};
    for (;;) {
        // Next combination in lexicographic order.
        std::size_t i = m;
        while (i > 0 && subset[i - 1] == n - m + (i - 1)) --i;
        if (i == 0) break;
        ++subset[i - 1];
        for (std::size_t j = i; j < m; ++j) subset[j] = subset[j - 1] + 1;
        const double r = coverage_radius(d, subset);
        if (r < best.radius) best = {subset, r};
    }
    return best;
}

TransportInstance TransportInstance::from_subset(const DistanceMatrix& d, std::span<const std::size_t> subset) {
    TransportInstance inst;
    inst.n = d.size();
    inst.m = subset.size();
    inst.cost.resize(inst.n * inst.m);
    for (std::size_t i = 0; i < inst.n; ++i)
        for (std::size_t j = 0; j < inst.m; ++j) inst.cost[i * inst.m + j] = d(i, subset[j]);
    return inst;
}

std::int64_t transport_scale(const TransportInstance& inst) {
    if (inst.n == 0 || inst.m == 0) throw EmptyDataset();
    const std::uint64_t l = std::lcm<std::uint64_t>(inst.n, inst.m);
    if (l > kMaxMassUnits)
        throw InstanceTooLarge("lcm(n, m) = " + std::to_string(l) + " exceeds " + std::to_string(kMaxMassUnits));
    return static_cast<std::int64_t>(l);
}

namespace {

bool coupling_exists(const TransportInstance& inst, std::int64_t scale, double threshold) {
    const std::size_t source = inst.n + inst.m;
    const std::size_t sink = source + 1;
    flow::MaxFlow g(inst.n + inst.m + 2);
    const std::int64_t out_mass = scale / static_cast<std::int64_t>(inst.n);
    const std::int64_t in_mass = scale / static_cast<std::int64_t>(inst.m);
    for (std::size_t i = 0; i < inst.n; ++i) g.add_edge(source, i, out_mass);
    for (std::size_t j = 0; j < inst.m; ++j) g.add_edge(inst.n + j, sink, in_mass);
    for (std::size_t i = 0; i < inst.n; ++i)
        for (std::size_t j = 0; j < inst.m; ++j)
            if (inst(i, j) <= threshold) g.add_edge(i, inst.n + j, scale);
    return g.solve(source, sink) == scale;
}

}  // namespace

double exact_winf(const TransportInstance& inst) {
    const std::int64_t scale = transport_scale(inst);
    std::vector<double> levels = inst.cost;
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

    // Feasibility is monotone in the threshold and holds at the largest cost.
    std::size_t lo = 0, hi = levels.size() - 1;
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (coupling_exists(inst, scale, levels[mid]))
            hi = mid;
        else
            lo = mid + 1;
    }
    return levels[lo];
}

double exact_wp(const TransportInstance& inst, int p) {
    if (p != 1 && p != 2) throw Error("exact_wp supports p in {1, 2}");
    if (inst.n * inst.m > kMaxTransportCells)
        throw InstanceTooLarge("n*m = " + std::to_string(inst.n * inst.m) + " exceeds " +
                               std::to_string(kMaxTransportCells));
    const std::int64_t scale = transport_scale(inst);
    const std::size_t source = inst.n + inst.m;
    const std::size_t sink = source + 1;
    flow::MinCostFlow g(inst.n + inst.m + 2);
    for (std::size_t i = 0; i < inst.n; ++i) g.add_edge(source, i, scale / static_cast<std::int64_t>(inst.n), 0.0);
    for (std::size_t j = 0; j < inst.m; ++j)
        g.add_edge(inst.n + j, sink, scale / static_cast<std::int64_t>(inst.m), 0.0);
    for (std::size_t i = 0; i < inst.n; ++i)
        for (std::size_t j = 0; j < inst.m; ++j) {
            const double c = inst(i, j);
            g.add_edge(i, inst.n + j, scale, p == 1 ? c : c * c);
        }
    const auto res = g.solve(source, sink, scale);
    if (res.flow != scale) throw Error("transport flow incomplete");
    const double mean = std::max(0.0, res.cost / static_cast<double>(scale));
    return p == 1 ? mean : std::sqrt(mean);
}

OracleReport verify_instance(const DistanceMatrix& d, std::size_t m) {
    OracleReport rep;
    rep.n = d.size();
    rep.m = m;
    const SelectionResult greedy = wgs_select(d, m);
    const KCenterSolution opt = kcenter_bruteforce(d, m);
    rep.greedy_indices = greedy.indices;
    rep.optimal_subset = opt.subset;
    rep.greedy_radius = greedy.coverage_radius;
    rep.optimal_radius = opt.radius;
    if (opt.radius > 0.0)
        rep.ratio = greedy.coverage_radius / opt.radius;
    else
        rep.ratio = greedy.coverage_radius > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;

    const auto inst = TransportInstance::from_subset(d, greedy.indices);
    rep.w_inf = exact_winf(inst);
    if (inst.n * inst.m <= kMaxTransportCells) {
        rep.w1 = exact_wp(inst, 1);
        rep.w2 = exact_wp(inst, 2);
    }
    rep.bound_holds = rep.ratio <= 2.0 + kBoundSlack && rep.w_inf <= rep.greedy_radius + kBoundSlack;
    return rep;
}

OracleReport verify_instance(std::span<const FeatureVector> features, const WeightVector& w, std::size_t m) {
    return verify_instance(distance_matrix(features, w), m);
}

MetricCheck check_metric(std::span<const FeatureVector> features, const WeightVector& w, std::size_t trials,
                         std::uint64_t seed) {
    if (features.size() < 3) throw Error("metric check needs at least 3 features");
    MetricCheck out;
    out.trials = trials;
    Rng rng(seed);
    const std::uint64_t n = features.size();
    for (std::size_t k = 0; k < trials; ++k) {
        const auto& a = features[rng.below(n)];
        const auto& b = features[rng.below(n)];
        const auto& c = features[rng.below(n)];
        const double ab = weighted_distance(a, b, w);
        const double ba = weighted_distance(b, a, w);
        const double bc = weighted_distance(b, c, w);
        const double ac = weighted_distance(a, c, w);
        if (ab != ba) ++out.symmetry_failures;
        if (weighted_distance(a, a, w) != 0.0) ++out.identity_failures;
        const double scale = std::max({ab, bc, ac});
        const double excess = scale > 0.0 ? (ac - ab - bc) / scale : 0.0;
        out.worst_triangle_excess = std::max(out.worst_triangle_excess, excess);
        if (excess > kTriangleSlack) ++out.triangle_failures;
    }
    return out;
}

bool verify_metric(std::span<const FeatureVector> features, const WeightVector& w, std::size_t trials,
                   std::uint64_t seed) {
    return check_metric(features, w, trials, seed).ok();
}

}  // namespace flowsel
