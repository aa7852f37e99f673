#pragma once

// Exact references for small instances: brute-force k-center, exact
// Wasserstein distances between uniform empirical measures, and checkers for
// the approximation bound and the metric axioms.

#include "flowsel/features.hpp"
#include "flowsel/sampler.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace flowsel {

constexpr std::uint64_t kMaxSubsets = 200000;
constexpr std::uint64_t kMaxMassUnits = 1000000;
constexpr std::size_t kMaxTransportCells = 10000;

struct KCenterSolution {
    std::vector<std::size_t> subset;  ///< sorted ascending
    double radius = 0.0;
};

/// Exact k-center by enumerating all m-subsets in lexicographic order; the
/// first subset attaining the minimal radius wins. Throws InstanceTooLarge
/// when C(n, m) > kMaxSubsets and InvalidBudget unless 1 <= m <= n.
KCenterSolution kcenter_bruteforce(const DistanceMatrix& d, std::size_t m);

/// Source support of size n with mass 1/n each, target support of size m
/// with mass 1/m each, ground costs in row-major n x m order.
struct TransportInstance {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<double> cost;

    double operator()(std::size_t i, std::size_t j) const { return cost[i * m + j]; }

    /// Rows: all points of D; columns: the subset.
    static TransportInstance from_subset(const DistanceMatrix& d, std::span<const std::size_t> subset);
};

/// Mass units per unit of probability, lcm(n, m). Throws InstanceTooLarge
/// above kMaxMassUnits.
std::int64_t transport_scale(const TransportInstance& inst);

/// W_inf: the smallest threshold t such that a coupling supported on
/// {cost <= t} exists. Binary search over the distinct costs with a max-flow
/// feasibility test.
double exact_winf(const TransportInstance& inst);

/// W_p for p in {1, 2} by min-cost flow. Throws InstanceTooLarge when
/// n*m > kMaxTransportCells and Error for other p.
double exact_wp(const TransportInstance& inst, int p);

struct OracleReport {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<std::size_t> greedy_indices;
    std::vector<std::size_t> optimal_subset;
    double greedy_radius = 0.0;
    double optimal_radius = 0.0;
    double ratio = 1.0;  ///< greedy / optimal; 1 when both are zero
    double w_inf = 0.0;
    double w1 = 0.0;
    double w2 = 0.0;
    bool bound_holds = false;
};

constexpr double kBoundSlack = 1e-9;

/// Runs the greedy selector, the brute-force optimum and the transport
/// oracles on one instance. bound_holds <=> ratio <= 2 + slack and
/// W_inf <= greedy radius + slack.
OracleReport verify_instance(const DistanceMatrix& d, std::size_t m);
OracleReport verify_instance(std::span<const FeatureVector> features, const WeightVector& w, std::size_t m);

struct MetricCheck {
    std::size_t trials = 0;
    std::size_t symmetry_failures = 0;
    std::size_t identity_failures = 0;
    std::size_t triangle_failures = 0;
    double worst_triangle_excess = 0.0;  ///< max of d(a,c) - d(a,b) - d(b,c), relative

    bool ok() const { return symmetry_failures == 0 && identity_failures == 0 && triangle_failures == 0; }
};

constexpr double kTriangleSlack = 1e-12;

/// Samples `trials` random triples and checks exact symmetry, exact identity,
/// and the triangle inequality with relative slack kTriangleSlack.
MetricCheck check_metric(std::span<const FeatureVector> features, const WeightVector& w, std::size_t trials,
                         std::uint64_t seed);

/// check_metric(...).ok(). Requires at least 3 features.
bool verify_metric(std::span<const FeatureVector> features, const WeightVector& w, std::size_t trials,
                   std::uint64_t seed);

}  // namespace flowsel
