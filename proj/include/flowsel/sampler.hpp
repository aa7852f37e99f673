#pragma once

// Medoid-initialized farthest-first selection and the coverage radius
// (k-center objective) it greedily minimizes.

#include "flowsel/features.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace flowsel {

struct SelectionResult {
    std::vector<std::size_t> indices;   ///< in selection order
    double coverage_radius = 0.0;       ///< == radius_trace.back()
    std::vector<double> radius_trace;   ///< max residual radius after each step
    std::size_t m = 0;
};

/// Greedy selection of m points from D.
///
/// The first point is the one whose mean distance to all points is closest
/// to the median of those means (lower middle for even n). Each further point
/// is the unselected one farthest from the current selection. Ties go to the
/// lowest index. Runs in O(n*m) after the O(n^2) mean pass by keeping the
/// running nearest-selected distance r.
///
/// Throws InvalidBudget unless 1 <= m <= n.
SelectionResult wgs_select(const DistanceMatrix& d, std::size_t m);

/// max_i min_{j in subset} D(i, j). Throws InvalidSubset for an empty subset
/// or out-of-range indices.
double coverage_radius(const DistanceMatrix& d, std::span<const std::size_t> subset);

/// floor(alpha * n) clamped to >= 1. Throws InvalidRatio unless 0 < alpha <= 1.
std::size_t budget_for_ratio(std::size_t n, double alpha);

/// extract_features -> distance_matrix -> wgs_select with m = budget_for_ratio.
SelectionResult select_ratio(std::span<const FrameRecord> frames, double alpha, const WeightVector& w,
                             TimestampMode mode = TimestampMode::relative);

/// Baseline selectors, used for comparisons.
enum class Strategy { wgs, random, uniform };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

/// The first m entries of a seeded Fisher-Yates permutation of [0, n). Prefixes
/// are nested: the m-selection is contained in every larger selection.
std::vector<std::size_t> random_select(std::size_t n, std::size_t m, std::uint64_t seed);

/// Fixed temporal stride: indices floor(k * n / m), k = 0..m-1.
std::vector<std::size_t> uniform_select(std::size_t n, std::size_t m);

/// Runs the given strategy on D and fills a SelectionResult (for random and
/// uniform the trace is the coverage radius of each prefix).
SelectionResult select_with(Strategy strategy, const DistanceMatrix& d, std::size_t m, std::uint64_t seed);

}  // namespace flowsel
