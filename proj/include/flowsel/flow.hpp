#pragma once

// Integer-capacity network flow used by the transport oracles.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace flowsel::flow {

/// Dinic's algorithm on an adjacency-list residual graph.
class MaxFlow {
public:
    explicit MaxFlow(std::size_t nodes);

    /// Adds a directed edge; returns its id for flow queries.
    std::size_t add_edge(std::size_t from, std::size_t to, std::int64_t capacity);

    std::int64_t solve(std::size_t source, std::size_t sink);

    std::int64_t flow_on(std::size_t edge) const;

private:
    struct Edge {
        std::size_t to;
        std::int64_t cap;
        std::int64_t original;
    };

    bool build_levels(std::size_t s, std::size_t t);
    std::int64_t push(std::size_t v, std::size_t t, std::int64_t limit);

    std::vector<Edge> edges_;
    std::vector<std::vector<std::size_t>> adj_;
    std::vector<int> level_;
    std::vector<std::size_t> next_;
};

/// Successive shortest paths with Johnson potentials (Dijkstra). Costs are
/// real, capacities integral; all initial edge costs must be non-negative.
class MinCostFlow {
public:
    explicit MinCostFlow(std::size_t nodes);

    std::size_t add_edge(std::size_t from, std::size_t to, std::int64_t capacity, double cost);

    struct Result {
        std::int64_t flow = 0;
        double cost = 0.0;
    };

    /// Sends up to `limit` units from source to sink at minimum cost.
    Result solve(std::size_t source, std::size_t sink, std::int64_t limit);

    std::int64_t flow_on(std::size_t edge) const;

private:
    struct Edge {
        std::size_t to;
        std::int64_t cap;
        std::int64_t original;
        double cost;
    };

    std::vector<Edge> edges_;
    std::vector<std::vector<std::size_t>> adj_;
};

}  // namespace flowsel::flow
