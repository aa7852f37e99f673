#include "flowsel/flow.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <queue>
#include <utility>

namespace flowsel::flow {

MaxFlow::MaxFlow(std::size_t nodes) : adj_(nodes), level_(nodes), next_(nodes) {}

std::size_t MaxFlow::add_edge(std::size_t from, std::size_t to, std::int64_t capacity) {
    const std::size_t id = edges_.size();
    edges_.push_back({to, capacity, capacity});
    adj_[from].push_back(id);
    edges_.push_back({from, 0, 0});
    adj_[to].push_back(id + 1);
    return id;
}

bool MaxFlow::build_levels(std::size_t s, std::size_t t) {
    std::fill(level_.begin(), level_.end(), -1);
    std::queue<std::size_t> q;
    level_[s] = 0;
    q.push(s);
    while (!q.empty()) {
        const std::size_t v = q.front();
        q.pop();
        for (std::size_t id : adj_[v]) {
            const Edge& e = edges_[id];
            if (e.cap > 0 && level_[e.to] < 0) {
                level_[e.to] = level_[v] + 1;
                q.push(e.to);
            }
        }
    }
    return level_[t] >= 0;
}

std::int64_t MaxFlow::push(std::size_t v, std::size_t t, std::int64_t limit) {
    if (v == t) return limit;
    for (std::size_t& i = next_[v]; i < adj_[v].size(); ++i) {
        const std::size_t id = adj_[v][i];
        Edge& e = edges_[id];
        if (e.cap <= 0 || level_[e.to] != level_[v] + 1) continue;
        const std::int64_t got = push(e.to, t, std::min(limit, e.cap));
        if (got > 0) {
            e.cap -= got;
            edges_[id ^ 1].cap += got;
            return got;
        }
    }
    return 0;
}

std::int64_t MaxFlow::solve(std::size_t source, std::size_t sink) {
    std::int64_t total = 0;
    while (build_levels(source, sink)) {
        std::fill(next_.begin(), next_.end(), 0);
        while (const std::int64_t f = push(source, sink, std::numeric_limits<std::int64_t>::max()))
            total += f;
    }
    return total;
}

std::int64_t MaxFlow::flow_on(std::size_t edge) const { return edges_[edge].original - edges_[edge].cap; }

MinCostFlow::MinCostFlow(std::size_t nodes) : adj_(nodes) {}

std::size_t MinCostFlow::add_edge(std::size_t from, std::size_t to, std::int64_t capacity, double cost) {
    const std::size_t id = edges_.size();
    edges_.push_back({to, capacity, capacity, cost});
    adj_[from].push_back(id);
    edges_.push_back({from, 0, 0, -cost});
    adj_[to].push_back(id + 1);
    return id;
}

MinCostFlow::Result MinCostFlow::solve(std::size_t source, std::size_t sink, std::int64_t limit) {
    const std::size_t n = adj_.size();
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> potential(n, 0.0), dist(n);
    std::vector<std::size_t> via(n);
    Result res;

    while (res.flow < limit) {
        std::fill(dist.begin(), dist.end(), kInf);
        dist[source] = 0.0;
        using Item = std::pair<double, std::size_t>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        pq.push({0.0, source});
        while (!pq.empty()) {
            const auto [dv, v] = pq.top();
            pq.pop();
            if (dv > dist[v]) continue;
            for (std::size_t id : adj_[v]) {
                const Edge& e = edges_[id];
                if (e.cap <= 0) continue;
                // Reduced costs are non-negative up to rounding; clamp so
                // Dijkstra's settled order stays valid.
                const double reduced = std::max(0.0, e.cost + potential[v] - potential[e.to]);
                const double nd = dv + reduced;
                if (nd < dist[e.to]) {
                    dist[e.to] = nd;
                    via[e.to] = id;
                    pq.push({nd, e.to});
                }
            }
        }
        if (dist[sink] == kInf) break;
        for (std::size_t v = 0; v < n; ++v)
            if (dist[v] < kInf) potential[v] += dist[v];

        std::int64_t push = limit - res.flow;
        for (std::size_t v = sink; v != source; v = edges_[via[v] ^ 1].to)
            push = std::min(push, edges_[via[v]].cap);
        for (std::size_t v = sink; v != source; v = edges_[via[v] ^ 1].to) {
            edges_[via[v]].cap -= push;
            edges_[via[v] ^ 1].cap += push;
        }
        res.flow += push;
    }
    // Recompute the objective from edge flows rather than path sums.
    for (std::size_t id = 0; id < edges_.size(); id += 2)
        res.cost += static_cast<double>(edges_[id].original - edges_[id].cap) * edges_[id].cost;
    return res;
}

std::int64_t MinCostFlow::flow_on(std::size_t edge) const {
    return edges_[edge].original - edges_[edge].cap;
}

}  // namespace flowsel::flow
