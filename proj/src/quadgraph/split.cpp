#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "quadgfm/quadgraph.hpp"

namespace quadgfm::graph {

namespace {

// Connected components of the undirected graph, each listed in BFS order
// from its smallest node id. Components are ordered by smallest node id.
std::vector<std::vector<NodeId>> components_bfs(const QuadGraph& g) {
    const std::size_t n = g.node_count();
    std::vector<bool> seen(n, false);
    std::vector<std::vector<NodeId>> comps;
    for (NodeId start = 0; start < n; ++start) {
        if (seen[start]) continue;
        std::vector<NodeId> comp;
        std::queue<NodeId> q;
        q.push(start);
        seen[start] = true;
        while (!q.empty()) {
            const NodeId v = q.front();
            q.pop();
            comp.push_back(v);
            auto visit = [&](NodeId u) {
                if (!seen[u]) {
                    seen[u] = true;
                    q.push(u);
                }
            };
            for (std::uint32_t e : g.forward().of(v)) visit(g.edges()[e].dst);
            for (std::uint32_t e : g.reverse().of(v)) visit(g.edges()[e].src);
        }
        comps.push_back(std::move(comp));
    }
    return comps;
}

}  // namespace

SplitResult split_subgraphs(const QuadGraph& graph, std::span<const std::vector<NodeId>> query_labels,
                            std::size_t max_nodes) {
    if (max_nodes < 1) throw GraphError("split_subgraphs: max_nodes must be >= 1");
    const std::size_t capacity = static_cast<std::size_t>(std::floor(static_cast<double>(max_nodes) * 1.1));

    std::vector<std::vector<NodeId>> pieces;
    for (auto& comp : components_bfs(graph)) {
        if (comp.size() <= capacity) {
            pieces.push_back(std::move(comp));
            continue;
        }
        for (std::size_t at = 0; at < comp.size(); at += max_nodes) {
            const std::size_t end = std::min(comp.size(), at + max_nodes);
            pieces.emplace_back(comp.begin() + static_cast<std::ptrdiff_t>(at),
                                comp.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }
    // First-fit decreasing; stable so equal sizes keep node-id order.
    std::stable_sort(pieces.begin(), pieces.end(),
                     [](const auto& a, const auto& b) { return a.size() > b.size(); });
    std::vector<std::vector<NodeId>> bins;
    for (auto& piece : pieces) {
        auto fit = std::find_if(bins.begin(), bins.end(),
                                [&](const auto& bin) { return bin.size() + piece.size() <= capacity; });
        if (fit == bins.end()) {
            bins.emplace_back();
            fit = bins.end() - 1;
        }
        fit->insert(fit->end(), piece.begin(), piece.end());
    }

    SplitResult result;
    const std::size_t n = graph.node_count();
    result.part_of.assign(n, 0);
    result.local_of.assign(n, 0);
    for (std::size_t b = 0; b < bins.size(); ++b) {
        auto& ids = bins[b];
        std::sort(ids.begin(), ids.end());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            result.part_of[ids[i]] = static_cast<std::uint32_t>(b);
            result.local_of[ids[i]] = static_cast<NodeId>(i);
        }
    }
    for (std::size_t b = 0; b < bins.size(); ++b) {
        std::vector<Node> nodes;
        nodes.reserve(bins[b].size());
        for (NodeId gid : bins[b]) {
            Node node = graph.node(gid);
            node.id = result.local_of[gid];
            nodes.push_back(std::move(node));
        }
        std::vector<Edge> edges;
        for (const Edge& e : graph.edges()) {
            if (result.part_of[e.src] == b && result.part_of[e.dst] == b) {
                edges.push_back({result.local_of[e.src], e.rel, result.local_of[e.dst]});
            }
        }
        result.parts.push_back({QuadGraph::build(std::move(nodes), graph.relations(), std::move(edges)),
                                bins[b], {}});
    }

    for (std::size_t q = 0; q < query_labels.size(); ++q) {
        std::vector<std::size_t> votes(result.parts.size(), 0);
        std::size_t total = 0;
        for (NodeId v : query_labels[q]) {
            if (v < n) {
                ++votes[result.part_of[v]];
                ++total;
            }
        }
        if (total == 0) {
            result.dropped_queries.push_back(q);
            continue;
        }
        const auto best = std::max_element(votes.begin(), votes.end()) - votes.begin();
        result.parts[static_cast<std::size_t>(best)].queries.push_back(q);
    }
    return result;
}

}  // namespace quadgfm::graph
