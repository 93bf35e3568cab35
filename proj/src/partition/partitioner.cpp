#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>

#include <nlohmann/json.hpp>

#include "quadgfm/partition.hpp"

namespace quadgfm::partition {

namespace {

using Weight = std::int64_t;

// Undirected weighted graph in CSR form; multi-edges merged, loops dropped.
struct WGraph {
    std::vector<std::size_t> off{0};
    std::vector<std::uint32_t> adj;
    std::vector<Weight> w;
    std::vector<Weight> vw;

    std::size_t n() const { return vw.size(); }
    Weight total_weight() const { return std::accumulate(vw.begin(), vw.end(), Weight{0}); }
};

WGraph from_pairs(std::size_t n, std::vector<std::tuple<std::uint32_t, std::uint32_t, Weight>> pairs,
                  std::vector<Weight> vertex_weights) {
    std::vector<std::tuple<std::uint32_t, std::uint32_t, Weight>> both;
    both.reserve(2 * pairs.size());
    for (auto [a, b, wt] : pairs) {
        if (a == b) continue;
        both.emplace_back(a, b, wt);
        both.emplace_back(b, a, wt);
    }
    std::sort(both.begin(), both.end());
    WGraph g;
    g.vw = std::move(vertex_weights);
    g.off.assign(n + 1, 0);
    for (std::size_t i = 0; i < both.size();) {
        auto [a, b, wt] = both[i];
        std::size_t j = i + 1;
        for (; j < both.size() && std::get<0>(both[j]) == a && std::get<1>(both[j]) == b; ++j) wt += std::get<2>(both[j]);
        g.adj.push_back(b);
        g.w.push_back(wt);
        ++g.off[a + 1];
        i = j;
    }
    for (std::size_t v = 0; v < n; ++v) g.off[v + 1] += g.off[v];
    return g;
}

WGraph from_quadgraph(const graph::QuadGraph& graph) {
    std::vector<std::tuple<std::uint32_t, std::uint32_t, Weight>> pairs;
    pairs.reserve(graph.edge_count());
    for (const auto& e : graph.edges()) pairs.emplace_back(e.src, e.dst, 1);
    return from_pairs(graph.node_count(), std::move(pairs), std::vector<Weight>(graph.node_count(), 1));
}

struct Level {
    WGraph graph;
    std::vector<std::uint32_t> to_coarse;  // fine vertex -> coarse vertex
};

// Heavy-edge matching; returns nullopt when the graph barely shrinks.
std::optional<Level> coarsen(const WGraph& g, Weight max_vertex_weight, std::mt19937_64& rng) {
    const std::size_t n = g.n();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::shuffle(order.begin(), order.end(), rng);
    constexpr auto kNone = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> match(n, kNone);
    for (std::uint32_t v : order) {
        if (match[v] != kNone) continue;
        std::uint32_t best = v;
        Weight best_w = -1;
        for (std::size_t k = g.off[v]; k < g.off[v + 1]; ++k) {
            const std::uint32_t u = g.adj[k];
            if (match[u] != kNone || g.vw[u] + g.vw[v] > max_vertex_weight) continue;
            if (g.w[k] > best_w || (g.w[k] == best_w && u < best)) {
                best = u;
                best_w = g.w[k];
            }
        }
        match[v] = best;
        match[best] = v;
    }
    Level level;
    level.to_coarse.assign(n, kNone);
    std::uint32_t next = 0;
    for (std::uint32_t v = 0; v < n; ++v) {
        if (level.to_coarse[v] != kNone) continue;
        level.to_coarse[v] = next;
        level.to_coarse[match[v]] = next;
        ++next;
    }
    if (next > n * 95 / 100) return std::nullopt;
    std::vector<Weight> vw(next, 0);
    for (std::uint32_t v = 0; v < n; ++v) vw[level.to_coarse[v]] += g.vw[v];
    std::vector<std::tuple<std::uint32_t, std::uint32_t, Weight>> pairs;
    for (std::uint32_t v = 0; v < n; ++v)
        for (std::size_t k = g.off[v]; k < g.off[v + 1]; ++k)
            if (v < g.adj[k]) pairs.emplace_back(level.to_coarse[v], level.to_coarse[g.adj[k]], g.w[k]);
    level.graph = from_pairs(next, std::move(pairs), std::move(vw));
    return level;
}

Weight cut_of(const WGraph& g, const std::vector<std::uint32_t>& part) {
    Weight cut = 0;
    for (std::uint32_t v = 0; v < g.n(); ++v)
        for (std::size_t k = g.off[v]; k < g.off[v + 1]; ++k)
            if (v < g.adj[k] && part[v] != part[g.adj[k]]) cut += g.w[k];
    return cut;
}

// Grows parts one at a time from random starts, always absorbing the
// frontier vertex most strongly tied to the growing part.
std::vector<std::uint32_t> grow_regions(const WGraph& g, std::size_t parts, std::mt19937_64& rng) {
    const std::size_t n = g.n();
    constexpr auto kFree = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> part(n, kFree);
    const Weight total = g.total_weight();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    Weight assigned = 0;
    std::vector<Weight> conn(n, 0);
    for (std::size_t k = 0; k + 1 < parts; ++k) {
        const Weight goal = total * static_cast<Weight>(k + 1) / static_cast<Weight>(parts);
        std::priority_queue<std::pair<Weight, std::int64_t>> frontier;  // (tie, -id)
        std::fill(conn.begin(), conn.end(), 0);
        while (assigned < goal) {
            std::uint32_t v = kFree;
            while (!frontier.empty()) {
                const auto [c, neg] = frontier.top();
                frontier.pop();
                const auto u = static_cast<std::uint32_t>(-neg);
                if (part[u] == kFree && c == conn[u]) {
                    v = u;
                    break;
                }
            }
            if (v == kFree) {
                while (cursor < n && part[order[cursor]] != kFree) ++cursor;
                if (cursor == n) break;
                v = order[cursor];
            }
            if (assigned + g.vw[v] > goal && assigned > total * static_cast<Weight>(k) / static_cast<Weight>(parts)) {
                // Overshooting by more than half a vertex: stop this part.
                if (2 * (assigned + g.vw[v] - goal) > g.vw[v]) break;
            }
            part[v] = static_cast<std::uint32_t>(k);
            assigned += g.vw[v];
            for (std::size_t e = g.off[v]; e < g.off[v + 1]; ++e) {
                const std::uint32_t u = g.adj[e];
                if (part[u] != kFree) continue;
                conn[u] += g.w[e];
                frontier.emplace(conn[u], -static_cast<std::int64_t>(u));
            }
        }
    }
    for (auto& p : part)
        if (p == kFree) p = static_cast<std::uint32_t>(parts - 1);
    return part;
}

struct Bounds {
    Weight lo, hi;
};

// k-way Fiduccia-Mattheyses: moves the best-gain boundary vertex (negative
// gains allowed), each vertex at most once per pass, then rolls back to the
// best prefix. Moves must keep or bring part weights inside the bounds.
void refine(const WGraph& g, std::vector<std::uint32_t>& part, std::size_t parts, Bounds bounds) {
    const std::size_t n = g.n();
    std::vector<Weight> size(parts, 0);
    for (std::uint32_t v = 0; v < n; ++v) size[part[v]] += g.vw[v];
    std::vector<Weight> conn(parts, 0);

    auto best_move = [&](std::uint32_t v, std::uint32_t& to) -> std::optional<Weight> {
        std::fill(conn.begin(), conn.end(), 0);
        bool boundary = false;
        for (std::size_t k = g.off[v]; k < g.off[v + 1]; ++k) {
            conn[part[g.adj[k]]] += g.w[k];
            boundary |= part[g.adj[k]] != part[v];
        }
        if (!boundary) return std::nullopt;
        const std::uint32_t from = part[v];
        std::optional<Weight> best;
        for (std::uint32_t q = 0; q < parts; ++q) {
            if (q == from) continue;
            const bool fits = size[q] + g.vw[v] <= bounds.hi || size[q] + g.vw[v] < size[from];
            const bool keeps = size[from] - g.vw[v] >= bounds.lo || size[from] - g.vw[v] > size[q];
            if (!fits || !keeps || conn[q] == 0) continue;
            const Weight gain = conn[q] - conn[from];
            if (!best || gain > *best) {
                best = gain;
                to = q;
            }
        }
        return best;
    };

    for (int pass = 0; pass < 8; ++pass) {
        std::vector<char> locked(n, 0);
        std::priority_queue<std::pair<Weight, std::int64_t>> heap;
        for (std::uint32_t v = 0; v < n; ++v) {
            std::uint32_t to = 0;
            if (auto gain = best_move(v, to)) heap.emplace(*gain, -static_cast<std::int64_t>(v));
        }
        std::vector<std::pair<std::uint32_t, std::uint32_t>> moves;  // (vertex, old part)
        Weight running = 0, best_total = 0;
        std::size_t best_len = 0, since_best = 0;
        while (!heap.empty() && since_best < 64) {
            const auto [g_old, neg] = heap.top();
            heap.pop();
            const auto v = static_cast<std::uint32_t>(-neg);
            if (locked[v]) continue;
            std::uint32_t to = 0;
            const auto gain = best_move(v, to);
            if (!gain) continue;
            if (*gain != g_old) {
                heap.emplace(*gain, neg);
                continue;
            }
            locked[v] = 1;
            moves.emplace_back(v, part[v]);
            size[part[v]] -= g.vw[v];
            size[to] += g.vw[v];
            part[v] = to;
            running += *gain;
            if (running > best_total) {
                best_total = running;
                best_len = moves.size();
                since_best = 0;
            } else {
                ++since_best;
            }
            for (std::size_t k = g.off[v]; k < g.off[v + 1]; ++k) {
                const std::uint32_t u = g.adj[k];
                if (locked[u]) continue;
                std::uint32_t t = 0;
                if (auto gu = best_move(u, t)) heap.emplace(*gu, -static_cast<std::int64_t>(u));
            }
        }
        for (std::size_t i = moves.size(); i > best_len; --i) {
            const auto [v, old] = moves[i - 1];
            size[part[v]] -= g.vw[v];
            size[old] += g.vw[v];
            part[v] = old;
        }
        if (best_total == 0) break;
    }
}

// Unit-weight fix-up: drain oversized parts into the smallest, then fill
// undersized parts from the largest, picking the cheapest vertex each time.
void rebalance(const WGraph& g, std::vector<std::uint32_t>& part, std::size_t parts, Bounds bounds) {
    const std::size_t n = g.n();
    std::vector<Weight> size(parts, 0);
    for (std::uint32_t v = 0; v < n; ++v) size[part[v]] += g.vw[v];
    auto move_one = [&](std::uint32_t from, std::uint32_t to) {
        std::uint32_t pick = 0;
        Weight best = std::numeric_limits<Weight>::min();
        for (std::uint32_t v = 0; v < n; ++v) {
            if (part[v] != from) continue;
            Weight gain = 0;
            for (std::size_t k = g.off[v]; k < g.off[v + 1]; ++k) {
                if (part[g.adj[k]] == to) gain += g.w[k];
                if (part[g.adj[k]] == from) gain -= g.w[k];
            }
            if (gain > best) {
                best = gain;
                pick = v;
            }
        }
        part[pick] = to;
        size[from] -= g.vw[pick];
        size[to] += g.vw[pick];
    };
    auto largest = [&] { return static_cast<std::uint32_t>(std::max_element(size.begin(), size.end()) - size.begin()); };
    auto smallest = [&] { return static_cast<std::uint32_t>(std::min_element(size.begin(), size.end()) - size.begin()); };
    while (size[largest()] > bounds.hi) move_one(largest(), smallest());
    while (size[smallest()] < bounds.lo) move_one(largest(), smallest());
}

}  // namespace

std::size_t max_part_size(std::size_t nodes, std::size_t parts) {
    const std::size_t ceil_share = (nodes + parts - 1) / parts;
    return static_cast<std::size_t>(std::floor(static_cast<double>(ceil_share) * (1.0 + kImbalance)));
}

std::size_t min_part_size(std::size_t nodes, std::size_t parts) {
    return static_cast<std::size_t>(std::ceil(static_cast<double>(nodes / parts) * (1.0 - kImbalance)));
}

PartitionPlan make_plan(const graph::QuadGraph& graph, std::size_t n_parts, std::vector<std::uint32_t> assignment,
                        std::uint64_t seed) {
    if (n_parts < 1) throw PartitionError("part count must be at least 1");
    if (assignment.size() != graph.node_count()) {
        throw PartitionError("plan assigns " + std::to_string(assignment.size()) + " nodes but the graph has " +
                             std::to_string(graph.node_count()));
    }
    PartitionPlan plan;
    plan.n_parts = n_parts;
    plan.seed = seed;
    plan.part_sizes.assign(n_parts, 0);
    for (std::size_t v = 0; v < assignment.size(); ++v) {
        if (assignment[v] >= n_parts) {
            throw PartitionError("node " + std::to_string(v) + " assigned to part " + std::to_string(assignment[v]) +
                                 " of " + std::to_string(n_parts));
        }
        ++plan.part_sizes[assignment[v]];
    }
    plan.boundary.assign(n_parts * n_parts, {});
    for (std::size_t i = 0; i < graph.edge_count(); ++i) {
        const auto& e = graph.edges()[i];
        const auto a = assignment[e.src], b = assignment[e.dst];
        if (a == b) continue;
        ++plan.edge_cut;
        plan.boundary[a * n_parts + b].push_back(static_cast<std::uint32_t>(i));
    }
    plan.assignment = std::move(assignment);
    return plan;
}

PartitionPlan partition_graph(const graph::QuadGraph& graph, std::size_t n_parts, std::uint64_t seed) {
    const std::size_t n = graph.node_count();
    if (n_parts < 1) throw PartitionError("part count must be at least 1");
    if (n_parts > n) {
        throw PartitionError("cannot split " + std::to_string(n) + " nodes into " + std::to_string(n_parts) + " parts");
    }
    if (n_parts == 1) return make_plan(graph, 1, std::vector<std::uint32_t>(n, 0), seed);

    const Bounds bounds{static_cast<Weight>(min_part_size(n, n_parts)), static_cast<Weight>(max_part_size(n, n_parts))};
    std::mt19937_64 rng(seed);
    std::vector<Level> levels;
    const WGraph fine = from_quadgraph(graph);
    const std::size_t stop = std::max<std::size_t>(40, 15 * n_parts);
    const Weight max_vw = std::max<Weight>(1, bounds.hi / 4);
    while (true) {
        const WGraph& g = levels.empty() ? fine : levels.back().graph;
        if (g.n() <= stop) break;
        auto next = coarsen(g, max_vw, rng);
        if (!next) break;
        levels.push_back(std::move(*next));
    }

    const WGraph& coarsest = levels.empty() ? fine : levels.back().graph;
    std::vector<std::uint32_t> part;
    Weight best_cut = std::numeric_limits<Weight>::max();
    for (int attempt = 0; attempt < 8; ++attempt) {
        auto trial = grow_regions(coarsest, n_parts, rng);
        refine(coarsest, trial, n_parts, bounds);
        const Weight cut = cut_of(coarsest, trial);
        if (cut < best_cut) {
            best_cut = cut;
            part = std::move(trial);
        }
    }
    for (std::size_t l = levels.size(); l > 0; --l) {
        const WGraph& finer = l >= 2 ? levels[l - 2].graph : fine;
        std::vector<std::uint32_t> projected(finer.n());
        for (std::uint32_t v = 0; v < finer.n(); ++v) projected[v] = part[levels[l - 1].to_coarse[v]];
        part = std::move(projected);
        refine(finer, part, n_parts, bounds);
    }
    rebalance(fine, part, n_parts, bounds);
    refine(fine, part, n_parts, bounds);
    return make_plan(graph, n_parts, std::move(part), seed);
}

PlanStats plan_stats(const graph::QuadGraph& graph, const PartitionPlan& plan) {
    if (plan.assignment.size() != graph.node_count()) throw PartitionError("plan does not match the graph");
    const std::size_t N = plan.n_parts;
    PlanStats s;
    s.edge_cut = plan.edge_cut;
    const std::size_t largest = *std::max_element(plan.part_sizes.begin(), plan.part_sizes.end());
    s.balance = static_cast<double>(largest) * static_cast<double>(N) / static_cast<double>(graph.node_count());
    s.boundary_messages.assign(N * N, 0);
    s.boundary_destinations.assign(N * N, 0);
    std::vector<std::vector<NodeId>> dests(N * N);
    for (const auto& e : graph.edges()) {
        const auto a = plan.assignment[e.src], b = plan.assignment[e.dst];
        if (a == b) continue;
        // View edge dst -> src carries a message from b to a, its inverse from a to b.
        ++s.boundary_messages[b * N + a];
        ++s.boundary_messages[a * N + b];
        dests[b * N + a].push_back(e.src);
        dests[a * N + b].push_back(e.dst);
    }
    for (std::size_t i = 0; i < dests.size(); ++i) {
        auto& d = dests[i];
        std::sort(d.begin(), d.end());
        s.boundary_destinations[i] = static_cast<std::size_t>(std::unique(d.begin(), d.end()) - d.begin());
    }
    return s;
}

void save_plan(const PartitionPlan& plan, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw PartitionError("cannot write " + path.string());
    out << nlohmann::json{{"n_parts", plan.n_parts}, {"assignment", plan.assignment}, {"seed", plan.seed}}.dump()
        << '\n';
}

PartitionPlan load_plan(const graph::QuadGraph& graph, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw PartitionError("cannot read " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        return make_plan(graph, j.at("n_parts").get<std::size_t>(),
                         j.at("assignment").get<std::vector<std::uint32_t>>(), j.value("seed", std::uint64_t{0}));
    } catch (const nlohmann::json::exception& e) {
        throw PartitionError(path.string() + ": " + e.what());
    }
}

std::size_t estimate_workers(std::uint64_t n_nodes, std::uint64_t dim, double mem_gb) {
    if (n_nodes == 0 || dim == 0 || !(mem_gb > 0) || !std::isfinite(mem_gb)) {
        throw PartitionError("estimate_workers needs positive node count, dimension and memory");
    }
    // n * d * 1e-6 / 2.56 / mem, folded into one division so exact cases stay exact.
    const double workers = static_cast<double>(n_nodes) * static_cast<double>(dim) / (2560000.0 * mem_gb);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(workers)));
}

}  // namespace quadgfm::partition
