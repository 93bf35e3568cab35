#pragma once

// Balanced k-way partitioning, the multi-worker forward pass that exchanges
// per-destination partial sums across parts, and the worker-count estimate.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "quadgfm/gfm.hpp"
#include "quadgfm/quadgraph.hpp"

namespace quadgfm::partition {

using graph::NodeId;

struct PartitionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kImbalance = 0.05;

struct PartitionPlan {
    std::size_t n_parts = 0;
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> assignment;  // node id -> part
    std::vector<std::size_t> part_sizes;
    std::size_t edge_cut = 0;
    // Graph edge ids with assignment(src) = a and assignment(dst) = b, a != b,
    // at index a * n_parts + b.
    std::vector<std::vector<std::uint32_t>> boundary;

    std::span<const std::uint32_t> boundary_edges(std::size_t a, std::size_t b) const {
        return boundary[a * n_parts + b];
    }
};

// Part size limits: max <= floor(ceil(n/N) * 1.05), min >= ceil(floor(n/N) * 0.95).
std::size_t max_part_size(std::size_t nodes, std::size_t parts);
std::size_t min_part_size(std::size_t nodes, std::size_t parts);

// Derives sizes, cut and boundary lists from an assignment. Does not check
// balance.
PartitionPlan make_plan(const graph::QuadGraph& graph, std::size_t n_parts, std::vector<std::uint32_t> assignment,
                        std::uint64_t seed = 0);

// Multilevel: heavy-edge coarsening, greedy region growing on the coarsest
// graph, boundary refinement while uncoarsening, then a final rebalance.
PartitionPlan partition_graph(const graph::QuadGraph& graph, std::size_t n_parts, std::uint64_t seed = 0);

struct PlanStats {
    std::size_t edge_cut = 0;
    double balance = 1.0;  // largest part / (n / N)
    // Messages crossing from part a to part b in the model view (both
    // directions of every cut edge), at a * N + b. Sums to 2 * edge_cut.
    std::vector<std::size_t> boundary_messages;
    // Distinct destination nodes per (a, b): rows actually shipped per layer.
    std::vector<std::size_t> boundary_destinations;
};

PlanStats plan_stats(const graph::QuadGraph& graph, const PartitionPlan& plan);

// Plan file: {"n_parts", "assignment", "seed"}.
void save_plan(const PartitionPlan& plan, const std::filesystem::path& path);
PartitionPlan load_plan(const graph::QuadGraph& graph, const std::filesystem::path& path);

// ---- distributed execution -----------------------------------------------

// What one worker holds: its nodes and the view edges whose message source
// it owns, grouped by destination slot. Slots 0..local-1 are the worker's
// own nodes; the rest are remote destinations, ordered by (part, node id).
struct WorkerShard {
    std::uint32_t part = 0;
    std::vector<NodeId> nodes;                 // ascending global ids
    std::vector<std::uint32_t> edge_neighbor;  // local row of the message source
    std::vector<std::uint32_t> edge_rel;
    std::vector<std::uint32_t> edge_slot;
    numerics::SegmentIndex by_slot;
    std::vector<NodeId> slot_node;                 // global id per slot
    std::vector<std::size_t> outbound_offsets;     // slots for part q: [off[q], off[q+1])
    std::vector<std::uint32_t> remote_local_row;   // for remote slots: row in the owner's shard
};

std::vector<WorkerShard> build_shards(const gfm::ModelView& view, const PartitionPlan& plan);

template <class T> struct DistributedResult {
    std::vector<double> scores;
    std::vector<std::size_t> resident_nodes;  // per worker
    std::vector<std::size_t> shipped_rows;    // per (a, b) pair, summed over layers
};

template <class T>
DistributedResult<T> distributed_forward(const gfm::GfmParams<T>& params, const gfm::ModelView& view,
                                         const PartitionPlan& plan, const gfm::QueryInputs<T>& inputs,
                                         numerics::Reduction reduction = numerics::Reduction::Fast);

// ceil(n * d * 1e-6 / 2.56 / mem_gb), at least 1.
std::size_t estimate_workers(std::uint64_t n_nodes, std::uint64_t dim, double mem_gb);

}  // namespace quadgfm::partition
