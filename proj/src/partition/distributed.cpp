#include <barrier>
#include <exception>
#include <mutex>
#include <thread>

#include "quadgfm/numerics/exact_sum.hpp"
#include "quadgfm/partition.hpp"

namespace quadgfm::partition {

using numerics::Matrix;
using numerics::Reduction;

std::vector<WorkerShard> build_shards(const gfm::ModelView& view, const PartitionPlan& plan) {
    if (plan.assignment.size() != view.node_count) {
        throw PartitionError("plan covers " + std::to_string(plan.assignment.size()) + " nodes but the graph has " +
                             std::to_string(view.node_count));
    }
    const std::size_t N = plan.n_parts;
    std::vector<WorkerShard> shards(N);
    std::vector<std::uint32_t> local_row(view.node_count);
    for (NodeId v = 0; v < view.node_count; ++v) {
        auto& s = shards[plan.assignment[v]];
        local_row[v] = static_cast<std::uint32_t>(s.nodes.size());
        s.nodes.push_back(v);
    }
    for (std::uint32_t p = 0; p < N; ++p) {
        auto& s = shards[p];
        s.part = p;
        // Remote destinations, grouped by owning part then global id.
        std::vector<std::vector<NodeId>> remote(N);
        for (std::size_t e = 0; e < view.edge_count(); ++e) {
            if (plan.assignment[view.neighbor[e]] != p) continue;
            const auto q = plan.assignment[view.target[e]];
            if (q != p) remote[q].push_back(view.target[e]);
        }
        s.slot_node = s.nodes;
        s.outbound_offsets.assign(N + 1, 0);
        std::vector<std::uint32_t> slot_of_remote(view.node_count, 0);
        for (std::uint32_t q = 0; q < N; ++q) {
            auto& r = remote[q];
            std::sort(r.begin(), r.end());
            r.erase(std::unique(r.begin(), r.end()), r.end());
            s.outbound_offsets[q] = s.slot_node.size();
            for (NodeId v : r) {
                slot_of_remote[v] = static_cast<std::uint32_t>(s.slot_node.size());
                s.slot_node.push_back(v);
                s.remote_local_row.push_back(local_row[v]);
            }
        }
        s.outbound_offsets[N] = s.slot_node.size();
        for (std::size_t e = 0; e < view.edge_count(); ++e) {
            if (plan.assignment[view.neighbor[e]] != p) continue;
            const NodeId t = view.target[e];
            s.edge_neighbor.push_back(local_row[view.neighbor[e]]);
            s.edge_rel.push_back(view.rel[e]);
            s.edge_slot.push_back(plan.assignment[t] == p ? local_row[t] : slot_of_remote[t]);
        }
        s.by_slot = numerics::SegmentIndex::build(s.edge_slot, s.slot_node.size());
    }
    return shards;
}

namespace {

// Partial aggregates one worker sends to another for a single layer: rows
// of sums (fast mode) or the per-entry partial expansions (exact mode).
template <class T> struct Mail {
    std::vector<std::uint32_t> rows;  // destination-local rows
    Matrix<T> sums;
    std::vector<std::size_t> offsets;  // per (row, column) into partials
    std::vector<T> partials;
};

template <class T> class Worker {
public:
    Worker(const WorkerShard& shard, const gfm::GfmParams<T>& params, std::size_t n_parts)
        : shard_(shard), params_(params), inbox_(n_parts) {}

    const WorkerShard& shard() const { return shard_; }
    std::vector<Mail<T>>& inbox() { return inbox_; }

    Matrix<T> states;

    // Local sums for every slot; remote slots are packed into `outbox`.
    void aggregate(const Matrix<T>& rel_states, Reduction mode, std::vector<Worker*>& peers) {
        const std::size_t d = params_.dim, N = inbox_.size();
        const std::size_t local = shard_.nodes.size();
        if (mode == Reduction::Fast) {
            const Matrix<T> sums = numerics::gather_product_sum(states, shard_.edge_neighbor, rel_states,
                                                                shard_.edge_rel, shard_.by_slot, mode);
            own_ = Mail<T>{};
            own_.sums = Matrix<T>(local, d);
            std::copy(sums.data(), sums.data() + local * d, own_.sums.data());
            for (std::uint32_t q = 0; q < N; ++q) {
                const std::size_t lo = shard_.outbound_offsets[q], hi = shard_.outbound_offsets[q + 1];
                if (q == shard_.part || lo == hi) continue;
                Mail<T> m;
                m.sums = Matrix<T>(hi - lo, d);
                for (std::size_t s = lo; s < hi; ++s) {
                    m.rows.push_back(shard_.remote_local_row[s - local]);
                    std::copy(sums.row(s).begin(), sums.row(s).end(), m.sums.row(s - lo).begin());
                }
                peers[q]->inbox_[shard_.part] = std::move(m);
            }
            return;
        }
        // Exact mode: ship the expansions so the receiver rounds only once.
        numerics::ExactSum<T> acc;
        auto pack = [&](std::size_t lo, std::size_t hi, Mail<T>& m) {
            m.offsets.assign(1, 0);
            for (std::size_t s = lo; s < hi; ++s) {
                for (std::size_t c = 0; c < d; ++c) {
                    acc.clear();
                    for (std::uint32_t e : shard_.by_slot.segment(s))
                        acc.add(states(shard_.edge_neighbor[e], c) * rel_states(shard_.edge_rel[e], c));
                    m.partials.insert(m.partials.end(), acc.partials().begin(), acc.partials().end());
                    m.offsets.push_back(m.partials.size());
                }
            }
        };
        own_ = Mail<T>{};
        pack(0, local, own_);
        for (std::uint32_t q = 0; q < N; ++q) {
            const std::size_t lo = shard_.outbound_offsets[q], hi = shard_.outbound_offsets[q + 1];
            if (q == shard_.part || lo == hi) continue;
            Mail<T> m;
            for (std::size_t s = lo; s < hi; ++s) m.rows.push_back(shard_.remote_local_row[s - local]);
            pack(lo, hi, m);
            peers[q]->inbox_[shard_.part] = std::move(m);
        }
    }

    // Combines own and received partials in ascending source-part order.
    Matrix<T> combine(Reduction mode) {
        const std::size_t d = params_.dim, local = shard_.nodes.size(), N = inbox_.size();
        inbox_[shard_.part] = std::move(own_);
        auto& mine = inbox_[shard_.part];
        mine.rows.resize(local);
        std::iota(mine.rows.begin(), mine.rows.end(), 0u);
        Matrix<T> out(local, d);
        if (mode == Reduction::Fast) {
            for (std::size_t p = 0; p < N; ++p) {
                const auto& m = inbox_[p];
                for (std::size_t i = 0; i < m.rows.size(); ++i) {
                    auto o = out.row(m.rows[i]);
                    const auto x = m.sums.row(i);
                    for (std::size_t c = 0; c < d; ++c) o[c] += x[c];
                }
            }
        } else {
            std::vector<numerics::ExactSum<T>> acc(local * d);
            for (std::size_t p = 0; p < N; ++p) {
                const auto& m = inbox_[p];
                for (std::size_t i = 0; i < m.rows.size(); ++i)
                    for (std::size_t c = 0; c < d; ++c) {
                        const std::size_t k = i * d + c;
                        acc[std::size_t{m.rows[i]} * d + c].merge(
                            std::span<const T>(m.partials).subspan(m.offsets[k], m.offsets[k + 1] - m.offsets[k]));
                    }
            }
            for (std::size_t k = 0; k < acc.size(); ++k) out.data()[k] = acc[k].result();
        }
        for (auto& m : inbox_) m = Mail<T>{};
        return out;
    }

private:
    const WorkerShard& shard_;
    const gfm::GfmParams<T>& params_;
    std::vector<Mail<T>> inbox_;  // slot p written only by worker p
    Mail<T> own_;
};

template <class T> Matrix<T> gather_rows(const Matrix<T>& m, std::span<const NodeId> rows) {
    Matrix<T> out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
    return out;
}

}  // namespace

template <class T>
DistributedResult<T> distributed_forward(const gfm::GfmParams<T>& params, const gfm::ModelView& view,
                                         const PartitionPlan& plan, const gfm::QueryInputs<T>& inputs,
                                         Reduction reduction) {
    const std::size_t N = plan.n_parts, d = params.dim;
    if (inputs.node_features.rows() != view.node_count || inputs.node_features.cols() != d ||
        inputs.relation_features.rows() != view.relation_count || inputs.relation_features.cols() != d ||
        inputs.query.size() != d) {
        throw gfm::ModelError("distributed_forward: inputs do not match the model and graph");
    }
    for (NodeId s : inputs.seeds)
        if (s >= view.node_count) throw gfm::ModelError("seed node " + std::to_string(s) + " out of range");
    const auto shards = build_shards(view, plan);

    // Controller: relation states for every layer, shared read-only.
    std::vector<Matrix<T>> rel_states;
    for (std::size_t l = 1; l <= params.layers; ++l)
        rel_states.push_back(gfm::relation_embed_layer(params, inputs.relation_features, l));

    std::vector<std::unique_ptr<Worker<T>>> workers;
    std::vector<Worker<T>*> peers;
    for (const auto& s : shards) {
        workers.push_back(std::make_unique<Worker<T>>(s, params, N));
        peers.push_back(workers.back().get());
    }
    DistributedResult<T> result;
    result.scores.assign(view.node_count, 0.0);
    result.shipped_rows.assign(N * N, 0);
    for (const auto& s : shards) {
        result.resident_nodes.push_back(s.nodes.size());
        for (std::size_t q = 0; q < N; ++q)
            result.shipped_rows[s.part * N + q] +=
                params.layers * (s.outbound_offsets[q + 1] - s.outbound_offsets[q]) * (q != s.part);
    }

    std::barrier sync(static_cast<std::ptrdiff_t>(N));
    std::mutex error_mutex;
    std::exception_ptr error;
    auto run = [&](std::size_t p) {
        auto& w = *workers[p];
        const auto& shard = w.shard();
        try {
            const Matrix<T> features = gather_rows(inputs.node_features, shard.nodes);
            std::vector<NodeId> local_seeds;
            for (NodeId s : inputs.seeds) {
                const auto it = std::lower_bound(shard.nodes.begin(), shard.nodes.end(), s);
                if (it != shard.nodes.end() && *it == s) local_seeds.push_back(static_cast<NodeId>(it - shard.nodes.begin()));
            }
            w.states = gfm::init_node_states(params, features, inputs.query, local_seeds);
            for (std::size_t l = 1; l <= params.layers; ++l) {
                w.aggregate(rel_states[l - 1], reduction, peers);
                sync.arrive_and_wait();  // all mail delivered
                const Matrix<T> agg = w.combine(reduction);
                w.states = gfm::update_states(params, l, w.states, agg);
                sync.arrive_and_wait();  // inboxes drained before the next layer writes
            }
            std::vector<graph::NodeType> types;
            for (NodeId v : shard.nodes) types.push_back(view.types[v]);
            const auto local_scores = gfm::predict_scores(params, types, w.states, features, inputs.query);
            for (std::size_t i = 0; i < shard.nodes.size(); ++i) result.scores[shard.nodes[i]] = local_scores[i];
        } catch (...) {
            {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
            sync.arrive_and_drop();
        }
    };
    std::vector<std::thread> threads;
    for (std::size_t p = 1; p < N; ++p) threads.emplace_back(run, p);
    run(0);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
    return result;
}

template DistributedResult<float> distributed_forward(const gfm::GfmParams<float>&, const gfm::ModelView&,
                                                      const PartitionPlan&, const gfm::QueryInputs<float>&, Reduction);
template DistributedResult<double> distributed_forward(const gfm::GfmParams<double>&, const gfm::ModelView&,
                                                       const PartitionPlan&, const gfm::QueryInputs<double>&,
                                                       Reduction);

}  // namespace quadgfm::partition
