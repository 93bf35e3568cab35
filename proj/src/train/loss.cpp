#include <algorithm>
#include <cmath>
#include <numeric>

#include "quadgfm/train.hpp"

namespace quadgfm::train {

namespace {

std::vector<NodeId> unique_sorted(std::span<const NodeId> ids, std::size_t node_count) {
    std::vector<NodeId> out(ids.begin(), ids.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (!out.empty() && out.back() >= node_count) {
        throw TrainingError("node id " + std::to_string(out.back()) + " out of range (" +
                            std::to_string(node_count) + " nodes)");
    }
    return out;
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logit(double p) { return std::log(p) - std::log1p(-p); }

void ensure_grad(std::vector<double>* grad, std::size_t n) {
    if (grad && grad->size() != n) grad->assign(n, 0.0);
}

}  // namespace

void TrainingConfig::validate() const {
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw TrainingError("lambda must be a finite value >= 0");
    if (!(lr > 0) || !std::isfinite(lr)) throw TrainingError("learning rate must be positive");
    if (weight_decay < 0) throw TrainingError("weight decay must be >= 0");
    if (batch_size < 1) throw TrainingError("batch size must be at least 1");
    if (layers < 1 || dim < 1) throw TrainingError("layers and dim must be at least 1");
    if (seed_top_m < 1) throw TrainingError("seed top-m must be at least 1");
    if (ranking && negatives < 1) throw TrainingError("ranking loss needs at least one negative per positive");
}

double positive_loglik(std::span<const double> scores, std::span<const NodeId> positives, std::vector<double>* grad) {
    if (positives.empty()) throw TrainingError("training sample has no positive nodes");
    ensure_grad(grad, scores.size());
    double sum = 0;
    for (NodeId v : unique_sorted(positives, scores.size())) {
        const double p = embed::clamp_probability(scores[v]);
        sum += std::log(p);
        if (grad) (*grad)[v] += 1.0 / p;
    }
    return sum;
}

double bernoulli_kl(std::span<const double> teacher, std::span<const double> student, std::vector<double>* grad) {
    if (teacher.size() != student.size()) {
        throw TrainingError("bernoulli_kl: teacher has " + std::to_string(teacher.size()) + " entries, student " +
                            std::to_string(student.size()));
    }
    ensure_grad(grad, student.size());
    double sum = 0;
    for (std::size_t v = 0; v < teacher.size(); ++v) {
        const double t = embed::clamp_probability(teacher[v]);
        const double s = embed::clamp_probability(student[v]);
        sum += t * (std::log(t) - std::log(s)) + (1 - t) * (std::log1p(-t) - std::log1p(-s));
        if (grad) (*grad)[v] += -t / s + (1 - t) / (1 - s);
    }
    return sum;
}

std::vector<RankingPair> sample_negatives(std::size_t node_count, std::span<const NodeId> positives,
                                          std::size_t per_positive, std::mt19937_64& rng) {
    const auto pos = unique_sorted(positives, node_count);
    std::vector<NodeId> pool;
    pool.reserve(node_count - pos.size());
    for (std::size_t v = 0, j = 0; v < node_count; ++v) {
        if (j < pos.size() && pos[j] == v) {
            ++j;
            continue;
        }
        pool.push_back(static_cast<NodeId>(v));
    }
    if (pool.empty()) throw TrainingError("ranking loss: every node is a positive, no negatives to sample");
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<RankingPair> pairs;
    pairs.reserve(pos.size() * per_positive);
    for (NodeId p : pos)
        for (std::size_t k = 0; k < per_positive; ++k) pairs.push_back({p, pool[pick(rng)]});
    return pairs;
}

double ranking_loss(std::span<const double> scores, std::span<const RankingPair> pairs, std::vector<double>* grad) {
    if (pairs.empty()) throw TrainingError("ranking loss: no (positive, negative) pairs");
    ensure_grad(grad, scores.size());
    double sum = 0;
    const double w = 1.0 / static_cast<double>(pairs.size());
    for (const auto& pr : pairs) {
        if (pr.positive >= scores.size() || pr.negative >= scores.size()) {
            throw TrainingError("ranking pair references a node outside the score vector");
        }
        const double pp = embed::clamp_probability(scores[pr.positive]);
        const double pn = embed::clamp_probability(scores[pr.negative]);
        const double x = logit(pn) - logit(pp);
        sum += softplus(x);
        if (grad) {
            const double g = w * embed::sigmoid(x);
            (*grad)[pr.negative] += g / (pn * (1 - pn));
            (*grad)[pr.positive] -= g / (pp * (1 - pp));
        }
    }
    return sum * w;
}

double ranking_loss(std::span<const double> scores, std::span<const NodeId> positives, std::size_t n_negatives,
                    std::mt19937_64& rng) {
    return ranking_loss(scores, sample_negatives(scores.size(), positives, n_negatives, rng));
}

LossBreakdown total_loss(std::span<const double> scores, std::span<const double> teacher, const QuerySample& sample,
                         const TrainingConfig& config, std::span<const RankingPair> pairs, std::vector<double>* grad) {
    ensure_grad(grad, scores.size());
    LossBreakdown out;
    std::vector<double> g_kl;
    out.kl = bernoulli_kl(teacher, scores, grad ? &g_kl : nullptr);
    if (grad)
        for (std::size_t v = 0; v < scores.size(); ++v) (*grad)[v] += config.lambda * g_kl[v];
    if (sample.labeled) {
        std::vector<double> g_ll;
        out.nll = -positive_loglik(scores, sample.positives, grad ? &g_ll : nullptr);
        if (grad)
            for (std::size_t v = 0; v < scores.size(); ++v) (*grad)[v] -= g_ll[v];
        if (config.ranking) out.ranking = ranking_loss(scores, pairs, grad);
    }
    out.total = out.nll + config.lambda * out.kl + out.ranking;
    return out;
}

LossBreakdown total_loss(std::span<const double> scores, std::span<const double> teacher, const QuerySample& sample,
                         const TrainingConfig& config, std::mt19937_64& rng) {
    std::vector<RankingPair> pairs;
    if (sample.labeled && config.ranking) {
        pairs = sample_negatives(scores.size(), sample.positives, config.negatives, rng);
    }
    return total_loss(scores, teacher, sample, config, pairs);
}

std::vector<NodeId> select_seed_nodes(std::string_view query_text, std::span<const float> query_embedding,
                                      const graph::QuadGraph& graph, const Matrix<float>& node_embeddings,
                                      std::size_t m) {
    if (m < 1) throw TrainingError("seed selection needs m >= 1");
    if (node_embeddings.rows() != graph.node_count()) {
        throw TrainingError("seed selection: embedding rows differ from the graph's node count");
    }
    std::vector<NodeId> seeds;
    const std::string folded = graph::fold_case(query_text);
    for (const auto& node : graph.nodes()) {
        if (node.type != graph::NodeType::Entity || node.text.empty()) continue;
        if (folded.find(graph::fold_case(node.text)) != std::string::npos) seeds.push_back(node.id);
    }
    const auto teacher = embed::teacher_scores(node_embeddings, query_embedding);
    std::vector<NodeId> order(teacher.size());
    std::iota(order.begin(), order.end(), NodeId{0});
    const std::size_t top = std::min(m, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                      [&](NodeId a, NodeId b) { return teacher[a] != teacher[b] ? teacher[a] > teacher[b] : a < b; });
    seeds.insert(seeds.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top));
    std::sort(seeds.begin(), seeds.end());
    seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
    return seeds;
}

}  // namespace quadgfm::train
