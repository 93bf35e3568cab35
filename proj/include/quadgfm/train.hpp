#pragma once

// Training objective and loop: summed positive log-likelihood, Bernoulli KL
// distillation towards the frozen text-encoder teacher, and an optional
// pairwise ranking loss.

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "quadgfm/embed.hpp"
#include "quadgfm/gfm.hpp"
#include "quadgfm/numerics/adamw.hpp"

namespace quadgfm::train {

using graph::NodeId;
using numerics::Matrix;

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct QuerySample {
    std::string id;
    std::string query;
    std::vector<NodeId> seeds;      // empty: derive with select_seed_nodes
    std::vector<NodeId> positives;
    std::size_t graph = 0;          // index into the graph list given to fit
    // Unlabeled samples train on the distillation term only.
    bool labeled = true;
};

struct TrainingConfig {
    double lambda = 0.01;
    double lr = 5e-4;
    double weight_decay = 0.0;
    std::size_t batch_size = 2;
    std::size_t epochs = 10;
    std::size_t layers = 6;
    std::size_t dim = 1024;
    bool ranking = true;
    std::size_t negatives = 32;  // per positive
    std::size_t seed_top_m = 5;
    std::uint64_t seed = 0;
    numerics::Reduction reduction = numerics::Reduction::Deterministic;
    std::optional<std::filesystem::path> checkpoint_dir;

    static TrainingConfig full() { return {}; }
    static TrainingConfig desk() {
        TrainingConfig c;
        c.layers = 4;
        c.dim = 64;
        return c;
    }
    void validate() const;
};

struct LossBreakdown {
    double total = 0;
    double nll = 0;
    double kl = 0;
    double ranking = 0;
    double grad_norm = 0;
};

// ---- loss terms ----------------------------------------------------------
// Each returns the value and, when `grad` is non-null, adds dvalue/dp into it.

double positive_loglik(std::span<const double> scores, std::span<const NodeId> positives,
                       std::vector<double>* grad = nullptr);

double bernoulli_kl(std::span<const double> teacher, std::span<const double> student,
                    std::vector<double>* grad_student = nullptr);

struct RankingPair {
    NodeId positive;
    NodeId negative;
};

// `per_positive` negatives drawn uniformly from the nodes outside `positives`.
std::vector<RankingPair> sample_negatives(std::size_t node_count, std::span<const NodeId> positives,
                                          std::size_t per_positive, std::mt19937_64& rng);

// Mean over pairs of softplus(logit(p_neg) - logit(p_pos)).
double ranking_loss(std::span<const double> scores, std::span<const RankingPair> pairs,
                    std::vector<double>* grad = nullptr);
double ranking_loss(std::span<const double> scores, std::span<const NodeId> positives, std::size_t n_negatives,
                    std::mt19937_64& rng);

// total = -loglik + lambda * kl (+ ranking). Unlabeled samples contribute
// lambda * kl only. grad_norm is left at zero.
LossBreakdown total_loss(std::span<const double> scores, std::span<const double> teacher,
                         const QuerySample& sample, const TrainingConfig& config,
                         std::span<const RankingPair> pairs, std::vector<double>* grad = nullptr);
LossBreakdown total_loss(std::span<const double> scores, std::span<const double> teacher,
                         const QuerySample& sample, const TrainingConfig& config, std::mt19937_64& rng);

// Entities whose text occurs case-insensitively in the query, united with the
// m best nodes by teacher score (ties to the lower id). Sorted ascending.
std::vector<NodeId> select_seed_nodes(std::string_view query_text, std::span<const float> query_embedding,
                                      const graph::QuadGraph& graph, const Matrix<float>& node_embeddings,
                                      std::size_t m);

// ---- training ------------------------------------------------------------

// Graph plus everything the model needs that does not depend on the query.
template <class T> struct TrainingGraph {
    const graph::QuadGraph* graph = nullptr;
    gfm::ModelView view;
    Matrix<T> nodes;
    Matrix<T> relations;
};

TrainingGraph<float> prepare_graph(const graph::QuadGraph& graph, const embed::EmbeddingProvider& provider);
template <class T> TrainingGraph<T> prepare_graph(const graph::QuadGraph& graph, const embed::GraphEmbeddings& emb);

// A sample with its query embedding, seeds and teacher scores resolved.
template <class T> struct PreparedSample {
    const QuerySample* sample = nullptr;
    std::vector<T> query;
    std::vector<NodeId> seeds;
    std::vector<double> teacher;
};

template <class T>
PreparedSample<T> prepare_sample(const QuerySample& sample, const TrainingGraph<T>& g, std::span<const float> query,
                                 std::size_t seed_top_m);

// Forward, loss and backward for one sample. Negatives come from `rng`
// unless `pairs` is given.
template <class T> struct SampleResult {
    LossBreakdown loss;
    std::vector<double> scores;
    gfm::GfmParams<T> grads;
};

template <class T>
SampleResult<T> loss_and_gradients(const gfm::GfmParams<T>& params, const TrainingGraph<T>& g,
                                   const PreparedSample<T>& ps, const TrainingConfig& config,
                                   std::span<const RankingPair> pairs);

struct EpochReport {
    std::size_t epoch = 0;  // 1-based
    LossBreakdown mean;
};

struct FitResult {
    gfm::GfmParams<float> params;
    std::vector<EpochReport> history;
};

struct FitOptions {
    // Starting point; a fresh initialization from config.seed when absent.
    std::optional<gfm::GfmParams<float>> initial;
    // Called after each epoch; returning false stops training.
    std::function<bool(const EpochReport&, const gfm::GfmParams<float>&)> on_epoch;
};

FitResult fit(std::span<const QuerySample> samples, std::span<const TrainingGraph<float>> graphs,
              const TrainingConfig& config, const embed::EmbeddingProvider& provider, FitOptions options = {});

// {"query_id", "query", "graph", "positives", "seeds"?} per line. Graph paths
// are resolved against the manifest's directory.
struct ManifestEntry {
    QuerySample sample;
    std::filesystem::path graph_path;
};
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

}  // namespace quadgfm::train
