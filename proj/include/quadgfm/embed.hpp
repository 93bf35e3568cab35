#pragma once

// Text embeddings for nodes, relations and queries, plus the frozen-encoder
// teacher distribution sigmoid(h_v . h_q).

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "quadgfm/numerics/matrix.hpp"
#include "quadgfm/quadgraph.hpp"

namespace quadgfm::embed {

using numerics::Matrix;

inline constexpr double kProbEps = 1e-7;

struct EmbeddingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Rows keyed by string id. Node tables use "node/<id>", relation rows
// "rel/<name>" and "rel/<name>~inv"; query tables use query ids.
struct EmbeddingTable {
    Matrix<float> matrix;
    bool normalized = false;
    std::vector<std::string> keys;  // row order
    std::unordered_map<std::string, std::size_t> index;

    std::size_t dim() const { return matrix.cols(); }
    std::size_t rows() const { return matrix.rows(); }
    bool contains(std::string_view key) const { return index.contains(std::string(key)); }
    std::span<const float> row(std::string_view key) const;

    void append(std::string key, std::span<const float> values);
};

// "EMB1" | u64 rows | u32 dim | u8 normalized | rows*dim f32 | JSON {key: row}
EmbeddingTable load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

// Signed feature hashing of lower-cased, space-padded character trigrams
// (64-bit FNV-1a) into d buckets, L2-normalized. Empty text maps to e_0.
std::vector<float> hash_embed(std::string_view text, std::size_t dim, std::uint64_t seed);

// p(v) = sigmoid(h_v . h_q), clamped to [1e-7, 1 - 1e-7].
std::vector<double> teacher_scores(const Matrix<float>& node_embeddings, std::span<const float> query);
std::vector<double> teacher_scores(const Matrix<double>& node_embeddings, std::span<const double> query);

double clamp_probability(double p);
double sigmoid(double x);

std::string node_key(graph::NodeId id);
std::string relation_key(std::string_view name, bool inverse);
std::string inverse_relation_text(std::string_view name);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::size_t dim() const = 0;
    virtual std::vector<float> query(std::string_view query_id, std::string_view text) const = 0;
    virtual std::vector<float> node(const graph::Node& node) const = 0;
    virtual std::vector<float> relation(std::string_view name, bool inverse) const = 0;
};

class HashProvider final : public EmbeddingProvider {
public:
    HashProvider(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
    std::size_t dim() const override { return dim_; }
    std::vector<float> query(std::string_view, std::string_view text) const override;
    std::vector<float> node(const graph::Node& node) const override;
    std::vector<float> relation(std::string_view name, bool inverse) const override;

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

// Lookup-only provider over precomputed tables.
class FileProvider final : public EmbeddingProvider {
public:
    FileProvider(EmbeddingTable graph_table, EmbeddingTable query_table);
    std::size_t dim() const override { return graph_.dim(); }
    std::vector<float> query(std::string_view query_id, std::string_view text) const override;
    std::vector<float> node(const graph::Node& node) const override;
    std::vector<float> relation(std::string_view name, bool inverse) const override;

private:
    EmbeddingTable graph_;
    EmbeddingTable queries_;
};

std::vector<float> encode_query(const EmbeddingProvider& provider, std::string_view query_id,
                                std::string_view text);

struct GraphEmbeddings {
    Matrix<float> nodes;      // |V| x d
    Matrix<float> relations;  // 2|R| x d: base relations then their inverses
};

GraphEmbeddings embed_graph(const graph::QuadGraph& graph, const EmbeddingProvider& provider);

// Table holding every node and relation row of `graph` under the keys that
// FileProvider expects.
EmbeddingTable graph_table(const graph::QuadGraph& graph, const EmbeddingProvider& provider);

}  // namespace quadgfm::embed
