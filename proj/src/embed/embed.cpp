#include "quadgfm/embed.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "quadgfm/io/binary.hpp"

namespace quadgfm::embed {

namespace {

constexpr std::string_view kMagic = "EMB1";
constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::vector<float> checked(std::vector<float> v, std::size_t dim, std::string_view what) {
    if (v.size() != dim) {
        throw EmbeddingError(std::string(what) + ": embedding has dimension " + std::to_string(v.size()) +
                             ", expected " + std::to_string(dim));
    }
    return v;
}

template <class T> std::vector<double> teacher_impl(const Matrix<T>& h, std::span<const T> q) {
    if (h.cols() != q.size()) {
        throw EmbeddingError("teacher_scores: node dimension " + std::to_string(h.cols()) +
                             " differs from query dimension " + std::to_string(q.size()));
    }
    std::vector<double> p(h.rows());
    for (std::size_t v = 0; v < h.rows(); ++v) {
        double dot = 0.0;
        for (std::size_t c = 0; c < q.size(); ++c) dot += static_cast<double>(h(v, c)) * static_cast<double>(q[c]);
        p[v] = clamp_probability(sigmoid(dot));
    }
    return p;
}

}  // namespace

std::span<const float> EmbeddingTable::row(std::string_view key) const {
    const auto it = index.find(std::string(key));
    if (it == index.end()) throw EmbeddingError("no embedding for id \"" + std::string(key) + "\"");
    return matrix.row(it->second);
}

void EmbeddingTable::append(std::string key, std::span<const float> values) {
    if (matrix.rows() > 0 && values.size() != matrix.cols()) {
        throw EmbeddingError("append: row of width " + std::to_string(values.size()) + " into table of width " +
                             std::to_string(matrix.cols()));
    }
    if (!index.emplace(key, keys.size()).second) throw EmbeddingError("duplicate embedding id \"" + key + "\"");
    std::vector<float> data(matrix.values().begin(), matrix.values().end());
    data.insert(data.end(), values.begin(), values.end());
    matrix = Matrix<float>(matrix.rows() + 1, values.size(), std::move(data));
    keys.push_back(std::move(key));
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
    auto in = io::ByteReader::from_file(path);
    if (in.remaining() < 4 || in.text(4) != kMagic) {
        throw io::FormatError(path.string() + ": bad magic bytes, expected \"EMB1\"");
    }
    const std::uint64_t rows = in.u64();
    const std::uint32_t dim = in.u32();
    const std::uint8_t normalized = in.u8();
    if (dim == 0) throw io::FormatError(path.string() + ": dimension must be positive");
    const std::uint64_t bytes = rows * dim * 4;
    if (in.remaining() < bytes) {
        throw io::FormatError(path.string() + ": data section holds fewer than " + std::to_string(rows) + " x " +
                              std::to_string(dim) + " floats");
    }
    EmbeddingTable table;
    table.normalized = normalized != 0;
    std::vector<float> data(rows * dim);
    for (float& f : data) f = in.f32();
    table.matrix = Matrix<float>(rows, dim, std::move(data));
    for (std::size_t r = 0; r < rows; ++r) {
        double norm = 0.0;
        for (float f : table.matrix.row(r)) {
            if (!std::isfinite(f)) {
                throw io::FormatError(path.string() + ": non-finite value in row " + std::to_string(r));
            }
            norm += static_cast<double>(f) * f;
        }
        if (table.normalized && std::fabs(std::sqrt(norm) - 1.0) > 1e-4) {
            throw io::FormatError(path.string() + ": row " + std::to_string(r) +
                                  " is not unit-norm but the table is declared normalized");
        }
    }
    nlohmann::json trailer;
    try {
        trailer = nlohmann::json::parse(in.text(in.remaining()));
    } catch (const nlohmann::json::exception&) {
        throw io::FormatError(path.string() + ": id index trailer is not valid JSON "
                              "(row width does not match the declared dimension?)");
    }
    if (!trailer.is_object() || trailer.size() != rows) {
        throw io::FormatError(path.string() + ": id index must map exactly " + std::to_string(rows) + " ids");
    }
    table.keys.assign(rows, {});
    for (const auto& [key, value] : trailer.items()) {
        const auto r = value.get<std::size_t>();
        if (r >= rows || !table.keys[r].empty()) {
            throw io::FormatError(path.string() + ": id index entry \"" + key + "\" has an invalid row");
        }
        table.keys[r] = key;
        table.index.emplace(key, r);
    }
    return table;
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
    io::ByteWriter out;
    out.text(kMagic);
    out.u64(table.rows());
    out.u32(static_cast<std::uint32_t>(table.dim()));
    out.u8(table.normalized ? 1 : 0);
    for (float f : table.matrix.values()) out.f32(f);
    nlohmann::json trailer = nlohmann::json::object();
    for (std::size_t r = 0; r < table.keys.size(); ++r) trailer[table.keys[r]] = r;
    out.text(trailer.dump());
    out.write_file(path);
}

std::vector<float> hash_embed(std::string_view text, std::size_t dim, std::uint64_t seed) {
    if (dim < 1) throw EmbeddingError("hash_embed: dimension must be >= 1");
    std::vector<float> out(dim, 0.0f);
    if (text.empty()) {
        out[0] = 1.0f;
        return out;
    }
    std::string padded = " ";
    for (char c : text) padded += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    padded += ' ';
    const std::uint64_t basis = kFnvBasis ^ splitmix64(seed);
    std::vector<double> acc(dim, 0.0);
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
        std::uint64_t h = basis;
        for (std::size_t j = i; j < i + 3; ++j) {
            h ^= static_cast<unsigned char>(padded[j]);
            h *= kFnvPrime;
        }
        h = splitmix64(h);
        acc[h % dim] += (h >> 63) ? -1.0 : 1.0;
    }
    double norm = 0.0;
    for (double a : acc) norm += a * a;
    if (norm == 0.0) {
        out[0] = 1.0f;
        return out;
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < dim; ++c) out[c] = static_cast<float>(acc[c] / norm);
    return out;
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double clamp_probability(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

std::vector<double> teacher_scores(const Matrix<float>& node_embeddings, std::span<const float> query) {
    return teacher_impl(node_embeddings, query);
}

std::vector<double> teacher_scores(const Matrix<double>& node_embeddings, std::span<const double> query) {
    return teacher_impl(node_embeddings, query);
}

std::string node_key(graph::NodeId id) { return "node/" + std::to_string(id); }

std::string relation_key(std::string_view name, bool inverse) {
    return "rel/" + std::string(name) + (inverse ? "~inv" : "");
}

std::string inverse_relation_text(std::string_view name) { return std::string(name) + " (inverse)"; }

std::vector<float> HashProvider::query(std::string_view, std::string_view text) const {
    return hash_embed(text, dim_, seed_);
}

std::vector<float> HashProvider::node(const graph::Node& node) const { return hash_embed(node.text, dim_, seed_); }

std::vector<float> HashProvider::relation(std::string_view name, bool inverse) const {
    return hash_embed(inverse ? inverse_relation_text(name) : std::string(name), dim_, seed_);
}

FileProvider::FileProvider(EmbeddingTable graph_table, EmbeddingTable query_table)
    : graph_(std::move(graph_table)), queries_(std::move(query_table)) {
    if (queries_.rows() > 0 && queries_.dim() != graph_.dim()) {
        throw EmbeddingError("query table dimension " + std::to_string(queries_.dim()) +
                             " differs from graph table dimension " + std::to_string(graph_.dim()));
    }
}

std::vector<float> FileProvider::query(std::string_view query_id, std::string_view) const {
    if (!queries_.contains(query_id)) {
        throw EmbeddingError("no stored embedding for query id \"" + std::string(query_id) + "\"");
    }
    const auto r = queries_.row(query_id);
    return {r.begin(), r.end()};
}

std::vector<float> FileProvider::node(const graph::Node& node) const {
    const auto r = graph_.row(node_key(node.id));
    return {r.begin(), r.end()};
}

std::vector<float> FileProvider::relation(std::string_view name, bool inverse) const {
    const auto r = graph_.row(relation_key(name, inverse));
    return {r.begin(), r.end()};
}

std::vector<float> encode_query(const EmbeddingProvider& provider, std::string_view query_id,
                                std::string_view text) {
    return checked(provider.query(query_id, text), provider.dim(), "query " + std::string(query_id));
}

GraphEmbeddings embed_graph(const graph::QuadGraph& graph, const EmbeddingProvider& provider) {
    const std::size_t d = provider.dim();
    GraphEmbeddings out{Matrix<float>(graph.node_count(), d), Matrix<float>(2 * graph.relation_count(), d)};
    for (const auto& node : graph.nodes()) {
        const auto v = checked(provider.node(node), d, "node " + std::to_string(node.id));
        std::copy(v.begin(), v.end(), out.nodes.row(node.id).begin());
    }
    const std::size_t r_count = graph.relation_count();
    for (const auto& rel : graph.relations()) {
        for (bool inverse : {false, true}) {
            const auto v = checked(provider.relation(rel.name, inverse), d, "relation " + rel.name);
            std::copy(v.begin(), v.end(), out.relations.row(rel.id + (inverse ? r_count : 0)).begin());
        }
    }
    return out;
}

EmbeddingTable graph_table(const graph::QuadGraph& graph, const EmbeddingProvider& provider) {
    const auto emb = embed_graph(graph, provider);
    EmbeddingTable table;
    const std::size_t d = provider.dim();
    std::vector<float> data;
    data.reserve((graph.node_count() + 2 * graph.relation_count()) * d);
    auto add = [&](std::string key, std::span<const float> row) {
        table.index.emplace(key, table.keys.size());
        table.keys.push_back(std::move(key));
        data.insert(data.end(), row.begin(), row.end());
    };
    for (const auto& node : graph.nodes()) add(node_key(node.id), emb.nodes.row(node.id));
    for (const auto& rel : graph.relations()) {
        add(relation_key(rel.name, false), emb.relations.row(rel.id));
        add(relation_key(rel.name, true), emb.relations.row(rel.id + graph.relation_count()));
    }
    table.matrix = Matrix<float>(table.keys.size(), d, std::move(data));
    return table;
}

}  // namespace quadgfm::embed
