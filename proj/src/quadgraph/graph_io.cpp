// Binary graph file:
//   "QGR1" | u64 header_bytes | JSON header | UTF-8 string blob | edges
// The header carries counts, the relation table and per-node
// [type, key_offset, key_length, text_offset, text_length] into the blob.
// Edges follow as packed little-endian u32 (src, rel, dst) triples.

#include "quadgfm/io/binary.hpp"
#include "quadgfm/quadgraph.hpp"

namespace quadgfm::graph {

namespace {
constexpr std::string_view kMagic = "QGR1";
}

void save_graph(const QuadGraph& graph, const std::filesystem::path& path) {
    nlohmann::json header;
    header["version"] = kGraphFormatVersion;
    header["node_count"] = graph.node_count();
    header["relation_count"] = graph.relation_count();
    header["edge_count"] = graph.edge_count();
    auto& rels = header["relations"] = nlohmann::json::array();
    for (const auto& r : graph.relations()) {
        rels.push_back({{"name", r.name}, {"kind", r.kind == RelationKind::CrossLayer ? "cross_layer" : "intra"}});
    }
    std::string blob;
    auto& table = header["node_table"] = nlohmann::json::array();
    for (const Node& n : graph.nodes()) {
        const std::size_t key_at = blob.size();
        blob += n.key;
        const std::size_t text_at = blob.size();
        blob += n.text;
        table.push_back({static_cast<int>(n.type), key_at, n.key.size(), text_at, n.text.size()});
    }
    header["blob_bytes"] = blob.size();

    io::ByteWriter out;
    io::write_header(out, kMagic, header);
    out.text(blob);
    for (const Edge& e : graph.edges()) {
        out.u32(e.src);
        out.u32(e.rel);
        out.u32(e.dst);
    }
    out.write_file(path);
}

QuadGraph load_graph(const std::filesystem::path& path) {
    auto in = io::ByteReader::from_file(path);
    const auto header = io::read_header(in, kMagic);
    try {
        const auto version = header.at("version").get<std::uint32_t>();
        if (version != kGraphFormatVersion) {
            throw io::FormatError(path.string() + ": graph format version " + std::to_string(version) +
                                  ", this build reads version " + std::to_string(kGraphFormatVersion));
        }
        const auto n_nodes = header.at("node_count").get<std::size_t>();
        const auto n_edges = header.at("edge_count").get<std::size_t>();
        const auto blob_bytes = header.at("blob_bytes").get<std::size_t>();
        const auto& table = header.at("node_table");
        if (table.size() != n_nodes || header.at("relations").size() != header.at("relation_count").get<std::size_t>()) {
            throw io::FormatError(path.string() + ": header counts disagree with its tables");
        }
        std::vector<RelationType> relations;
        for (const auto& r : header.at("relations")) {
            relations.push_back({static_cast<RelationId>(relations.size()), r.at("name").get<std::string>(),
                                 r.at("kind").get<std::string>() == "cross_layer" ? RelationKind::CrossLayer
                                                                                  : RelationKind::Intra});
        }
        const std::string blob = in.text(blob_bytes);
        std::vector<Node> nodes;
        nodes.reserve(n_nodes);
        for (const auto& row : table) {
            const auto type = row.at(0).get<int>();
            const auto key_at = row.at(1).get<std::size_t>(), key_len = row.at(2).get<std::size_t>();
            const auto text_at = row.at(3).get<std::size_t>(), text_len = row.at(4).get<std::size_t>();
            if (type < 0 || type > 3 || key_at + key_len > blob.size() || text_at + text_len > blob.size()) {
                throw io::FormatError(path.string() + ": corrupt node table entry " + std::to_string(nodes.size()));
            }
            nodes.push_back({static_cast<NodeId>(nodes.size()), static_cast<NodeType>(type),
                             blob.substr(key_at, key_len), blob.substr(text_at, text_len)});
        }
        in.need(n_edges * 12);
        std::vector<Edge> edges(n_edges);
        for (Edge& e : edges) {
            e.src = in.u32();
            e.rel = in.u32();
            e.dst = in.u32();
        }
        return QuadGraph::build(std::move(nodes), std::move(relations), std::move(edges));
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError(path.string() + ": malformed header: " + e.what());
    }
}

}  // namespace quadgfm::graph
