#include <unordered_map>

#include "quadgfm/io/jsonl.hpp"
#include "quadgfm/quadgraph.hpp"

namespace quadgfm::graph {

namespace {

using io::require_string;

// Accumulates nodes/relations/edges with string-keyed lookup.
class GraphAssembler {
public:
    GraphAssembler() {
        for (std::string_view r : {kHasAttribute, kIncludedIn, kBelongsTo}) relation(r);
    }

    std::optional<NodeId> find(const std::string& key) const {
        const auto it = by_key_.find(key);
        return it == by_key_.end() ? std::nullopt : std::optional<NodeId>(it->second);
    }

    NodeId add_node(NodeType type, std::string key, std::string text) {
        const auto id = static_cast<NodeId>(nodes_.size());
        if (!by_key_.emplace(key, id).second) throw io::InputError("duplicate node id \"" + key + "\"");
        nodes_.push_back({id, type, std::move(key), std::move(text)});
        return id;
    }

    RelationId relation(std::string_view name) {
        const auto it = rel_ids_.find(std::string(name));
        if (it != rel_ids_.end()) return it->second;
        const auto id = static_cast<RelationId>(relations_.size());
        const bool reserved = name == kHasAttribute || name == kIncludedIn || name == kBelongsTo;
        relations_.push_back({id, std::string(name), reserved ? RelationKind::CrossLayer : RelationKind::Intra});
        rel_ids_.emplace(std::string(name), id);
        return id;
    }

    NodeType type_of(NodeId id) const { return nodes_[id].type; }

    void add_edge(NodeId src, std::string_view rel, NodeId dst) {
        check_edge_typing(rel, nodes_[src].type, nodes_[dst].type);
        edges_.push_back({src, relation(rel), dst});
    }

    QuadGraph finish() && { return QuadGraph::build(std::move(nodes_), std::move(relations_), std::move(edges_)); }

private:
    std::vector<Node> nodes_;
    std::vector<RelationType> relations_;
    std::vector<Edge> edges_;
    std::unordered_map<std::string, NodeId> by_key_;
    std::unordered_map<std::string, RelationId> rel_ids_;
};

}  // namespace

QuadGraph ingest_kg_docs(const std::filesystem::path& triple_file,
                         const std::filesystem::path& doc_file,
                         const std::filesystem::path& link_file) {
    GraphAssembler g;
    struct Triple {
        NodeId h, t;
        std::string r;
    };
    std::vector<Triple> triples;
    auto entity = [&](const std::string& name) {
        if (name.empty()) throw io::InputError("empty entity name");
        std::string key = fold_case(name);
        if (auto id = g.find(key)) return *id;
        return g.add_node(NodeType::Entity, std::move(key), name);
    };
    io::for_each_jsonl(triple_file, [&](std::size_t, const nlohmann::json& row) {
        const NodeId h = entity(require_string(row, "h"));
        std::string r = require_string(row, "r");
        const NodeId t = entity(require_string(row, "t"));
        if (r.empty()) throw io::InputError("empty relation name");
        triples.push_back({h, t, std::move(r)});
    });

    std::unordered_map<std::string, NodeId> docs;
    io::for_each_jsonl(doc_file, [&](std::size_t, const nlohmann::json& row) {
        std::string id = require_string(row, "id");
        const std::string title = require_string(row, "title");
        const std::string text = require_string(row, "text");
        std::string body = title.empty() ? text : (text.empty() ? title : title + "\n" + text);
        if (body.empty()) throw io::InputError("document \"" + id + "\" has no text");
        if (docs.contains(id)) throw io::InputError("duplicate document id \"" + id + "\"");
        // "doc:" keeps document keys apart from folded entity names.
        const NodeId node = g.add_node(NodeType::Document, "doc:" + id, std::move(body));
        docs.emplace(std::move(id), node);
    });

    for (const Triple& t : triples) g.add_edge(t.h, t.r, t.t);

    io::for_each_jsonl(link_file, [&](std::size_t, const nlohmann::json& row) {
        const std::string name = require_string(row, "entity");
        const std::string doc_id = require_string(row, "doc_id");
        const auto e = g.find(fold_case(name));
        if (!e || g.type_of(*e) != NodeType::Entity) {
            throw io::InputError("link references unknown entity \"" + name + "\"");
        }
        const auto d = docs.find(doc_id);
        if (d == docs.end()) throw io::InputError("link references unknown document \"" + doc_id + "\"");
        g.add_edge(*e, kIncludedIn, d->second);
    });
    return std::move(g).finish();
}

QuadGraph ingest_quad_layers(const std::filesystem::path& layered_file) {
    GraphAssembler g;
    struct PendingEdge {
        std::size_t line;
        std::string src, rel, dst;
    };
    std::vector<PendingEdge> pending;
    io::for_each_jsonl(layered_file, [&](std::size_t line, const nlohmann::json& row) {
        const std::string kind = require_string(row, "kind");
        if (kind == "node") {
            const std::string layer = require_string(row, "layer");
            const auto type = parse_node_type(layer);
            if (!type) throw io::InputError("unknown layer \"" + layer + "\"");
            g.add_node(*type, require_string(row, "id"), require_string(row, "text"));
        } else if (kind == "edge") {
            pending.push_back({line, require_string(row, "src"), require_string(row, "rel"),
                               require_string(row, "dst")});
        } else {
            throw io::InputError("unknown record kind \"" + kind + "\"");
        }
    });
    for (const auto& e : pending) {
        const std::string where = layered_file.string() + ":" + std::to_string(e.line) + ": ";
        const auto src = g.find(e.src);
        const auto dst = g.find(e.dst);
        if (!src) throw io::InputError(where + "unknown node \"" + e.src + "\"");
        if (!dst) throw io::InputError(where + "unknown node \"" + e.dst + "\"");
        try {
            g.add_edge(*src, e.rel, *dst);
        } catch (const GraphError& err) {
            throw GraphError(where + err.what());
        }
    }
    return std::move(g).finish();
}

}  // namespace quadgfm::graph
