#include <algorithm>
#include <cctype>

#include "quadgfm/quadgraph.hpp"

namespace quadgfm::graph {

namespace {

constexpr std::array<std::string_view, 3> kReserved{kHasAttribute, kIncludedIn, kBelongsTo};

bool is_reserved(std::string_view name) {
    return std::find(kReserved.begin(), kReserved.end(), name) != kReserved.end();
}

Adjacency build_adjacency(const std::vector<Edge>& edges, std::size_t n_nodes, bool by_src) {
    Adjacency adj;
    adj.offsets.assign(n_nodes + 1, 0);
    for (const Edge& e : edges) ++adj.offsets[(by_src ? e.src : e.dst) + 1];
    for (std::size_t v = 0; v < n_nodes; ++v) adj.offsets[v + 1] += adj.offsets[v];
    adj.edge_ids.resize(edges.size());
    std::vector<std::size_t> cursor(adj.offsets.begin(), adj.offsets.end() - 1);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const NodeId v = by_src ? edges[i].src : edges[i].dst;
        adj.edge_ids[cursor[v]++] = static_cast<std::uint32_t>(i);
    }
    return adj;
}

std::string describe(const Node& n) {
    return std::string(to_string(n.type)) + " node " + std::to_string(n.id) +
           (n.key.empty() ? "" : " (\"" + n.key + "\")");
}

}  // namespace

std::string_view to_string(NodeType type) {
    switch (type) {
        case NodeType::Attribute: return "attribute";
        case NodeType::Entity: return "entity";
        case NodeType::Document: return "document";
        case NodeType::Community: return "community";
    }
    return "?";
}

std::optional<NodeType> parse_node_type(std::string_view layer) {
    for (NodeType t : kNodeTypes) {
        if (to_string(t) == layer) return t;
    }
    return std::nullopt;
}

std::string fold_case(std::string_view text) {
    std::string out(text);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

void check_edge_typing(std::string_view relation, NodeType src, NodeType dst) {
    bool ok = true;
    if (relation == kHasAttribute) {
        ok = src == NodeType::Entity && dst == NodeType::Attribute;
    } else if (relation == kIncludedIn) {
        ok = src == NodeType::Entity && dst == NodeType::Document;
    } else if (relation == kBelongsTo) {
        ok = (src == NodeType::Entity || src == NodeType::Document) && dst == NodeType::Community;
    }
    if (!ok) {
        throw GraphError("relation " + std::string(relation) + " cannot link " +
                         std::string(to_string(src)) + " -> " + std::string(to_string(dst)));
    }
}

QuadGraph::QuadGraph() {
    for (std::string_view name : kReserved) {
        relations_.push_back({static_cast<RelationId>(relations_.size()), std::string(name),
                              RelationKind::CrossLayer});
    }
    forward_.offsets = {0};
    reverse_.offsets = {0};
}

QuadGraph QuadGraph::build(std::vector<Node> nodes, std::vector<RelationType> relations,
                           std::vector<Edge> edges) {
    QuadGraph g;
    g.relations_.clear();

    std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].id != i) {
            if (i > 0 && nodes[i].id == nodes[i - 1].id) {
                throw GraphError("duplicate node id " + std::to_string(nodes[i].id));
            }
            throw GraphError("node ids are not dense: missing id " + std::to_string(i));
        }
        if (nodes[i].type == NodeType::Document && nodes[i].text.empty()) {
            throw GraphError(describe(nodes[i]) + " has empty text");
        }
        if (!nodes[i].key.empty()) {
            const auto [it, inserted] = g.key_index_.emplace(nodes[i].key, nodes[i].id);
            if (!inserted) throw GraphError("duplicate node key \"" + nodes[i].key + "\"");
        }
    }

    std::sort(relations.begin(), relations.end(),
              [](const RelationType& a, const RelationType& b) { return a.id < b.id; });
    std::unordered_map<std::string, RelationId> names;
    for (std::size_t i = 0; i < relations.size(); ++i) {
        if (relations[i].id != i) {
            if (i > 0 && relations[i].id == relations[i - 1].id) {
                throw GraphError("duplicate relation id " + std::to_string(relations[i].id));
            }
            throw GraphError("relation ids are not dense: missing id " + std::to_string(i));
        }
        if (!names.emplace(relations[i].name, relations[i].id).second) {
            throw GraphError("duplicate relation name \"" + relations[i].name + "\"");
        }
        if (is_reserved(relations[i].name)) relations[i].kind = RelationKind::CrossLayer;
    }
    for (std::string_view name : kReserved) {
        if (!names.contains(std::string(name))) {
            const auto id = static_cast<RelationId>(relations.size());
            relations.push_back({id, std::string(name), RelationKind::CrossLayer});
            names.emplace(std::string(name), id);
        }
    }

    for (std::size_t i = 0; i < edges.size(); ++i) {
        const Edge& e = edges[i];
        if (e.src >= nodes.size() || e.dst >= nodes.size()) {
            throw GraphError("edge " + std::to_string(i) + " endpoint out of range (" +
                             std::to_string(e.src) + " -> " + std::to_string(e.dst) + ", " +
                             std::to_string(nodes.size()) + " nodes)");
        }
        if (e.rel >= relations.size()) {
            throw GraphError("edge " + std::to_string(i) + " relation id " + std::to_string(e.rel) +
                             " out of range");
        }
        check_edge_typing(relations[e.rel].name, nodes[e.src].type, nodes[e.dst].type);
    }

    g.nodes_ = std::move(nodes);
    g.relations_ = std::move(relations);
    g.edges_ = std::move(edges);
    g.forward_ = build_adjacency(g.edges_, g.nodes_.size(), true);
    g.reverse_ = build_adjacency(g.edges_, g.nodes_.size(), false);
    return g;
}

std::optional<RelationId> QuadGraph::find_relation(std::string_view name) const {
    for (const auto& r : relations_) {
        if (r.name == name) return r.id;
    }
    return std::nullopt;
}

std::optional<NodeId> QuadGraph::find_key(std::string_view key) const {
    const auto it = key_index_.find(std::string(key));
    if (it == key_index_.end()) return std::nullopt;
    return it->second;
}

GraphStats graph_stats(const QuadGraph& graph) {
    GraphStats s;
    for (const Node& n : graph.nodes()) ++s.nodes_by_type[static_cast<std::size_t>(n.type)];
    s.node_count = graph.node_count();
    s.relation_count = graph.relation_count();
    s.edge_count = graph.edge_count();
    for (const Edge& e : graph.edges()) s.cross_layer_edge_count += graph.is_cross_layer(e) ? 1 : 0;
    return s;
}

}  // namespace quadgfm::graph
