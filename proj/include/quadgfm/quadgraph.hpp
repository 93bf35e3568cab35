#pragma once

// Four-layer unified graph: attribute, entity (knowledge graph), document
// and community layers joined by typed cross-layer relations.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace quadgfm::graph {

using NodeId = std::uint32_t;
using RelationId = std::uint32_t;

enum class NodeType : std::uint8_t { Attribute = 0, Entity = 1, Document = 2, Community = 3 };

inline constexpr std::size_t kNodeTypeCount = 4;
inline constexpr std::array<NodeType, kNodeTypeCount> kNodeTypes{
    NodeType::Attribute, NodeType::Entity, NodeType::Document, NodeType::Community};

std::string_view to_string(NodeType type);
// Accepts the layer names "attribute", "entity", "document", "community".
std::optional<NodeType> parse_node_type(std::string_view layer);

enum class RelationKind : std::uint8_t { Intra = 0, CrossLayer = 1 };

inline constexpr std::string_view kHasAttribute = "has_attribute";
inline constexpr std::string_view kIncludedIn = "included_in";
inline constexpr std::string_view kBelongsTo = "belongs_to";

struct RelationType {
    RelationId id = 0;
    std::string name;
    RelationKind kind = RelationKind::Intra;
    bool operator==(const RelationType&) const = default;
};

struct Node {
    NodeId id = 0;
    NodeType type = NodeType::Entity;
    // External identifier from the source export (entity name, doc id, ...).
    std::string key;
    std::string text;
    bool operator==(const Node&) const = default;
};

struct Edge {
    NodeId src = 0;
    RelationId rel = 0;
    NodeId dst = 0;
    bool operator==(const Edge&) const = default;
};

struct GraphError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Compressed adjacency: edge ids grouped by one endpoint.
struct Adjacency {
    std::vector<std::size_t> offsets;  // node count + 1
    std::vector<std::uint32_t> edge_ids;

    std::span<const std::uint32_t> of(NodeId v) const {
        return {edge_ids.data() + offsets[v], offsets[v + 1] - offsets[v]};
    }
};

// Immutable after construction; share freely across threads.
class QuadGraph {
public:
    QuadGraph();

    // Validates and indexes. Node and relation ids must be a permutation of
    // 0..n-1 (any input order). The reserved cross-layer relations are added
    // when absent.
    static QuadGraph build(std::vector<Node> nodes, std::vector<RelationType> relations,
                           std::vector<Edge> edges);

    std::size_t node_count() const { return nodes_.size(); }
    std::size_t relation_count() const { return relations_.size(); }
    std::size_t edge_count() const { return edges_.size(); }

    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<RelationType>& relations() const { return relations_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const Node& node(NodeId id) const { return nodes_.at(id); }
    NodeType type_of(NodeId id) const { return nodes_[id].type; }
    const RelationType& relation(RelationId id) const { return relations_.at(id); }

    std::optional<RelationId> find_relation(std::string_view name) const;
    RelationId reserved(std::string_view name) const { return *find_relation(name); }
    std::optional<NodeId> find_key(std::string_view key) const;

    // Edges sorted by source / by destination.
    const Adjacency& forward() const { return forward_; }
    const Adjacency& reverse() const { return reverse_; }

    bool is_cross_layer(const Edge& e) const {
        return relations_[e.rel].kind == RelationKind::CrossLayer;
    }

private:
    std::vector<Node> nodes_;
    std::vector<RelationType> relations_;
    std::vector<Edge> edges_;
    Adjacency forward_;
    Adjacency reverse_;
    std::unordered_map<std::string, NodeId> key_index_;
};

// Throws GraphError if a cross-layer edge violates the endpoint typing table:
//   has_attribute: Entity -> Attribute
//   included_in:   Entity -> Document
//   belongs_to:    Entity|Document -> Community
void check_edge_typing(std::string_view relation, NodeType src, NodeType dst);

// ---- ingestion ---------------------------------------------------------

// Triples {"h","r","t"}, documents {"id","title","text"}, links
// {"entity","doc_id"}. Entities are merged by case-insensitive name.
QuadGraph ingest_kg_docs(const std::filesystem::path& triple_file,
                         const std::filesystem::path& doc_file,
                         const std::filesystem::path& link_file);

// Records {"kind":"node","layer":...,"id":...,"text":...} and
// {"kind":"edge","src":...,"rel":...,"dst":...}.
QuadGraph ingest_quad_layers(const std::filesystem::path& layered_file);

std::string fold_case(std::string_view text);

// ---- splitting ---------------------------------------------------------

struct Subgraph {
    QuadGraph graph;
    std::vector<NodeId> global_ids;    // local id -> global id
    std::vector<std::size_t> queries;  // indices into the query list
};

struct SplitResult {
    std::vector<Subgraph> parts;
    std::vector<std::size_t> dropped_queries;
    // global id -> (part index, local id)
    std::vector<std::uint32_t> part_of;
    std::vector<NodeId> local_of;
};

// Groups connected components into bins of at most max_nodes * 1.1 nodes
// (first-fit decreasing; oversized components are cut into BFS-ordered
// chunks of max_nodes). Each query goes to the part holding most of its
// labeled nodes, ties to the lower part index.
SplitResult split_subgraphs(const QuadGraph& graph,
                            std::span<const std::vector<NodeId>> query_labels,
                            std::size_t max_nodes);

// ---- persistence -------------------------------------------------------

inline constexpr std::uint32_t kGraphFormatVersion = 1;

void save_graph(const QuadGraph& graph, const std::filesystem::path& path);
QuadGraph load_graph(const std::filesystem::path& path);

// ---- statistics --------------------------------------------------------

struct GraphStats {
    std::array<std::size_t, kNodeTypeCount> nodes_by_type{};
    std::size_t node_count = 0;
    std::size_t relation_count = 0;
    std::size_t edge_count = 0;
    std::size_t cross_layer_edge_count = 0;

    std::size_t count(NodeType t) const { return nodes_by_type[static_cast<std::size_t>(t)]; }
    bool operator==(const GraphStats&) const = default;
};

GraphStats graph_stats(const QuadGraph& graph);

}  // namespace quadgfm::graph
