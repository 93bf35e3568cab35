#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "quadgfm/io/binary.hpp"
#include "quadgfm/io/jsonl.hpp"
#include "quadgfm/quadgraph.hpp"
#include "synthetic.hpp"
#include "tempdir.hpp"

using namespace quadgfm::graph;
using quadgfm::testing::TempDir;

namespace {

void check_typing(const QuadGraph& g) {
    for (const auto& e : g.edges())
        if (g.is_cross_layer(e)) CHECK_NOTHROW(check_edge_typing(g.relation(e.rel).name, g.type_of(e.src), g.type_of(e.dst)));
}

std::multiset<std::uint32_t> all_ids(const Adjacency& a) { return {a.edge_ids.begin(), a.edge_ids.end()}; }

QuadGraph small_graph() {
    return QuadGraph::build({{0, NodeType::Entity, "e0", "Paris"}, {1, NodeType::Entity, "e1", "France"},
                             {2, NodeType::Document, "d0", "Paris is in France."}},
                            {{0, std::string(kHasAttribute), RelationKind::CrossLayer},
                             {1, std::string(kIncludedIn), RelationKind::CrossLayer},
                             {2, std::string(kBelongsTo), RelationKind::CrossLayer},
                             {3, "born_in", RelationKind::Intra}},
                            {{0, 3, 1}, {0, 1, 2}});
}

}  // namespace

TEST_CASE("empty graph carries the reserved relations") {
    const QuadGraph g = QuadGraph::build({}, {}, {});
    CHECK(g.node_count() == 0);
    CHECK(g.relation_count() == 3);
    for (auto name : {kHasAttribute, kIncludedIn, kBelongsTo}) {
        REQUIRE(g.find_relation(name));
        CHECK(g.relation(*g.find_relation(name)).kind == RelationKind::CrossLayer);
    }
    const auto s = graph_stats(g);
    CHECK(s == GraphStats{{}, 0, 3, 0, 0});
}

TEST_CASE("build validates ids, ranges and endpoint typing") {
    // build() appends reserved relations after the user's when they are missing.
    const QuadGraph g = QuadGraph::build({{0, NodeType::Entity, "", "a"}, {1, NodeType::Entity, "", "b"},
                                          {2, NodeType::Document, "", "doc"}},
                                         {{0, "born_in", RelationKind::Intra}}, {});
    CHECK(g.relation_count() == 4);
    const auto inc = g.reserved(kIncludedIn);
    const QuadGraph h = QuadGraph::build(g.nodes(), g.relations(), {{0, 0, 1}, {0, inc, 2}});
    const auto s = graph_stats(h);
    CHECK(s.edge_count == 2);
    CHECK(s.cross_layer_edge_count == 1);
    CHECK(s.count(NodeType::Entity) == 2);
    CHECK(s.count(NodeType::Document) == 1);

    const auto has_attr = g.reserved(kHasAttribute);
    CHECK_THROWS_AS(QuadGraph::build(g.nodes(), g.relations(), {{2, has_attr, 0}}), GraphError);
    CHECK_THROWS_AS(QuadGraph::build(g.nodes(), g.relations(), {{0, 0, 7}}), GraphError);
    CHECK_THROWS_AS(QuadGraph::build(g.nodes(), g.relations(), {{0, 9, 1}}), GraphError);
    CHECK_THROWS_WITH_AS(QuadGraph::build({{0, NodeType::Entity, "", "a"}, {0, NodeType::Entity, "", "b"}}, {}, {}),
                         doctest::Contains("duplicate node id 0"), GraphError);
    CHECK_THROWS_AS(QuadGraph::build({{0, NodeType::Document, "", ""}}, {}, {}), GraphError);
    CHECK_THROWS_AS(QuadGraph::build({{1, NodeType::Entity, "", "a"}}, {}, {}), GraphError);
}

TEST_CASE("endpoint typing table") {
    CHECK_NOTHROW(check_edge_typing(kHasAttribute, NodeType::Entity, NodeType::Attribute));
    CHECK_NOTHROW(check_edge_typing(kIncludedIn, NodeType::Entity, NodeType::Document));
    CHECK_NOTHROW(check_edge_typing(kBelongsTo, NodeType::Entity, NodeType::Community));
    CHECK_NOTHROW(check_edge_typing(kBelongsTo, NodeType::Document, NodeType::Community));
    CHECK_THROWS_AS(check_edge_typing(kBelongsTo, NodeType::Attribute, NodeType::Community), GraphError);
    CHECK_THROWS_AS(check_edge_typing(kIncludedIn, NodeType::Document, NodeType::Document), GraphError);
    CHECK_THROWS_AS(check_edge_typing(kHasAttribute, NodeType::Document, NodeType::Entity), GraphError);
    CHECK_NOTHROW(check_edge_typing("anything", NodeType::Attribute, NodeType::Community));
}

TEST_CASE("adjacency indices cover every edge once per direction") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const auto g = quadgfm::testing::random_graph(40, 150, 4, rng);
        check_typing(g);
        std::multiset<std::uint32_t> want;
        for (std::uint32_t i = 0; i < g.edge_count(); ++i) want.insert(i);
        CHECK(all_ids(g.forward()) == want);
        CHECK(all_ids(g.reverse()) == want);
        for (NodeId v = 0; v < g.node_count(); ++v) {
            for (auto e : g.forward().of(v)) CHECK(g.edges()[e].src == v);
            for (auto e : g.reverse().of(v)) CHECK(g.edges()[e].dst == v);
        }
        const auto s = graph_stats(g);
        std::size_t total = 0;
        for (auto c : s.nodes_by_type) total += c;
        CHECK(total == s.node_count);
    }
}

TEST_CASE("kg/doc ingestion") {
    TempDir dir;
    const auto triples = dir.write("t.jsonl", R"({"h":"a","r":"r","t":"b"})" "\n");
    const auto docs = dir.write("d.jsonl", R"({"id":"D","title":"Doc","text":"about a"})" "\n");
    const auto links = dir.write("l.jsonl", R"({"entity":"a","doc_id":"D"})" "\n");
    const QuadGraph g = ingest_kg_docs(triples, docs, links);
    const auto s = graph_stats(g);
    CHECK(s.count(NodeType::Entity) == 2);
    CHECK(s.count(NodeType::Document) == 1);
    CHECK(s.edge_count == 2);
    CHECK(s.cross_layer_edge_count == 1);
    check_typing(g);

    SUBCASE("entities merge case-insensitively") {
        const auto t2 = dir.write("t2.jsonl", R"({"h":"a","r":"r","t":"b"})" "\n" R"({"h":"A","r":"r","t":"c"})" "\n");
        const auto g2 = ingest_kg_docs(t2, docs, links);
        CHECK(graph_stats(g2).count(NodeType::Entity) == 3);
        CHECK(g2.relation_count() == 4);
    }
    SUBCASE("unknown entity in a link is named") {
        const auto bad = dir.write("bad.jsonl", R"({"entity":"x","doc_id":"D"})" "\n");
        CHECK_THROWS_WITH(ingest_kg_docs(triples, docs, bad), doctest::Contains("\"x\""));
    }
    SUBCASE("malformed line reports its number") {
        const auto bad = dir.write("bad.jsonl", R"({"h":"a","r":"r","t":"b"})" "\n" "{not json\n");
        CHECK_THROWS_WITH(ingest_kg_docs(bad, docs, links), doctest::Contains(":2:"));
    }
}

TEST_CASE("layered ingestion") {
    TempDir dir;
    const auto ok = dir.write("q.jsonl",
                              R"({"kind":"node","layer":"entity","id":"e","text":"E"})" "\n"
                              R"({"kind":"node","layer":"attribute","id":"a","text":"red"})" "\n"
                              R"({"kind":"node","layer":"document","id":"d","text":"a doc"})" "\n"
                              R"({"kind":"node","layer":"community","id":"c","text":"group"})" "\n"
                              R"({"kind":"edge","src":"e","rel":"has_attribute","dst":"a"})" "\n"
                              R"({"kind":"edge","src":"e","rel":"belongs_to","dst":"c"})" "\n"
                              R"({"kind":"edge","src":"d","rel":"belongs_to","dst":"c"})" "\n");
    const auto g = ingest_quad_layers(ok);
    const auto s = graph_stats(g);
    for (auto t : kNodeTypes) CHECK(s.count(t) == 1);
    CHECK(s.cross_layer_edge_count == 3);
    CHECK(g.find_key("c") == NodeId{3});

    const auto bad_layer = dir.write("b1.jsonl", R"({"kind":"node","layer":"planet","id":"p","text":"x"})" "\n");
    CHECK_THROWS_WITH(ingest_quad_layers(bad_layer), doctest::Contains("planet"));
    const auto bad_type = dir.write("b2.jsonl",
                                    R"({"kind":"node","layer":"attribute","id":"a","text":"red"})" "\n"
                                    R"({"kind":"node","layer":"community","id":"c","text":"g"})" "\n"
                                    R"({"kind":"edge","src":"a","rel":"belongs_to","dst":"c"})" "\n");
    CHECK_THROWS_AS(ingest_quad_layers(bad_type), GraphError);
}

TEST_CASE("save/load round trip") {
    TempDir dir;
    for (const QuadGraph& g : {QuadGraph::build({}, {}, {}), small_graph(), quadgfm::testing::planted_task().graph}) {
        save_graph(g, dir / "g.qgr");
        const QuadGraph back = load_graph(dir / "g.qgr");
        CHECK(back.nodes() == g.nodes());
        CHECK(back.relations() == g.relations());
        CHECK(back.edges() == g.edges());
    }
    dir.write("bad.qgr", "XXXX0000000000000000");
    CHECK_THROWS_AS(load_graph(dir / "bad.qgr"), quadgfm::io::FormatError);

    save_graph(small_graph(), dir / "g.qgr");
    std::string bytes;
    {
        std::ifstream in(dir / "g.qgr", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    dir.write("cut.qgr", bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_WITH_AS(load_graph(dir / "cut.qgr"), doctest::Contains("truncated"), quadgfm::io::FormatError);
    // Bump the version number inside the JSON header.
    const auto pos = bytes.find("\"version\":1");
    REQUIRE(pos != std::string::npos);
    std::string wrong = bytes;
    wrong[pos + 10] = '9';
    dir.write("v.qgr", wrong);
    CHECK_THROWS_WITH(load_graph(dir / "v.qgr"), doctest::Contains("version"));
}

TEST_CASE("split_subgraphs") {
    SUBCASE("small graph stays whole") {
        std::mt19937_64 rng(1);
        const auto g = quadgfm::testing::random_graph(10, 20, 2, rng);
        const auto r = split_subgraphs(g, {}, 100);
        REQUIRE(r.parts.size() == 1);
        CHECK(r.parts[0].graph.nodes().size() == 10);
        CHECK(r.parts[0].graph.edges() == g.edges());
    }
    SUBCASE("two components of 60 with ties to the lower part") {
        std::vector<Node> nodes;
        std::vector<Edge> edges;
        for (NodeId v = 0; v < 120; ++v) nodes.push_back({v, NodeType::Entity, "", "n"});
        for (NodeId v = 0; v + 1 < 60; ++v) edges.push_back({v, 3, v + 1});
        for (NodeId v = 60; v + 1 < 120; ++v) edges.push_back({v, 3, v + 1});
        for (auto& e : edges) e.rel = 0;
        const auto g = QuadGraph::build(nodes, {{0, "next", RelationKind::Intra}}, edges);
        const std::vector<std::vector<NodeId>> queries{{0, 1, 100}, {5, 70, 71}, {10, 80}, {}};
        const auto r = split_subgraphs(g, queries, 60);
        REQUIRE(r.parts.size() == 2);
        CHECK(r.parts[0].graph.node_count() == 60);
        CHECK(r.parts[1].graph.node_count() == 60);
        auto holds = [&](std::size_t part, std::size_t q) {
            const auto& qs = r.parts[part].queries;
            return std::find(qs.begin(), qs.end(), q) != qs.end();
        };
        CHECK(r.part_of[0] != r.part_of[70]);
        CHECK(holds(r.part_of[0], 0));
        CHECK(holds(r.part_of[70], 1));
        // Query 2 splits 1:1 and goes to the lower part index.
        CHECK(holds(0, 2));
        CHECK_FALSE(holds(1, 2));
        CHECK(r.dropped_queries == std::vector<std::size_t>{3});
    }
    SUBCASE("parts are disjoint, bounded and keep only internal edges") {
        const auto task = quadgfm::testing::planted_task();
        const auto r = split_subgraphs(task.graph, {}, 50);
        std::set<NodeId> seen;
        std::size_t edges = 0;
        for (const auto& p : r.parts) {
            CHECK(p.graph.node_count() <= 55);
            for (NodeId l = 0; l < p.global_ids.size(); ++l) {
                CHECK(seen.insert(p.global_ids[l]).second);
                CHECK(p.graph.node(l).text == task.graph.node(p.global_ids[l]).text);
            }
            for (const auto& e : p.graph.edges()) {
                const Edge global{p.global_ids[e.src], e.rel, p.global_ids[e.dst]};
                CHECK(std::find(task.graph.edges().begin(), task.graph.edges().end(), global) != task.graph.edges().end());
            }
            edges += p.graph.edge_count();
            check_typing(p.graph);
        }
        CHECK(seen.size() == task.graph.node_count());
        CHECK(edges <= task.graph.edge_count());
    }
}
