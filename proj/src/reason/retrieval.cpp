#include <algorithm>
#include <numeric>

#include "quadgfm/reason.hpp"

namespace quadgfm::reason {

RetrievalResult topk_per_type(std::span<const double> scores, const graph::QuadGraph& graph, std::size_t k) {
    if (k < 1) throw ReasonError("top-k needs k >= 1");
    if (scores.size() != graph.node_count()) {
        throw ReasonError("score vector has " + std::to_string(scores.size()) + " entries for a graph of " +
                          std::to_string(graph.node_count()) + " nodes");
    }
    std::array<std::vector<NodeId>, graph::kNodeTypeCount> ids;
    for (const auto& n : graph.nodes()) ids[static_cast<std::size_t>(n.type)].push_back(n.id);

    const auto better = [&](NodeId a, NodeId b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; };
    RetrievalResult out;
    for (std::size_t t = 0; t < graph::kNodeTypeCount; ++t) {
        auto& v = ids[t];
        const std::size_t take = std::min(k, v.size());
        std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(take), v.end(), better);
        out.by_type[t].reserve(take);
        for (std::size_t i = 0; i < take; ++i) out.by_type[t].push_back({v[i], scores[v[i]]});
    }
    return out;
}

namespace {

// Header line, then one line per item.
void section(std::string& out, std::string_view title, const std::vector<std::string>& lines) {
    out += "\n### ";
    out += title;
    out += ":\n";
    for (const auto& l : lines) {
        out += l;
        out += '\n';
    }
}

std::vector<std::string> texts(const RetrievalResult& r, NodeType t, const graph::QuadGraph& g) {
    std::vector<std::string> out;
    for (const auto& s : r.of(t)) {
        if (s.id >= g.node_count()) throw ReasonError("retrieved node " + std::to_string(s.id) + " is not in the graph");
        out.push_back(g.node(s.id).text);
    }
    return out;
}

}  // namespace

PromptBundle build_prompt(std::string_view query, const RetrievalResult& retrieval, const graph::QuadGraph& graph,
                          const PromptOptions& options) {
    PromptBundle b;
    b.documents = texts(retrieval, NodeType::Document, graph);
    b.entities = texts(retrieval, NodeType::Entity, graph);
    b.text = std::string(kPromptPreamble);
    b.text += '\n';
    section(b.text, "Document", b.documents);
    section(b.text, "Entity", b.entities);
    if (options.extra_sections) {
        section(b.text, "Attribute", texts(retrieval, NodeType::Attribute, graph));
        section(b.text, "Community", texts(retrieval, NodeType::Community, graph));
    }
    section(b.text, "Question", {std::string(query)});
    b.text += "Thought: ";
    return b;
}

}  // namespace quadgfm::reason
