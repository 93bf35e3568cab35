#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include "quadgfm/io/jsonl.hpp"
#include "quadgfm/reason.hpp"

namespace quadgfm::reason {

std::string normalize_answer(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (unsigned char c : text) {
        if (std::ispunct(c)) continue;
        cleaned.push_back(static_cast<char>(std::tolower(c)));
    }
    std::istringstream in(cleaned);
    std::string word, out;
    while (in >> word) {
        if (word == "a" || word == "an" || word == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += word;
    }
    return out;
}

namespace {

std::vector<std::string> tokens(const std::string& normalized) {
    std::istringstream in(normalized);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    if (pred.empty() || gold.empty()) return pred == gold ? 1.0 : 0.0;
    std::map<std::string, int> counts;
    for (const auto& t : gold) ++counts[t];
    int same = 0;
    for (const auto& t : pred) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++same;
        }
    }
    if (same == 0) return 0.0;
    const double precision = static_cast<double>(same) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(same) / static_cast<double>(gold.size());
    return 2 * precision * recall / (precision + recall);
}

NodeId resolve_node(const nlohmann::json& ref, const graph::QuadGraph& g) {
    if (ref.is_number_unsigned() || ref.is_number_integer()) {
        const auto id = ref.get<std::int64_t>();
        if (id < 0 || static_cast<std::size_t>(id) >= g.node_count()) {
            throw io::InputError("node id " + std::to_string(id) + " is not in the graph");
        }
        return static_cast<NodeId>(id);
    }
    if (ref.is_string()) {
        if (auto id = g.find_key(ref.get<std::string>())) return *id;
        throw io::InputError("unknown node key \"" + ref.get<std::string>() + "\"");
    }
    throw io::InputError("node references must be ids or keys");
}

std::vector<NodeId> node_list(const nlohmann::json& row, const char* key, const graph::QuadGraph& g, bool required) {
    std::vector<NodeId> out;
    if (!row.contains(key)) {
        if (required) throw io::InputError(std::string("missing array field \"") + key + "\"");
        return out;
    }
    if (!row.at(key).is_array()) throw io::InputError(std::string("field \"") + key + "\" must be an array");
    for (const auto& r : row.at(key)) out.push_back(resolve_node(r, g));
    return out;
}

double mean(double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : 0.0; }

double fraction_found(std::span<const NodeId> wanted, const std::set<NodeId>& got) {
    std::set<NodeId> unique(wanted.begin(), wanted.end());
    std::size_t hit = 0;
    for (NodeId v : unique) hit += got.contains(v);
    return static_cast<double>(hit) / static_cast<double>(unique.size());
}

}  // namespace

AnswerScore score_answer(std::string_view prediction, std::span<const std::string> golds) {
    if (golds.empty()) throw ReasonError("score_answer needs at least one gold answer");
    const auto pred = normalize_answer(prediction);
    const auto pred_tokens = tokens(pred);
    AnswerScore s;
    for (const auto& g : golds) {
        const auto gold = normalize_answer(g);
        if (gold == pred) s.em = 1.0;
        s.f1 = std::max(s.f1, token_f1(pred_tokens, tokens(gold)));
    }
    return s;
}

std::vector<EvalItem> load_dataset(const std::filesystem::path& path, const graph::QuadGraph& graph) {
    std::vector<EvalItem> out;
    io::for_each_jsonl(path, [&](std::size_t, const nlohmann::json& row) {
        EvalItem item;
        item.query_id = io::require_string(row, "query_id");
        item.query = io::require_string(row, "query");
        if (!row.contains("answers") || !row.at("answers").is_array()) {
            throw io::InputError("missing array field \"answers\"");
        }
        item.answers = row.at("answers").get<std::vector<std::string>>();
        item.supporting_docs = node_list(row, "supporting_docs", graph, true);
        for (NodeId d : item.supporting_docs) {
            if (graph.type_of(d) != NodeType::Document) {
                throw io::InputError("supporting doc " + std::to_string(d) + " is not a document node");
            }
        }
        item.evidence = node_list(row, "evidence", graph, false);
        out.push_back(std::move(item));
    });
    return out;
}

double Metrics::recall_at(std::size_t k) const {
    auto it = recall.find(k);
    if (it == recall.end()) throw ReasonError("recall@" + std::to_string(k) + " was not computed");
    return it->second;
}

Metrics evaluate_run(std::span<const EvalItem> dataset, std::span<const RetrievalResult> retrievals,
                     std::span<const AnswerRecord> answers, std::span<const std::size_t> k_list) {
    if (retrievals.size() != dataset.size()) {
        throw ReasonError("dataset has " + std::to_string(dataset.size()) + " queries but " +
                          std::to_string(retrievals.size()) + " retrievals were given");
    }
    if (!answers.empty() && answers.size() != dataset.size()) {
        throw ReasonError("dataset has " + std::to_string(dataset.size()) + " queries but " +
                          std::to_string(answers.size()) + " answers were given");
    }
    for (std::size_t k : k_list)
        if (k < 1) throw ReasonError("recall@k needs k >= 1");
    const std::size_t k_max = k_list.empty() ? 0 : *std::max_element(k_list.begin(), k_list.end());

    Metrics m;
    m.queries = dataset.size();
    std::map<std::size_t, double> recall_sum;
    std::size_t with_docs = 0, with_evidence = 0;
    double em = 0, f1 = 0, evidence = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& item = dataset[i];
        const auto& r = retrievals[i];
        if (r.query_id != item.query_id) {
            throw ReasonError("retrieval " + std::to_string(i) + " is for query \"" + r.query_id + "\", expected \"" +
                              item.query_id + "\"");
        }
        if (!answers.empty()) {
            if (answers[i].query_id != item.query_id) {
                throw ReasonError("answer " + std::to_string(i) + " is for query \"" + answers[i].query_id +
                                  "\", expected \"" + item.query_id + "\"");
            }
            if (!item.answers.empty()) {
                const auto s = score_answer(answers[i].answer, item.answers);
                em += s.em;
                f1 += s.f1;
            }
        }
        const auto& docs = r.of(NodeType::Document);
        if (!item.supporting_docs.empty()) {
            ++with_docs;
            for (std::size_t k : k_list) {
                std::set<NodeId> top;
                for (std::size_t j = 0; j < std::min(k, docs.size()); ++j) top.insert(docs[j].id);
                recall_sum[k] += fraction_found(item.supporting_docs, top);
            }
        }
        if (!item.evidence.empty()) {
            ++with_evidence;
            std::set<NodeId> top;
            for (const auto& list : r.by_type)
                for (std::size_t j = 0; j < std::min(k_max, list.size()); ++j) top.insert(list[j].id);
            evidence += fraction_found(item.evidence, top);
        }
    }
    m.em = mean(em, dataset.size());
    m.f1 = mean(f1, dataset.size());
    for (std::size_t k : k_list) m.recall[k] = mean(recall_sum[k], with_docs);
    m.evidence_recall = mean(evidence, with_evidence);
    return m;
}

}  // namespace quadgfm::reason
