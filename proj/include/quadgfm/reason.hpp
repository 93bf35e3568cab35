#pragma once

// Retrieval of the best-scoring nodes per type, the reading-comprehension
// prompt, a chat-completions client, answer parsing and QA metrics.

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quadgfm/quadgraph.hpp"

namespace quadgfm::reason {

using graph::NodeId;
using graph::NodeType;

struct ReasonError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Transport or protocol failure talking to the LLM endpoint.
struct LlmError : ReasonError {
    using ReasonError::ReasonError;
};
struct LlmTimeout : LlmError {
    using LlmError::LlmError;
};

struct ScoredNode {
    NodeId id = 0;
    double score = 0;
    bool operator==(const ScoredNode&) const = default;
};

struct RetrievalResult {
    std::string query_id;
    std::array<std::vector<ScoredNode>, graph::kNodeTypeCount> by_type;

    const std::vector<ScoredNode>& of(NodeType t) const { return by_type[static_cast<std::size_t>(t)]; }
    bool operator==(const RetrievalResult&) const = default;
};

// Best k nodes of every type, score descending, ties to the lower id.
RetrievalResult topk_per_type(std::span<const double> scores, const graph::QuadGraph& graph, std::size_t k);

inline constexpr std::string_view kPromptPreamble =
    "As an advanced reading comprehension assistant, your task is to analyze text passages and corresponding "
    "questions meticulously. Your response start after \"Thought: \", where you will methodically break down the "
    "reasoning process, illustrating how you arrive at conclusions. Conclude with \"Answer: \" to present a "
    "concise, definitive response, devoid of additional elaborations.'";

struct PromptOptions {
    // Append "### Attribute:" and "### Community:" sections after the entities.
    bool extra_sections = false;
};

struct PromptBundle {
    std::string text;
    std::vector<std::string> documents;
    std::vector<std::string> entities;
};

PromptBundle build_prompt(std::string_view query, const RetrievalResult& retrieval, const graph::QuadGraph& graph,
                          const PromptOptions& options = {});

// ---- LLM client ----------------------------------------------------------

struct LlmConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-4o-mini";
    double temperature = 0.0;
    double timeout_s = 60.0;
    int max_attempts = 3;
    double backoff_s = 0.5;  // doubled after every failed attempt
    std::size_t max_in_flight = 4;
    std::string api_key_env = "G_REASONER_API_KEY";
};

// One request; the first choice's message content. Retries connection
// failures, timeouts, 429 and 5xx.
std::string call_llm(const std::string& prompt, const LlmConfig& config);

struct ParsedAnswer {
    std::string answer;
    bool parsed = false;  // an "Answer:" marker was present
};
ParsedAnswer parse_answer(std::string_view raw);

struct AnswerRecord {
    std::string query_id;
    std::string raw;
    std::string answer;
    bool parsed = false;
    double latency_s = 0;
};

struct PromptJob {
    std::string query_id;
    std::string prompt;
};

// Calls the endpoint for every job with at most config.max_in_flight requests
// outstanding. Records come back in job order; the first failure (in job
// order) is rethrown once all calls have finished.
std::vector<AnswerRecord> answer_all(std::span<const PromptJob> jobs, const LlmConfig& config);

// ---- metrics -------------------------------------------------------------

// Lower-case, drop ASCII punctuation and the articles a/an/the, collapse
// whitespace.
std::string normalize_answer(std::string_view text);

struct AnswerScore {
    double em = 0;
    double f1 = 0;
};
AnswerScore score_answer(std::string_view prediction, std::span<const std::string> golds);

struct EvalItem {
    std::string query_id;
    std::string query;
    std::vector<std::string> answers;
    std::vector<NodeId> supporting_docs;
    std::vector<NodeId> evidence;  // optional labeled evidence nodes of any type
};

// {"query_id", "query", "answers", "supporting_docs", "evidence"?}. Node
// references are ids or node keys of `graph`.
std::vector<EvalItem> load_dataset(const std::filesystem::path& path, const graph::QuadGraph& graph);

struct Metrics {
    double em = 0;
    double f1 = 0;
    std::map<std::size_t, double> recall;  // document recall@k
    double evidence_recall = 0;
    std::size_t queries = 0;

    double recall_at(std::size_t k) const;
    bool operator==(const Metrics&) const = default;
};

// Recall@k averages |top-k documents ∩ supporting| / |supporting| over the
// queries that list supporting documents. Evidence recall uses the top
// max(k_list) nodes of every type. Empty `answers` leaves EM/F1 at zero.
Metrics evaluate_run(std::span<const EvalItem> dataset, std::span<const RetrievalResult> retrievals,
                     std::span<const AnswerRecord> answers, std::span<const std::size_t> k_list);

}  // namespace quadgfm::reason
