#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "quadgfm/reason.hpp"
#include "stub_llm.hpp"
#include "synthetic.hpp"
#include "tempdir.hpp"

using namespace quadgfm;
using namespace quadgfm::reason;
using graph::Node;
using graph::QuadGraph;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

QuadGraph small_graph() {
    return QuadGraph::build({{0, NodeType::Entity, "hammerfest", "hammerfest"},
                             {1, NodeType::Document, "d0", "Hammerfest is a town in Finnmark county, Norway."},
                             {2, NodeType::Document, "d1", "Finnmark is the northernmost county of Norway."},
                             {3, NodeType::Document, "d2", "Oslo is the capital."},
                             {4, NodeType::Entity, "oslo", "oslo"},
                             {5, NodeType::Attribute, "", "cold"},
                             {6, NodeType::Community, "", "northern towns"}},
                            {}, {});
}

LlmConfig fast_config(const testing::StubLlm& stub) {
    LlmConfig c;
    c.endpoint = stub.endpoint();
    c.backoff_s = 0.01;
    c.timeout_s = 5;
    return c;
}

}  // namespace

TEST_CASE("topk_per_type") {
    const auto g = small_graph();
    SUBCASE("ties go to the lower id") {
        const std::vector<double> s{0.5, 0.9, 0.9, 0.1, 0.2, 0.3, 0.4};
        const auto r = topk_per_type(s, g, 2);
        CHECK(r.of(NodeType::Document) == std::vector<ScoredNode>{{1, 0.9}, {2, 0.9}});
        CHECK(r.of(NodeType::Entity) == std::vector<ScoredNode>{{0, 0.5}, {4, 0.2}});
        CHECK(r.of(NodeType::Attribute).size() == 1);
        CHECK(r.of(NodeType::Community).size() == 1);
    }
    SUBCASE("saturation and errors") {
        const std::vector<double> s{0.5, 0.1, 0.2, 0.3, 0.6, 0.3, 0.4};
        const auto r = topk_per_type(s, g, 50);
        CHECK(r.of(NodeType::Document) == std::vector<ScoredNode>{{3, 0.3}, {2, 0.2}, {1, 0.1}});
        CHECK_THROWS_AS(topk_per_type(s, g, 0), ReasonError);
        CHECK_THROWS_AS(topk_per_type(std::vector<double>{0.1}, g, 1), ReasonError);
    }
    SUBCASE("brute-force sort oracle") {
        std::mt19937_64 rng(1);
        const auto big = testing::random_graph(300, 10, 1, rng);
        std::uniform_int_distribution<int> level(0, 20);  // coarse values force ties
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> s(big.node_count());
            for (auto& x : s) x = level(rng) / 21.0 + 0.01;
            const std::size_t k = 1 + trial % 12;
            const auto r = topk_per_type(s, big, k);
            for (auto t : graph::kNodeTypes) {
                std::vector<std::pair<double, long>> all;
                for (const auto& n : big.nodes())
                    if (n.type == t) all.push_back({-s[n.id], static_cast<long>(n.id)});
                std::sort(all.begin(), all.end());
                const auto& got = r.of(t);
                REQUIRE(got.size() == std::min(k, all.size()));
                for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].id == static_cast<NodeId>(all[i].second));
            }
        }
    }
}

TEST_CASE("build_prompt") {
    const auto g = small_graph();
    RetrievalResult r;
    r.by_type[static_cast<std::size_t>(NodeType::Document)] = {{1, 0.9}, {2, 0.8}};
    r.by_type[static_cast<std::size_t>(NodeType::Entity)] = {{0, 0.7}};
    r.by_type[static_cast<std::size_t>(NodeType::Attribute)] = {{5, 0.6}};
    const auto b = build_prompt("Which county is Hammerfest in?", r, g);
    CHECK(b.text == slurp(QUADGFM_GOLDEN_DIR "/prompt.txt"));
    CHECK(b.documents == std::vector<std::string>{"Hammerfest is a town in Finnmark county, Norway.",
                                                  "Finnmark is the northernmost county of Norway."});
    CHECK(b.entities == std::vector<std::string>{"hammerfest"});
    CHECK(b.text.find("cold") == std::string::npos);

    const auto empty = build_prompt("q?", RetrievalResult{}, g);
    CHECK(empty.text == std::string(kPromptPreamble) + "\n\n### Document:\n\n### Entity:\n\n### Question:\nq?\nThought: ");

    auto swapped = r;
    std::swap(swapped.by_type[2][0], swapped.by_type[2][1]);
    const auto b2 = build_prompt("Which county is Hammerfest in?", swapped, g);
    CHECK(b2.text != b.text);
    CHECK(b2.text.find("Finnmark is the") < b2.text.find("Hammerfest is a town"));

    const auto extra = build_prompt("q?", r, g, {true});
    CHECK(extra.text.find("### Entity:\nhammerfest\n\n### Attribute:\ncold\n\n### Community:\n\n### Question:") !=
          std::string::npos);
}

TEST_CASE("parse_answer") {
    CHECK(parse_answer("Thought: it is up north. Answer: Finnmark county").answer == "Finnmark county");
    CHECK(parse_answer("Thought: x Answer: y").parsed);
    CHECK(parse_answer("Answer: a Answer: b").answer == "b");
    CHECK(parse_answer("answer: lower case\n").answer == "answer: lower case");
    const auto none = parse_answer("  no marker here \n");
    CHECK(none.answer == "no marker here");
    CHECK_FALSE(none.parsed);
    CHECK(parse_answer("Answer:\n\t  spaced  \n").answer == "spaced");
}

TEST_CASE("answer scoring") {
    const std::vector<std::string> gold{"Finnmark county"};
    auto s = score_answer("Finnmark county,", gold);
    CHECK(s.em == 1.0);
    CHECK(s.f1 == 1.0);
    s = score_answer("the Finnmark", gold);
    CHECK(s.em == 0.0);
    CHECK(s.f1 == doctest::Approx(2.0 * 1 * 0.5 / 1.5));
    s = score_answer("Oslo", gold);
    CHECK(s.em == 0.0);
    CHECK(s.f1 == 0.0);
    const std::vector<std::string> two{"Oslo", "Finnmark county"};
    CHECK(score_answer("finnmark COUNTY", two).em == 1.0);
    CHECK(normalize_answer("  The  Quick, brown fox!  ") == "quick brown fox");
    CHECK(normalize_answer("An apple a day") == "apple day");
    CHECK_THROWS_AS(score_answer("x", std::vector<std::string>{}), ReasonError);

    // Normalizing first changes nothing.
    std::mt19937_64 rng(3);
    const std::vector<std::string> words{"The", "a", "Oslo", "oslo,", "county", "AN", "north.", "x-y", "!"};
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1), len(0, 5);
    for (int trial = 0; trial < 300; ++trial) {
        auto sentence = [&] {
            std::string out;
            for (std::size_t i = len(rng); i > 0; --i) out += words[pick(rng)] + " ";
            return out;
        };
        const auto p = sentence();
        const std::vector<std::string> gs{sentence() + "county"};
        const std::vector<std::string> ng{normalize_answer(gs[0])};
        const auto raw = score_answer(p, gs), norm = score_answer(normalize_answer(p), ng);
        CHECK(raw.em == norm.em);
        CHECK(raw.f1 == norm.f1);
    }
}

TEST_CASE("call_llm against a local stub") {
    SUBCASE("echo") {
        testing::StubLlm stub([](const std::string& prompt, int) {
            return testing::StubReply{200, "Thought: x Answer: " + prompt.substr(0, 5)};
        });
        auto c = fast_config(stub);
        c.model = "tiny";
        ::setenv("QUADGFM_TEST_KEY", "sekrit", 1);
        c.api_key_env = "QUADGFM_TEST_KEY";
        CHECK(call_llm("hello world", c) == "Thought: x Answer: hello");
        const auto req = stub.requests().at(0);
        CHECK(req.at("model") == "tiny");
        CHECK(req.at("temperature") == 0.0);
        CHECK(req.at("messages").size() == 1);
        CHECK(req.at("messages")[0].at("role") == "user");
        CHECK(req.at("messages")[0].at("content") == "hello world");
        CHECK(stub.auth_headers().at(0) == "Bearer sekrit");
        ::unsetenv("QUADGFM_TEST_KEY");
    }
    SUBCASE("transient failures are retried") {
        testing::StubLlm stub([](const std::string&, int call) {
            return call < 2 ? testing::StubReply{503, ""} : testing::StubReply{200, "Answer: ok"};
        });
        CHECK(call_llm("p", fast_config(stub)) == "Answer: ok");
        CHECK(stub.calls() == 3);
    }
    SUBCASE("three 500s surface an error") {
        testing::StubLlm stub([](const std::string&, int) { return testing::StubReply{500, ""}; });
        CHECK_THROWS_WITH_AS(call_llm("p", fast_config(stub)), doctest::Contains("HTTP 500"), LlmError);
        CHECK(stub.calls() == 3);
    }
    SUBCASE("client errors are not retried") {
        testing::StubLlm stub([](const std::string&, int) { return testing::StubReply{401, ""}; });
        CHECK_THROWS_AS(call_llm("p", fast_config(stub)), LlmError);
        CHECK(stub.calls() == 1);
    }
    SUBCASE("timeout") {
        testing::StubLlm stub([](const std::string&, int) {
            return testing::StubReply{200, "late", std::chrono::milliseconds(600)};
        });
        auto c = fast_config(stub);
        c.timeout_s = 0.15;
        c.max_attempts = 1;
        CHECK_THROWS_AS(call_llm("p", c), LlmTimeout);
    }
    SUBCASE("malformed body") {
        testing::StubLlm stub([](const std::string&, int) { return testing::StubReply{200, "", {}, "{\"nope\": 1}"}; });
        CHECK_THROWS_WITH_AS(call_llm("p", fast_config(stub)), doctest::Contains("no choices"), LlmError);
    }
    SUBCASE("bad endpoint") {
        LlmConfig c;
        c.endpoint = "ftp://example";
        CHECK_THROWS_AS(call_llm("p", c), LlmError);
    }
}

TEST_CASE("answer_all bounds concurrency and keeps order") {
    testing::StubLlm stub([](const std::string& prompt, int) {
        return testing::StubReply{200, "Thought: t Answer: " + prompt, std::chrono::milliseconds(40)};
    });
    auto c = fast_config(stub);
    c.max_in_flight = 3;
    std::vector<PromptJob> jobs;
    for (int i = 0; i < 10; ++i) jobs.push_back({"q" + std::to_string(i), "p" + std::to_string(i)});
    const auto out = answer_all(jobs, c);
    REQUIRE(out.size() == 10);
    for (int i = 0; i < 10; ++i) {
        CHECK(out[i].query_id == "q" + std::to_string(i));
        CHECK(out[i].answer == "p" + std::to_string(i));
        CHECK(out[i].parsed);
        CHECK(out[i].latency_s > 0);
    }
    CHECK(stub.peak_in_flight() <= 3);
    CHECK(stub.peak_in_flight() >= 2);
}

TEST_CASE("evaluation") {
    const auto g = small_graph();
    testing::TempDir dir;
    const auto path = dir.write("eval.jsonl",
                                R"({"query_id":"a","query":"q1","answers":["Finnmark county"],"supporting_docs":[1,"d1"]})"
                                "\n"
                                R"({"query_id":"b","query":"q2","answers":["Oslo"],"supporting_docs":["d2"],"evidence":[4]})"
                                "\n");
    const auto ds = load_dataset(path, g);
    REQUIRE(ds.size() == 2);
    CHECK(ds[0].supporting_docs == std::vector<NodeId>{1, 2});
    CHECK(ds[1].evidence == std::vector<NodeId>{4});

    RetrievalResult ra, rb;
    ra.query_id = "a";
    ra.by_type[2] = {{3, 0.9}, {1, 0.8}, {2, 0.05}};
    rb.query_id = "b";
    rb.by_type[2] = {{3, 0.9}};
    rb.by_type[1] = {{4, 0.4}};
    const std::vector<RetrievalResult> rs{ra, rb};
    const std::vector<AnswerRecord> ans{{"a", "", "finnmark county", true, 0}, {"b", "", "bergen", true, 0}};
    const std::vector<std::size_t> ks{2, 5};
    const auto m = evaluate_run(ds, rs, ans, ks);
    CHECK(m.recall_at(2) == doctest::Approx((0.5 + 1.0) / 2));
    CHECK(m.recall_at(5) == doctest::Approx(1.0));
    CHECK(m.em == doctest::Approx(0.5));
    CHECK(m.f1 == doctest::Approx(0.5));
    CHECK(m.evidence_recall == 1.0);
    CHECK(m.queries == 2);
    CHECK_THROWS_AS(m.recall_at(3), ReasonError);

    auto wrong = rs;
    std::swap(wrong[0], wrong[1]);
    CHECK_THROWS_AS(evaluate_run(ds, wrong, ans, ks), ReasonError);
    CHECK_THROWS_AS(evaluate_run(ds, rs, std::vector<AnswerRecord>{ans[0]}, ks), ReasonError);
    CHECK(evaluate_run(ds, rs, {}, ks).em == 0.0);

    // R@2 <= R@5 on random retrievals.
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<RetrievalResult> rr(2);
        for (std::size_t i = 0; i < 2; ++i) {
            rr[i].query_id = ds[i].query_id;
            std::vector<NodeId> docs{1, 2, 3};
            std::shuffle(docs.begin(), docs.end(), rng);
            for (auto d : docs) rr[i].by_type[2].push_back({d, 0.5});
        }
        const auto mm = evaluate_run(ds, rr, {}, ks);
        CHECK(mm.recall_at(2) <= mm.recall_at(5));
    }

    const auto bad = dir.write("bad.jsonl", R"({"query_id":"a","query":"q","answers":["x"],"supporting_docs":[0]})"
                                            "\n");
    CHECK_THROWS(load_dataset(bad, g));  // node 0 is an entity
    const auto unknown = dir.write("unk.jsonl", R"({"query_id":"a","query":"q","answers":["x"],"supporting_docs":["zz"]})"
                                                "\n");
    CHECK_THROWS(load_dataset(unknown, g));
}
