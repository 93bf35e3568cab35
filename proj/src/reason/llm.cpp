#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <exception>
#include <regex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "quadgfm/reason.hpp"

namespace quadgfm::reason {

namespace {

struct Endpoint {
    std::string base;  // scheme://host[:port]
    std::string path;
};

Endpoint split_endpoint(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw LlmError("endpoint is not an http(s) URL: " + url);
    return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

void set_timeout(httplib::Client& cli, double seconds) {
    const auto us = std::chrono::microseconds(static_cast<std::int64_t>(seconds * 1e6));
    cli.set_connection_timeout(us);
    cli.set_read_timeout(us);
    cli.set_write_timeout(us);
}

std::string content_of(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw LlmError(std::string("malformed response body: ") + e.what());
    }
    const auto* choices = j.is_object() && j.contains("choices") ? &j.at("choices") : nullptr;
    if (!choices || !choices->is_array() || choices->empty()) throw LlmError("response has no choices");
    const auto& first = (*choices)[0];
    if (first.contains("message") && first.at("message").contains("content") &&
        first.at("message").at("content").is_string()) {
        return first.at("message").at("content").get<std::string>();
    }
    if (first.contains("text") && first.at("text").is_string()) return first.at("text").get<std::string>();
    throw LlmError("first choice carries no message content");
}

}  // namespace

std::string call_llm(const std::string& prompt, const LlmConfig& config) {
    if (config.max_attempts < 1) throw LlmError("max_attempts must be at least 1");
    const auto ep = split_endpoint(config.endpoint);
    httplib::Client cli(ep.base);
    if (!cli.is_valid()) throw LlmError("cannot use endpoint " + config.endpoint + " (https needs OpenSSL support)");
    set_timeout(cli, config.timeout_s);

    httplib::Headers headers;
    if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    const nlohmann::json body = {{"model", config.model},
                                 {"messages", {{{"role", "user"}, {"content", prompt}}}},
                                 {"temperature", config.temperature}};
    const std::string payload = body.dump();

    std::string last_error;
    bool timed_out = false;
    double backoff = config.backoff_s;
    for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
        const auto start = std::chrono::steady_clock::now();
        auto res = cli.Post(ep.path, headers, payload, "application/json");
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!res) {
            timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                        (res.error() == httplib::Error::Read && elapsed >= config.timeout_s * 0.99);
            last_error = timed_out ? "timed out after " + std::to_string(config.timeout_s) + " s"
                                   : "request failed: " + httplib::to_string(res.error());
        } else if (res->status >= 200 && res->status < 300) {
            return content_of(res->body);
        } else if (res->status == 429 || res->status >= 500) {
            timed_out = false;
            last_error = "HTTP " + std::to_string(res->status);
        } else {
            throw LlmError("HTTP " + std::to_string(res->status) + " from " + config.endpoint + ": " +
                           res->body.substr(0, 200));
        }
        if (attempt < config.max_attempts) {
            std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
            backoff *= 2;
        }
    }
    const std::string msg = config.endpoint + ": " + last_error + " (" + std::to_string(config.max_attempts) +
                            " attempts)";
    if (timed_out) throw LlmTimeout(msg);
    throw LlmError(msg);
}

ParsedAnswer parse_answer(std::string_view raw) {
    constexpr std::string_view marker = "Answer:";
    const auto trim = [](std::string_view s) {
        const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
        while (!s.empty() && ws(s.front())) s.remove_prefix(1);
        while (!s.empty() && ws(s.back())) s.remove_suffix(1);
        return std::string(s);
    };
    const auto pos = raw.rfind(marker);
    if (pos == std::string_view::npos) return {trim(raw), false};
    return {trim(raw.substr(pos + marker.size())), true};
}

std::vector<AnswerRecord> answer_all(std::span<const PromptJob> jobs, const LlmConfig& config) {
    std::vector<AnswerRecord> out(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                const auto start = std::chrono::steady_clock::now();
                auto raw = call_llm(jobs[i].prompt, config);
                auto& r = out[i];
                r.query_id = jobs[i].query_id;
                r.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                auto parsed = parse_answer(raw);
                r.answer = std::move(parsed.answer);
                r.parsed = parsed.parsed;
                r.raw = std::move(raw);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::min(std::max<std::size_t>(config.max_in_flight, 1), jobs.size());
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    pool.clear();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace quadgfm::reason
