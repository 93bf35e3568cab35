#pragma once

// Local chat-completions server for tests. The handler maps the prompt to a
// reply; it may also choose an HTTP status or a delay.

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace quadgfm::testing {

struct StubReply {
    StubReply(int status = 200, std::string content = {}, std::chrono::milliseconds delay = {},
              std::string raw_body = {})
        : status(status), content(std::move(content)), delay(delay), raw_body(std::move(raw_body)) {}

    int status;
    std::string content;
    std::chrono::milliseconds delay;
    std::string raw_body;  // sent verbatim when non-empty
};

class StubLlm {
public:
    using Handler = std::function<StubReply(const std::string& prompt, int call)>;

    explicit StubLlm(Handler handler) : handler_(std::move(handler)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const int call = calls_++;
            const int now = ++in_flight_;
            for (int seen = peak_.load(); now > seen && !peak_.compare_exchange_weak(seen, now);) {
            }
            const auto body = nlohmann::json::parse(req.body);
            {
                std::lock_guard lock(mu_);
                requests_.push_back(body);
                auth_.push_back(req.get_header_value("Authorization"));
            }
            const auto prompt = body.at("messages").at(0).at("content").get<std::string>();
            const auto reply = handler_(prompt, call);
            std::this_thread::sleep_for(reply.delay);
            res.status = reply.status;
            if (!reply.raw_body.empty()) {
                res.set_content(reply.raw_body, "application/json");
            } else {
                const nlohmann::json out = {
                    {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", reply.content}}}}}}};
                res.set_content(out.dump(), "application/json");
            }
            --in_flight_;
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubLlm() {
        server_.stop();
        thread_.join();
    }
    StubLlm(const StubLlm&) = delete;
    StubLlm& operator=(const StubLlm&) = delete;

    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
    int calls() const { return calls_; }
    int peak_in_flight() const { return peak_; }
    std::vector<nlohmann::json> requests() const {
        std::lock_guard lock(mu_);
        return requests_;
    }
    std::vector<std::string> auth_headers() const {
        std::lock_guard lock(mu_);
        return auth_;
    }

private:
    Handler handler_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> calls_{0}, in_flight_{0}, peak_{0};
    mutable std::mutex mu_;
    std::vector<nlohmann::json> requests_;
    std::vector<std::string> auth_;
};

}  // namespace quadgfm::testing
