#pragma once

// HTTP client for a remote entailment service.
// Wire protocol: POST, content-type application/json,
// request {"premise": string, "hypothesis": string},
// response {"entailed": bool, "score": optional number}.
// Non-2xx responses are transient (retried with exponential backoff) except
// 4xx, which are fatal. Results are cached for the process lifetime.

#include <chrono>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "mirage/eval.hpp"

namespace mirage {

class RemoteOracle final : public EntailmentOracle {
public:
    RemoteOracle(std::string endpoint_url, double timeout_seconds = 10.0,
                 int retries = 3,
                 std::chrono::milliseconds initial_backoff =
                     std::chrono::milliseconds(100))
        : timeout_seconds_(timeout_seconds),
          retries_(retries),
          initial_backoff_(initial_backoff) {
        parse_url(endpoint_url);
    }

    bool judge(const std::string& premise,
               const std::string& hypothesis) override {
        const std::pair<std::string, std::string> key{premise, hypothesis};
        {
            std::lock_guard lock(mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }

        nlohmann::json req{{"premise", premise}, {"hypothesis", hypothesis}};
        const std::string body = req.dump();

        std::string last_error = "no attempt made";
        auto backoff = initial_backoff_;
        for (int attempt = 0; attempt <= retries_; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(backoff);
                backoff *= 2;
            }
            httplib::Client client(host_, port_);
            client.set_connection_timeout(
                std::chrono::duration<double>(timeout_seconds_));
            client.set_read_timeout(
                std::chrono::duration<double>(timeout_seconds_));
            auto res = client.Post(path_, body, "application/json");
            if (!res) {
                last_error = "connection failed";
                continue;
            }
            if (res->status >= 400 && res->status < 500) {
                throw EvalError("entailment service rejected request with " +
                                std::to_string(res->status));
            }
            if (res->status < 200 || res->status >= 300) {
                last_error = "status " + std::to_string(res->status);
                continue;
            }
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                throw EvalError(std::string("malformed oracle response: ") +
                                e.what());
            }
            if (!j.contains("entailed") || !j["entailed"].is_boolean()) {
                throw EvalError(
                    "oracle response lacks boolean \"entailed\" field");
            }
            const bool v = j["entailed"].get<bool>();
            std::lock_guard lock(mu_);
            cache_.emplace(key, v);
            return v;
        }
        throw OracleUnavailable("entailment service unavailable after " +
                                std::to_string(retries_ + 1) + " attempts (" +
                                last_error + ")");
    }

    std::string id() const override {
        return "remote:" + host_ + ":" + std::to_string(port_) + path_;
    }

private:
    void parse_url(const std::string& url) {
        std::string rest = url;
        const std::string scheme = "http://";
        if (rest.rfind(scheme, 0) == 0) {
            rest = rest.substr(scheme.size());
        } else if (rest.rfind("https://", 0) == 0) {
            throw EvalError("https oracle endpoints are not supported");
        }
        const std::size_t slash = rest.find('/');
        std::string hostport =
            slash == std::string::npos ? rest : rest.substr(0, slash);
        path_ = slash == std::string::npos ? "/" : rest.substr(slash);
        const std::size_t colon = hostport.find(':');
        if (colon == std::string::npos) {
            host_ = hostport;
            port_ = 80;
        } else {
            host_ = hostport.substr(0, colon);
            port_ = std::stoi(hostport.substr(colon + 1));
        }
        if (host_.empty()) {
            throw EvalError("invalid oracle endpoint URL: " + url);
        }
    }

    std::string host_, path_;
    int port_ = 80;
    double timeout_seconds_;
    int retries_;
    std::chrono::milliseconds initial_backoff_;
    std::mutex mu_;
    std::map<std::pair<std::string, std::string>, bool> cache_;
};

}  // namespace mirage
