#pragma once

#include <httplib.h>

#include "ape/backend.hpp"

namespace ape {

inline HttpChatClient::HttpChatClient(BackendProfile profile) : ChatClient(std::move(profile)) {
    const std::string& ep = this->profile().endpoint;
    auto scheme_end = ep.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("endpoint must be an http(s) URL: " + ep);
    auto path_start = ep.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        base_url_ = ep;
        path_ = "/v1/chat/completions";
    } else {
        base_url_ = ep.substr(0, path_start);
        path_ = ep.substr(path_start);
    }
}

inline ChatResponse HttpChatClient::do_complete(const ChatRequest& request) {
    json body;
    body["model"] = profile().model_name;
    body["temperature"] = profile().temperature;
    body["messages"] = json::array();
    for (const auto& m : request.messages) {
        body["messages"].push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }

    httplib::Headers headers{{"Content-Type", "application/json"}};
    if (const char* key = std::getenv("APE_API_KEY")) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    std::string last_error;
    int attempts = profile().max_transport_retries + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(retry_base_delay_ * (1 << std::min(attempt - 1, 4)));
        }
        httplib::Client client(base_url_);
        auto timeout = std::chrono::duration_cast<std::chrono::seconds>(profile().request_timeout);
        client.set_connection_timeout(timeout.count(), 0);
        client.set_read_timeout(timeout.count(), 0);
        client.set_write_timeout(timeout.count(), 0);

        auto result = client.Post(path_, headers, body.dump(), "application/json");
        if (!result) {
            last_error = "transport failure: " + httplib::to_string(result.error());
            continue;  // retryable
        }
        if (result->status == 429 || result->status >= 500) {
            last_error = "server status " + std::to_string(result->status);
            continue;  // retryable
        }
        if (result->status < 200 || result->status >= 300) {
            // Auth / bad-request class errors are never retried.
            std::string excerpt = result->body.substr(0, 200);
            throw BackendError("protocol error: status " + std::to_string(result->status) +
                               ", body: " + excerpt);
        }

        json reply = json::parse(result->body, nullptr, false);
        if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty()) {
            throw BackendError("malformed completion body: " + result->body.substr(0, 200));
        }
        const json& choice = reply["choices"][0];
        ChatResponse resp;
        resp.content = choice.at("message").at("content").get<std::string>();
        std::string finish = choice.value("finish_reason", "stop");
        resp.finish_state = (finish == "length") ? FinishState::truncated : FinishState::complete;
        return resp;
    }
    throw BackendError("request failed after " + std::to_string(attempts) +
                       " attempts: " + last_error);
}

}  // namespace ape
