#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "ape/util.hpp"

namespace ape {

// ---------------------------------------------------------------------------
// Profiles and wire types
// ---------------------------------------------------------------------------

enum class BackendRole { judge, support };

inline std::string to_string(BackendRole r) {
    return r == BackendRole::judge ? "judge" : "support";
}

struct BackendProfile {
    BackendRole role = BackendRole::judge;
    std::string endpoint;       // e.g. https://api.example.com/v1/chat/completions
    std::string model_name;
    double temperature = 0.6;
    int max_in_flight = 4;
    std::chrono::milliseconds request_timeout{30000};
    int max_transport_retries = 3;

    void validate() const {
        if (temperature < 0.0 || temperature > 2.0)
            throw ConfigError("temperature must be in [0, 2]");
        if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
        if (max_transport_retries < 0)
            throw ConfigError("max_transport_retries must be >= 0");
    }
};

enum class MessageRole { system, user, assistant };

inline std::string to_string(MessageRole r) {
    switch (r) {
        case MessageRole::system: return "system";
        case MessageRole::user: return "user";
        case MessageRole::assistant: return "assistant";
    }
    return "user";
}

struct ChatMessage {
    MessageRole role = MessageRole::user;
    std::string content;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    // Distinguishes repeated samples of the same prompt so they cache (and
    // script) independently.
    int sample_index = 0;

    void validate() const {
        if (sample_index < 0) throw DataError("sample_index must be >= 0");
        for (const auto& m : messages)
            if (m.role == MessageRole::user) return;
        throw DataError("chat request needs at least one user message");
    }

    /// Canonical text the scripted mock matches rules against.
    std::string matcher_text() const {
        std::string out;
        for (const auto& m : messages) {
            out += m.content;
            out += '\n';
        }
        out += "sample_index:" + std::to_string(sample_index);
        return out;
    }
};

enum class FinishState { complete, truncated, error };

inline std::string to_string(FinishState f) {
    switch (f) {
        case FinishState::complete: return "complete";
        case FinishState::truncated: return "truncated";
        case FinishState::error: return "error";
    }
    return "error";
}

struct ChatResponse {
    std::string content;
    FinishState finish_state = FinishState::complete;
    std::chrono::milliseconds latency{0};
    bool cached = false;
};

/// Stable content hash over everything that determines a completion:
/// endpoint, model, temperature, messages, and sample index.
inline std::string cache_key(const BackendProfile& profile, const ChatRequest& request) {
    ContentHash h;
    h.feed(profile.endpoint).feed(profile.model_name).feed(profile.temperature);
    for (const auto& m : request.messages) {
        h.feed(to_string(m.role)).feed(m.content);
    }
    h.feed(static_cast<std::int64_t>(request.sample_index));
    return h.hex();
}

// ---------------------------------------------------------------------------
// Client interface. complete() is safe for concurrent use; an admission gate
// keeps at most max_in_flight requests outstanding per client.
// ---------------------------------------------------------------------------

class ChatClient {
public:
    explicit ChatClient(BackendProfile profile)
        : profile_(std::move(profile)),
          gate_(static_cast<std::size_t>(std::max(1, profile_.max_in_flight))) {
        profile_.validate();
    }
    virtual ~ChatClient() = default;

    const BackendProfile& profile() const { return profile_; }

    ChatResponse complete(const ChatRequest& request) {
        request.validate();
        SemaphoreGuard guard(gate_);
        auto start = std::chrono::steady_clock::now();
        ChatResponse resp = do_complete(request);
        resp.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        return resp;
    }

private:
    virtual ChatResponse do_complete(const ChatRequest& request) = 0;

    BackendProfile profile_;
    Semaphore gate_;
};

// ---------------------------------------------------------------------------
// Scripted mock: ordered substring/regex rules over the rendered prompt,
// first match wins. Fully deterministic; logs every call.
// ---------------------------------------------------------------------------

struct MockRule {
    std::string match;
    std::string response;
    bool is_regex = false;
    int latency_ms = 0;  // injected delay, for concurrency tests
};

struct MockScript {
    std::vector<MockRule> rules;
    std::string default_response;

    static MockScript from_json(const json& j) {
        MockScript s;
        s.default_response = j.value("default_response", "");
        for (const auto& r : j.value("rules", json::array())) {
            MockRule rule;
            rule.match = r.at("match").get<std::string>();
            rule.response = r.at("response").get<std::string>();
            rule.is_regex = r.value("regex", false);
            rule.latency_ms = r.value("latency_ms", 0);
            s.rules.push_back(std::move(rule));
        }
        return s;
    }

    static MockScript load(const fs::path& path) {
        json j = json::parse(read_file(path), nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw ConfigError("mock script is not a JSON object: " + path.string());
        return from_json(j);
    }
};

class ScriptedMockClient : public ChatClient {
public:
    ScriptedMockClient(BackendProfile profile, MockScript script)
        : ChatClient(std::move(profile)), script_(std::move(script)) {
        for (const auto& r : script_.rules) {
            compiled_.emplace_back(r.is_regex ? std::optional<std::regex>(std::regex(r.match))
                                              : std::nullopt);
        }
    }

    std::size_t call_count() const {
        std::lock_guard lock(mu_);
        return call_log_.size();
    }

    /// Matcher texts of every request, in issue order.
    std::vector<std::string> call_log() const {
        std::lock_guard lock(mu_);
        return call_log_;
    }

    std::size_t calls_matching(const std::string& needle) const {
        std::lock_guard lock(mu_);
        std::size_t n = 0;
        for (const auto& c : call_log_)
            if (c.find(needle) != std::string::npos) ++n;
        return n;
    }

    /// Highest number of simultaneously outstanding requests observed.
    std::size_t max_observed_in_flight() const { return high_water_.load(); }

private:
    ChatResponse do_complete(const ChatRequest& request) override {
        std::string text = request.matcher_text();
        {
            std::lock_guard lock(mu_);
            call_log_.push_back(text);
        }
        std::size_t now = ++in_flight_;
        std::size_t seen = high_water_.load();
        while (now > seen && !high_water_.compare_exchange_weak(seen, now)) {
        }

        const MockRule* hit = nullptr;
        for (std::size_t i = 0; i < script_.rules.size(); ++i) {
            const auto& rule = script_.rules[i];
            bool matched = compiled_[i] ? std::regex_search(text, *compiled_[i])
                                        : text.find(rule.match) != std::string::npos;
            if (matched) {
                hit = &rule;
                break;
            }
        }
        if (hit && hit->latency_ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(hit->latency_ms));

        --in_flight_;
        ChatResponse resp;
        resp.content = hit ? hit->response : script_.default_response;
        resp.finish_state = resp.content.empty() ? FinishState::error : FinishState::complete;
        return resp;
    }

    MockScript script_;
    std::vector<std::optional<std::regex>> compiled_;
    mutable std::mutex mu_;
    std::vector<std::string> call_log_;
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> high_water_{0};
};

// ---------------------------------------------------------------------------
// Disk cache wrapper: one file per cache_key holding a metadata header line
// plus the verbatim completion bytes.
// ---------------------------------------------------------------------------

class CachedClient : public ChatClient {
public:
    CachedClient(std::unique_ptr<ChatClient> inner, fs::path cache_dir)
        : ChatClient(inner->profile()), inner_(std::move(inner)), dir_(std::move(cache_dir)) {
        fs::create_directories(dir_);
    }

private:
    ChatResponse do_complete(const ChatRequest& request) override {
        fs::path file = dir_ / cache_key(profile(), request);
        if (fs::exists(file)) {
            std::string blob = read_file(file);
            auto nl = blob.find('\n');
            if (nl != std::string::npos) {
                ChatResponse resp;
                resp.content = blob.substr(nl + 1);
                resp.finish_state = FinishState::complete;
                resp.cached = true;
                return resp;
            }
            log_warn("discarding corrupt cache entry " + file.string());
        }
        ChatResponse resp = inner_->complete(request);
        if (resp.finish_state == FinishState::complete) {
            json header{{"endpoint", profile().endpoint},
                        {"model", profile().model_name},
                        {"temperature", profile().temperature},
                        {"sample_index", request.sample_index},
                        {"finish_state", to_string(resp.finish_state)}};
            atomic_write_file(file, header.dump() + "\n" + resp.content);
        }
        return resp;
    }

    std::unique_ptr<ChatClient> inner_;
    fs::path dir_;
};

// ---------------------------------------------------------------------------
// Live OpenAI-compatible client (declared here, defined in http_client.hpp
// to keep httplib out of translation units that never talk to the network).
// ---------------------------------------------------------------------------

class HttpChatClient : public ChatClient {
public:
    explicit HttpChatClient(BackendProfile profile);

    /// Base delay of the exponential backoff between transport retries.
    void set_retry_base_delay(std::chrono::milliseconds d) { retry_base_delay_ = d; }

private:
    ChatResponse do_complete(const ChatRequest& request) override;

    std::string base_url_;
    std::string path_;
    std::chrono::milliseconds retry_base_delay_{250};
};

}  // namespace ape
