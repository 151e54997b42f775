// Copyright 2026 The Retain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "retain/config.hpp"
#include "retain/errors.hpp"

namespace retain::provider {

struct CompletionRequest {
    std::string provider_id;
    std::string prompt;
    double temperature = 0.0;
    int max_tokens = 1024;
};

struct CompletionResult {
    std::string text;
    std::int64_t latency_ms = 0;
    int attempt_count = 1;
};

/// Counting semaphore with a runtime bound.
class InFlightLimiter {
public:
    explicit InFlightLimiter(int limit);

    void acquire();
    void release();
    int limit() const noexcept { return limit_; }
    int peak() const;

private:
    int limit_;
    int in_flight_ = 0;
    int peak_ = 0;
    mutable std::mutex mu_;
    std::condition_variable cv_;
};

/// A model endpoint. `complete` and `embed` are safe to call concurrently;
/// at most `max_in_flight()` calls execute at once.
class Provider {
public:
    Provider(std::string id, int max_in_flight);
    virtual ~Provider() = default;

    Provider(const Provider&) = delete;
    Provider& operator=(const Provider&) = delete;

    const std::string& id() const noexcept { return id_; }
    int max_in_flight() const noexcept { return limiter_.limit(); }
    int peak_in_flight() const { return limiter_.peak(); }

    /// Temperature used for eval-grid calls.
    virtual double grid_temperature() const { return 0.0; }

    CompletionResult complete(const CompletionRequest& req);
    std::vector<double> embed(std::string_view text);

protected:
    virtual CompletionResult do_complete(const CompletionRequest& req) = 0;
    virtual std::vector<double> do_embed(std::string_view text) = 0;

private:
    std::string id_;
    InFlightLimiter limiter_;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// Scripted provider

enum class MatchKind { Exact, Substring, Regex, Any };

enum class ScriptedFailure { Timeout, RateLimited, Transport, Auth };

struct ScriptRule {
    MatchKind kind = MatchKind::Any;
    std::string pattern;
    std::string response;
    /// When set the rule raises this failure instead of answering.
    std::optional<ScriptedFailure> failure;
    int order = 0;

    bool is_catch_all() const;
};

/// Deterministic offline provider. The first rule (ascending `order`,
/// declaration order on ties) whose matcher accepts the prompt answers.
/// Embeddings are hashed bags of tokens: each metric token adds 1.0 to
/// bucket `fnv1a64(token) % dimension`.
class ScriptedProvider final : public Provider {
public:
    static constexpr std::size_t kDefaultDimension = 64;

    ScriptedProvider(std::string id, std::vector<ScriptRule> rules,
                     std::size_t embedding_dimension = kDefaultDimension,
                     int max_in_flight = 8);

    std::size_t dimension() const noexcept { return dimension_; }
    const std::vector<ScriptRule>& rules() const noexcept { return rules_; }

    /// Bucket a single token hashes to.
    std::size_t bucket_of(std::string_view token) const;

protected:
    CompletionResult do_complete(const CompletionRequest& req) override;
    std::vector<double> do_embed(std::string_view text) override;

private:
    std::vector<ScriptRule> rules_;
    std::vector<std::optional<std::regex>> compiled_;
    std::size_t dimension_;
};

/// Reads a rule file: `{"rules": [{"match", "pattern", "response"|"error",
/// "order"}], "embedding_dim"}`.
std::shared_ptr<ScriptedProvider> load_script(const std::string& id, const std::filesystem::path& path,
                                              int max_in_flight = 8);
std::shared_ptr<ScriptedProvider> parse_script(const std::string& id, std::string_view json_text,
                                               int max_in_flight = 8);

// ---------------------------------------------------------------------------
// Retry

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{8000};
    /// Upper bound on wall time spent across attempts and backoff sleeps.
    std::chrono::milliseconds total_deadline{180000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

Sleeper real_sleeper();

/// Backoff before attempt `attempt + 1` (attempt counted from 1).
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt);

/// Runs `fn` until it succeeds, throws a non-transient error, or the policy
/// is exhausted. Transient: RateLimited, TransportError, Timeout.
/// `attempts` receives the number of calls made.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, const Sleeper& sleep, int& attempts, Fn&& fn) -> decltype(fn()) {
    auto start = std::chrono::steady_clock::now();
    attempts = 0;
    for (;;) {
        ++attempts;
        std::exception_ptr failure;
        try {
            return fn();
        } catch (const RateLimited&) {
            failure = std::current_exception();
        } catch (const Timeout&) {
            failure = std::current_exception();
        } catch (const TransportError&) {
            failure = std::current_exception();
        }
        if (attempts >= policy.max_attempts) std::rethrow_exception(failure);
        auto delay = backoff_delay(policy, attempts);
        auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
        if (elapsed + delay > policy.total_deadline) std::rethrow_exception(failure);
        sleep(delay);
    }
}

// ---------------------------------------------------------------------------
// Chat-completions provider

struct ChatOptions {
    std::string base_url;
    std::string model;
    std::optional<std::string> api_key;
    double temperature = 0.0;
    std::chrono::milliseconds request_timeout{60000};
    RetryPolicy retry;
    int max_in_flight = 8;
};

/// Talks the chat-completions JSON-over-HTTP protocol:
/// POST `{base_url}/chat/completions`, bearer-token auth.
class ChatProvider final : public Provider {
public:
    ChatProvider(std::string id, ChatOptions options, Sleeper sleeper = real_sleeper());

    double grid_temperature() const override { return options_.temperature; }

protected:
    CompletionResult do_complete(const CompletionRequest& req) override;
    std::vector<double> do_embed(std::string_view text) override;

private:
    std::string post_json(const std::string& path, const std::string& body);

    ChatOptions options_;
    Sleeper sleeper_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

/// Default base URL for well-known families, if any.
std::optional<std::string> default_base_url(std::string_view family);

// ---------------------------------------------------------------------------
// Registry

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

EnvLookup process_env();

class ProviderRegistry {
public:
    void add(std::shared_ptr<Provider> provider);
    void assign_role(const std::string& role, std::shared_ptr<Provider> provider);

    bool contains(std::string_view id) const;
    bool has_role(std::string_view role) const;

    /// Throws UnknownProvider.
    Provider& get(std::string_view id) const;
    Provider& role(std::string_view role) const;

    CompletionResult complete(const CompletionRequest& req) const;

private:
    std::map<std::string, std::shared_ptr<Provider>, std::less<>> providers_;
    std::map<std::string, std::shared_ptr<Provider>, std::less<>> roles_;
};

std::shared_ptr<Provider> make_provider(const config::ProviderSpec& spec, const EnvLookup& env = process_env());

/// Registers every grid provider and every role in `cfg`.
ProviderRegistry build_registry(const config::EvalConfig& cfg, const EnvLookup& env = process_env());

} // namespace retain::provider
