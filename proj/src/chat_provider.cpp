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

#include <httplib.h>

#include <chrono>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "retain/provider.hpp"

namespace retain::provider {

using json = nlohmann::json;

namespace {

void split_base_url(const std::string& base_url, std::string& scheme_host_port, std::string& path_prefix) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) throw ValidationError("base_url '" + base_url + "' lacks a scheme");
    auto path_start = base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        scheme_host_port = base_url;
        path_prefix.clear();
    } else {
        scheme_host_port = base_url.substr(0, path_start);
        path_prefix = base_url.substr(path_start);
    }
    while (!path_prefix.empty() && path_prefix.back() == '/') path_prefix.pop_back();
}

} // namespace

std::optional<std::string> default_base_url(std::string_view family) {
    if (family == "openai") return std::string("https://api.openai.com/v1");
    return std::nullopt;
}

ChatProvider::ChatProvider(std::string id, ChatOptions options, Sleeper sleeper)
    : Provider(std::move(id), options.max_in_flight), options_(std::move(options)), sleeper_(std::move(sleeper)) {
    split_base_url(options_.base_url, scheme_host_port_, path_prefix_);
}

std::string ChatProvider::post_json(const std::string& path, const std::string& body) {
    if (!options_.api_key) throw AuthError("no API key available for provider '" + id() + "'");

    httplib::Client client(scheme_host_port_);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.request_timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.request_timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers{{"Authorization", "Bearer " + *options_.api_key}};
    auto res = client.Post(path_prefix_ + path, headers, body, "application/json");
    if (!res) {
        auto err = res.error();
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
            throw Timeout("request to '" + id() + "' timed out (" + httplib::to_string(err) + ")");
        }
        throw TransportError("request to '" + id() + "' failed: " + httplib::to_string(err));
    }
    const int status = res->status;
    if (status == 401 || status == 403) throw AuthError("provider '" + id() + "' rejected credentials");
    if (status == 429) throw RateLimited("provider '" + id() + "' is rate limiting");
    if (status == 408) throw Timeout("provider '" + id() + "' returned 408");
    if (status >= 500) throw TransportError("provider '" + id() + "' returned " + std::to_string(status));
    if (status < 200 || status >= 300) {
        throw RequestRejected("provider '" + id() + "' returned " + std::to_string(status) + ": " + res->body);
    }
    return res->body;
}

CompletionResult ChatProvider::do_complete(const CompletionRequest& req) {
    json body = {
        {"model", options_.model},
        {"messages", json::array({{{"role", "user"}, {"content", req.prompt}}})},
        {"temperature", req.temperature},
        {"max_tokens", req.max_tokens},
    };
    auto payload = body.dump();
    auto start = std::chrono::steady_clock::now();
    int attempts = 0;
    auto raw = with_retry(options_.retry, sleeper_, attempts, [&] { return post_json("/chat/completions", payload); });
    auto elapsed = std::chrono::steady_clock::now() - start;

    CompletionResult result;
    result.attempt_count = attempts;
    result.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
    try {
        auto doc = json::parse(raw);
        const auto& content = doc.at("choices").at(0).at("message").at("content");
        result.text = content.is_null() ? std::string() : content.get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError("unexpected completion payload from '" + id() + "': " + e.what());
    }
    if (attempts > 1) spdlog::debug("provider {} succeeded after {} attempts", id(), attempts);
    return result;
}

std::vector<double> ChatProvider::do_embed(std::string_view text) {
    json body = {{"model", options_.model}, {"input", std::string(text)}};
    auto payload = body.dump();
    int attempts = 0;
    auto raw = with_retry(options_.retry, sleeper_, attempts, [&] { return post_json("/embeddings", payload); });
    try {
        auto doc = json::parse(raw);
        return doc.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw Unsupported("provider '" + id() + "' returned no embedding: " + e.what());
    }
}

} // namespace retain::provider
