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

#include "retain/provider.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "retain/text.hpp"

namespace retain::provider {

using json = nlohmann::json;

InFlightLimiter::InFlightLimiter(int limit) : limit_(limit) {
    if (limit_ < 1) throw ValidationError("in-flight limit must be >= 1");
}

void InFlightLimiter::acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [this] { return in_flight_ < limit_; });
    ++in_flight_;
    peak_ = std::max(peak_, in_flight_);
}

void InFlightLimiter::release() {
    {
        std::lock_guard lock(mu_);
        --in_flight_;
    }
    cv_.notify_one();
}

int InFlightLimiter::peak() const {
    std::lock_guard lock(mu_);
    return peak_;
}

namespace {

class SlotGuard {
public:
    explicit SlotGuard(InFlightLimiter& limiter) : limiter_(limiter) { limiter_.acquire(); }
    ~SlotGuard() { limiter_.release(); }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

private:
    InFlightLimiter& limiter_;
};

} // namespace

Provider::Provider(std::string id, int max_in_flight) : id_(std::move(id)), limiter_(max_in_flight) {}

CompletionResult Provider::complete(const CompletionRequest& req) {
    if (req.temperature < 0.0) throw ValidationError("temperature must be >= 0");
    if (req.max_tokens < 1) throw ValidationError("max_tokens must be positive");
    SlotGuard slot(limiter_);
    return do_complete(req);
}

std::vector<double> Provider::embed(std::string_view text) {
    SlotGuard slot(limiter_);
    return do_embed(text);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ValidationError("cosine of vectors with different dimensions");
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------

bool ScriptRule::is_catch_all() const {
    return kind == MatchKind::Any || (kind == MatchKind::Substring && pattern.empty());
}

ScriptedProvider::ScriptedProvider(std::string id, std::vector<ScriptRule> rules,
                                   std::size_t embedding_dimension, int max_in_flight)
    : Provider(std::move(id), max_in_flight), rules_(std::move(rules)), dimension_(embedding_dimension) {
    if (dimension_ == 0) throw ValidationError("embedding dimension must be positive");
    if (std::none_of(rules_.begin(), rules_.end(), [](const ScriptRule& r) { return r.is_catch_all(); })) {
        throw ValidationError("scripted provider '" + this->id() + "' needs a catch-all rule");
    }
    std::stable_sort(rules_.begin(), rules_.end(),
                     [](const ScriptRule& a, const ScriptRule& b) { return a.order < b.order; });
    compiled_.reserve(rules_.size());
    for (const auto& r : rules_) {
        if (r.kind != MatchKind::Regex) {
            compiled_.emplace_back(std::nullopt);
            continue;
        }
        try {
            compiled_.emplace_back(std::regex(r.pattern, std::regex::ECMAScript));
        } catch (const std::regex_error& e) {
            throw ValidationError("bad regex '" + r.pattern + "': " + e.what());
        }
    }
}

CompletionResult ScriptedProvider::do_complete(const CompletionRequest& req) {
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        const auto& rule = rules_[i];
        bool hit = false;
        switch (rule.kind) {
        case MatchKind::Any: hit = true; break;
        case MatchKind::Exact: hit = req.prompt == rule.pattern; break;
        case MatchKind::Substring: hit = req.prompt.find(rule.pattern) != std::string::npos; break;
        case MatchKind::Regex: hit = std::regex_search(req.prompt, *compiled_[i]); break;
        }
        if (!hit) continue;
        if (rule.failure) {
            switch (*rule.failure) {
            case ScriptedFailure::Timeout: throw Timeout("scripted timeout from '" + id() + "'");
            case ScriptedFailure::RateLimited: throw RateLimited("scripted rate limit from '" + id() + "'");
            case ScriptedFailure::Transport: throw TransportError("scripted transport error from '" + id() + "'");
            case ScriptedFailure::Auth: throw AuthError("scripted auth error from '" + id() + "'");
            }
        }
        return CompletionResult{rule.response, 0, 1};
    }
    // Unreachable while a catch-all exists.
    throw ValidationError("no scripted rule matched");
}

std::size_t ScriptedProvider::bucket_of(std::string_view token) const {
    return static_cast<std::size_t>(text::fnv1a64(token) % dimension_);
}

std::vector<double> ScriptedProvider::do_embed(std::string_view input) {
    std::vector<double> v(dimension_, 0.0);
    for (const auto& tok : text::tokenize(input)) v[bucket_of(tok)] += 1.0;
    return v;
}

namespace {

MatchKind parse_match_kind(const std::string& s) {
    if (s == "exact") return MatchKind::Exact;
    if (s == "substring") return MatchKind::Substring;
    if (s == "regex") return MatchKind::Regex;
    if (s == "any") return MatchKind::Any;
    throw ValidationError("unknown match kind '" + s + "'");
}

ScriptedFailure parse_failure(const std::string& s) {
    if (s == "timeout") return ScriptedFailure::Timeout;
    if (s == "rate_limited") return ScriptedFailure::RateLimited;
    if (s == "transport") return ScriptedFailure::Transport;
    if (s == "auth") return ScriptedFailure::Auth;
    throw ValidationError("unknown scripted error '" + s + "'");
}

} // namespace

std::shared_ptr<ScriptedProvider> parse_script(const std::string& id, std::string_view json_text, int max_in_flight) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw SyntaxError(std::string("malformed script: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("rules") || !doc["rules"].is_array()) {
        throw ValidationError("script must be an object with a 'rules' list");
    }
    std::vector<ScriptRule> rules;
    int position = 0;
    try {
        for (const auto& r : doc["rules"]) {
            ScriptRule rule;
            rule.kind = parse_match_kind(r.value("match", "any"));
            rule.pattern = r.value("pattern", "");
            rule.response = r.value("response", "");
            if (r.contains("error")) rule.failure = parse_failure(r["error"].get<std::string>());
            rule.order = r.value("order", position);
            rules.push_back(std::move(rule));
            ++position;
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid script rule: ") + e.what());
    }
    auto dim = doc.value("embedding_dim", static_cast<std::size_t>(ScriptedProvider::kDefaultDimension));
    return std::make_shared<ScriptedProvider>(id, std::move(rules), dim, max_in_flight);
}

std::shared_ptr<ScriptedProvider> load_script(const std::string& id, const std::filesystem::path& path,
                                              int max_in_flight) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound("script", path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_script(id, buf.str(), max_in_flight);
}

// ---------------------------------------------------------------------------

Sleeper real_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt) {
    double ms = static_cast<double>(policy.initial_backoff.count()) * std::pow(policy.multiplier, attempt - 1);
    ms = std::min(ms, static_cast<double>(policy.max_backoff.count()));
    return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

// ---------------------------------------------------------------------------

EnvLookup process_env() {
    return [](const std::string& name) -> std::optional<std::string> {
        const char* v = std::getenv(name.c_str());
        if (v == nullptr || *v == '\0') return std::nullopt;
        return std::string(v);
    };
}

void ProviderRegistry::add(std::shared_ptr<Provider> provider) {
    auto id = provider->id();
    if (!providers_.emplace(id, std::move(provider)).second) {
        throw ValidationError("provider '" + id + "' registered twice");
    }
}

void ProviderRegistry::assign_role(const std::string& role, std::shared_ptr<Provider> provider) {
    roles_[role] = std::move(provider);
}

bool ProviderRegistry::contains(std::string_view id) const { return providers_.find(id) != providers_.end(); }

bool ProviderRegistry::has_role(std::string_view role) const { return roles_.find(role) != roles_.end(); }

Provider& ProviderRegistry::get(std::string_view id) const {
    auto it = providers_.find(id);
    if (it == providers_.end()) {
        // Role providers are addressable by id too.
        for (const auto& [role, p] : roles_) {
            if (p->id() == id) return *p;
        }
        throw UnknownProvider("provider '" + std::string(id) + "' is not registered");
    }
    return *it->second;
}

Provider& ProviderRegistry::role(std::string_view role) const {
    auto it = roles_.find(role);
    if (it == roles_.end()) throw UnknownProvider("no provider configured for role '" + std::string(role) + "'");
    return *it->second;
}

CompletionResult ProviderRegistry::complete(const CompletionRequest& req) const {
    return get(req.provider_id).complete(req);
}

std::shared_ptr<Provider> make_provider(const config::ProviderSpec& spec, const EnvLookup& env) {
    if (spec.kind == config::ProviderKind::Scripted) {
        return load_script(spec.id, *spec.script, spec.max_in_flight);
    }
    ChatOptions opts;
    auto url = spec.base_url ? spec.base_url : default_base_url(spec.family());
    if (!url) throw ValidationError("chat provider '" + spec.id + "' needs a base_url");
    opts.base_url = *url;
    opts.model = spec.model();
    opts.api_key = env(spec.credentials_env);
    opts.temperature = spec.temperature;
    opts.max_in_flight = spec.max_in_flight;
    return std::make_shared<ChatProvider>(spec.id, std::move(opts));
}

ProviderRegistry build_registry(const config::EvalConfig& cfg, const EnvLookup& env) {
    ProviderRegistry reg;
    std::map<std::string, std::shared_ptr<Provider>> by_id;
    for (const auto& spec : cfg.providers) {
        auto p = make_provider(spec, env);
        by_id[spec.id] = p;
        reg.add(std::move(p));
    }
    for (const auto& [role, spec] : cfg.roles) {
        auto it = by_id.find(spec.id);
        // A role naming a grid provider by bare id shares that instance.
        if (it != by_id.end() && spec.kind == config::ProviderKind::Chat && !spec.base_url) {
            reg.assign_role(role, it->second);
        } else {
            auto p = make_provider(spec, env);
            by_id.emplace(spec.id, p);
            reg.assign_role(role, std::move(p));
        }
    }
    return reg;
}

} // namespace retain::provider
