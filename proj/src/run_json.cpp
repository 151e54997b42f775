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

#include <fmt/format.h>

#include "retain/errors.hpp"
#include "retain/runner.hpp"
#include "retain/text.hpp"

namespace retain::runner {

using json = nlohmann::json;

namespace {

json provider_to_json(const config::ProviderSpec& p) {
    json j = {
        {"id", p.id},
        {"kind", p.kind == config::ProviderKind::Chat ? "chat" : "scripted"},
        {"credentials_env", p.credentials_env},
        {"temperature", p.temperature},
        {"max_in_flight", p.max_in_flight},
    };
    if (p.base_url) j["base_url"] = *p.base_url;
    if (p.script) j["script"] = *p.script;
    return j;
}

config::ProviderSpec provider_from_json(const json& j) {
    config::ProviderSpec p;
    p.id = j.at("id").get<std::string>();
    p.kind = j.at("kind").get<std::string>() == "scripted" ? config::ProviderKind::Scripted
                                                            : config::ProviderKind::Chat;
    p.credentials_env = j.at("credentials_env").get<std::string>();
    p.temperature = j.at("temperature").get<double>();
    p.max_in_flight = j.at("max_in_flight").get<int>();
    if (j.contains("base_url")) p.base_url = j["base_url"].get<std::string>();
    if (j.contains("script")) p.script = j["script"].get<std::string>();
    return p;
}

json score_to_json(const metrics::MetricScore& s) {
    json j = {{"metric", s.metric}, {"value", s.value}};
    if (s.detail) j["detail"] = *s.detail;
    if (s.error) j["error"] = *s.error;
    return j;
}

metrics::MetricScore score_from_json(const json& j) {
    metrics::MetricScore s;
    s.metric = j.at("metric").get<std::string>();
    s.value = j.at("value").get<double>();
    if (j.contains("detail")) s.detail = j["detail"].get<std::string>();
    if (j.contains("error")) s.error = j["error"].get<std::string>();
    return s;
}

json cell_to_json(const CellResult& c) {
    json scores = json::array();
    for (const auto& s : c.scores) scores.push_back(score_to_json(s));
    json j = {
        {"prompt_id", c.prompt.id},
        {"prompt_version", c.prompt.version},
        {"provider_id", c.provider_id},
        {"test_id", c.test_id},
        {"output", c.output},
        {"latency_ms", c.latency_ms},
        {"scores", std::move(scores)},
    };
    if (c.error) j["error"] = *c.error;
    return j;
}

CellResult cell_from_json(const json& j) {
    CellResult c;
    c.prompt.id = j.at("prompt_id").get<std::string>();
    c.prompt.version = j.at("prompt_version").get<int>();
    c.provider_id = j.at("provider_id").get<std::string>();
    c.test_id = j.at("test_id").get<int>();
    c.output = j.at("output").get<std::string>();
    c.latency_ms = j.at("latency_ms").get<std::int64_t>();
    for (const auto& s : j.at("scores")) c.scores.push_back(score_from_json(s));
    if (j.contains("error")) c.error = j["error"].get<std::string>();
    return c;
}

} // namespace

json config_to_json(const config::EvalConfig& cfg) {
    json prompts = json::array();
    for (const auto& p : cfg.prompts) prompts.push_back({{"id", p.id}, {"version", p.version}, {"text", p.text}});
    json providers = json::array();
    for (const auto& p : cfg.providers) providers.push_back(provider_to_json(p));
    json roles = json::object();
    for (const auto& [role, p] : cfg.roles) roles[role] = provider_to_json(p);
    json tests = json::array();
    for (const auto& t : cfg.tests) {
        json asserts = json::array();
        for (const auto& a : t.assertions) {
            json aj = {{"type", std::string(config::to_string(a.type))}, {"value", a.value}};
            if (a.provider) aj["provider"] = *a.provider;
            asserts.push_back(std::move(aj));
        }
        tests.push_back({{"id", t.id}, {"vars", t.vars}, {"assert", std::move(asserts)}});
    }
    return {
        {"prompts", std::move(prompts)},
        {"providers", std::move(providers)},
        {"roles", std::move(roles)},
        {"tests", std::move(tests)},
        {"defaults", {{"tolerance", cfg.defaults.tolerance}, {"tolerances", cfg.defaults.per_metric}}},
    };
}

config::EvalConfig config_from_json(const json& j) {
    config::EvalConfig cfg;
    for (const auto& p : j.at("prompts")) {
        cfg.prompts.push_back({p.at("id").get<std::string>(), p.at("version").get<int>(), p.at("text").get<std::string>()});
    }
    for (const auto& p : j.at("providers")) cfg.providers.push_back(provider_from_json(p));
    if (j.contains("roles")) {
        for (const auto& [role, p] : j["roles"].items()) cfg.roles[role] = provider_from_json(p);
    }
    for (const auto& t : j.at("tests")) {
        config::TestCase tc;
        tc.id = t.at("id").get<int>();
        tc.vars = t.at("vars").get<std::map<std::string, std::string>>();
        for (const auto& a : t.at("assert")) {
            auto type = config::parse_assertion_type(a.at("type").get<std::string>());
            if (!type) throw ValidationError("unknown assertion type in stored config");
            config::AssertionSpec spec{*type, a.at("value").get<std::string>(), std::nullopt};
            if (a.contains("provider")) spec.provider = a["provider"].get<std::string>();
            tc.assertions.push_back(std::move(spec));
        }
        cfg.tests.push_back(std::move(tc));
    }
    const auto& d = j.at("defaults");
    cfg.defaults.tolerance = d.at("tolerance").get<double>();
    cfg.defaults.per_metric = d.at("tolerances").get<std::map<std::string, double>>();
    return cfg;
}

json to_json(const discovery::ErrorDescription& d) {
    json j = {
        {"id", d.id},
        {"text", d.text},
        {"goal", d.goal},
        {"mode", std::string(discovery::to_string(d.mode))},
        {"source_chunks", d.source_chunks},
    };
    if (d.support) {
        json support = json::array();
        for (const auto& e : *d.support) {
            support.push_back({{"corpus", std::string(discovery::to_string(e.corpus))}, {"test_id", e.test_id}});
        }
        j["support"] = std::move(support);
    }
    if (d.promoted_assertion_id) j["promoted_assertion_id"] = *d.promoted_assertion_id;
    return j;
}

discovery::ErrorDescription description_from_json(const json& j) {
    discovery::ErrorDescription d;
    d.id = j.at("id").get<std::string>();
    d.text = j.at("text").get<std::string>();
    d.goal = j.at("goal").get<std::string>();
    d.mode = j.at("mode").get<std::string>() == "baseline" ? discovery::DiscoveryMode::Baseline
                                                           : discovery::DiscoveryMode::GoalDriven;
    d.source_chunks = j.at("source_chunks").get<std::vector<int>>();
    if (j.contains("support")) {
        std::set<discovery::SupportEntry> support;
        for (const auto& e : j["support"]) {
            support.insert({discovery::parse_corpus_label(e.at("corpus").get<std::string>()), e.at("test_id").get<int>()});
        }
        d.support = std::move(support);
    }
    if (j.contains("promoted_assertion_id")) d.promoted_assertion_id = j["promoted_assertion_id"].get<std::string>();
    return d;
}

json to_json(const metrics::AssertionMetric& a) {
    json j = {{"id", a.id}, {"rubric_text", a.rubric_text}, {"judge_provider_id", a.judge_provider_id},
              {"active", a.active}, {"metric", a.metric_name()}};
    if (a.source_error_id) j["source_error_id"] = *a.source_error_id;
    return j;
}

metrics::AssertionMetric assertion_from_json(const json& j) {
    metrics::AssertionMetric a;
    a.id = j.at("id").get<std::string>();
    a.rubric_text = j.at("rubric_text").get<std::string>();
    a.judge_provider_id = j.at("judge_provider_id").get<std::string>();
    a.active = j.at("active").get<bool>();
    if (j.contains("source_error_id")) a.source_error_id = j["source_error_id"].get<std::string>();
    return a;
}

json to_json(const RunRecord& run) {
    json cells = json::array();
    for (const auto& c : run.cells) cells.push_back(cell_to_json(c));
    json discoveries = json::array();
    for (const auto& d : run.discoveries) discoveries.push_back(to_json(d));
    return {
        {"schema_version", run.schema_version},
        {"run_id", run.run_id},
        {"created_at", run.created_at},
        {"prompt_versions", run.prompt_versions},
        {"metrics", run.metrics},
        {"cells", std::move(cells)},
        {"config_snapshot", config_to_json(run.config_snapshot)},
        {"discoveries", std::move(discoveries)},
    };
}

RunRecord run_from_json(const json& j) {
    RunRecord run;
    run.schema_version = j.at("schema_version").get<int>();
    if (run.schema_version != kRunSchemaVersion) {
        throw ValidationError(fmt::format("unsupported run schema_version {}", run.schema_version));
    }
    run.run_id = j.at("run_id").get<std::string>();
    run.created_at = j.at("created_at").get<std::string>();
    run.prompt_versions = j.at("prompt_versions").get<std::map<std::string, int>>();
    run.metrics = j.at("metrics").get<std::vector<std::string>>();
    for (const auto& c : j.at("cells")) run.cells.push_back(cell_from_json(c));
    run.config_snapshot = config_from_json(j.at("config_snapshot"));
    if (j.contains("discoveries")) {
        for (const auto& d : j["discoveries"]) run.discoveries.push_back(description_from_json(d));
    }
    return run;
}

std::string canonical_dump(const json& j) {
    return j.dump(2, ' ', false, json::error_handler_t::replace) + "\n";
}

std::string serialize_run(const RunRecord& run) { return canonical_dump(to_json(run)); }

RunRecord parse_run(std::string_view text) {
    try {
        return run_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed run document: ") + e.what());
    }
}

std::string compute_run_id(const config::EvalConfig& snapshot, std::string_view created_at) {
    auto payload = canonical_dump(config_to_json(snapshot)) + std::string(created_at);
    return text::sha256_hex(payload).substr(0, 16);
}

} // namespace retain::runner
