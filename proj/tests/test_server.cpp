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

#include <catch_amalgamated.hpp>

#include <httplib.h>

#include <thread>

#include "retain/server.hpp"
#include "support.hpp"

using namespace retain;
using json = nlohmann::json;
using retain::testing::TempDir;
using namespace std::chrono_literals;

namespace {

std::filesystem::path offline_dir() { return testing::source_dir() / "configs/offline"; }

struct Fixture {
    TempDir dir;
    workspace::Workspace ws{dir.path()};
    std::unique_ptr<server::ApiServer> api;
    std::unique_ptr<httplib::Client> client;

    explicit Fixture(std::size_t async_threshold = 64, bool with_default = true) {
        server::ServerOptions opts;
        opts.async_threshold = async_threshold;
        opts.config_root = offline_dir();
        std::optional<config::EvalConfig> def;
        if (with_default) def = config::load_config_file(offline_dir() / "retain.yaml");
        api = std::make_unique<server::ApiServer>(ws, def, opts);
        int port = api->start();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_read_timeout(30, 0);
    }

    std::pair<int, json> get(const std::string& path) {
        auto res = client->Get(path);
        REQUIRE(res);
        return {res->status, res->body.empty() ? json() : json::parse(res->body)};
    }
    std::pair<int, json> post(const std::string& path, const json& body) { return post_raw(path, body.dump()); }
    std::pair<int, json> post_raw(const std::string& path, const std::string& body) {
        auto res = client->Post(path, body, "application/json");
        REQUIRE(res);
        return {res->status, res->body.empty() ? json() : json::parse(res->body)};
    }
    std::pair<int, json> del(const std::string& path) {
        auto res = client->Delete(path);
        REQUIRE(res);
        return {res->status, res->body.empty() ? json() : json::parse(res->body)};
    }

    std::string run_offline() {
        auto [status, body] = post("/api/runs", {{"config_path", "retain.yaml"}});
        REQUIRE(status == 200);
        return body["run_id"].get<std::string>();
    }
};

} // namespace

TEST_CASE("status mapping") {
    CHECK(server::status_for("run.unknown") == 404);
    CHECK(server::status_for("workspace.not_found") == 404);
    CHECK(server::status_for("segment.unknown") == 404);
    CHECK(server::status_for("workspace.conflict") == 409);
    CHECK(server::status_for("assertion.already_promoted") == 409);
    CHECK(server::status_for("config.invalid") == 400);
    CHECK(server::status_for("segment.stale") == 400);
    CHECK(server::status_for("discovery.invalid_goal") == 400);
    CHECK(server::status_for("metric.unknown") == 400);
    CHECK(server::status_for("provider.unknown") == 400);
    CHECK(server::status_for("provider.timeout") == 502);
    CHECK(server::status_for("run.aborted") == 502);
    CHECK(server::status_for("workspace.io") == 500);
}

TEST_CASE("runs: create, list, fetch") {
    Fixture f;
    auto [status, summary] = f.post("/api/runs", {{"config_path", "retain.yaml"}});
    REQUIRE(status == 200);
    CHECK(summary["cell_count"] == 6);
    CHECK(summary["error_count"] == 0);
    const auto id = summary["run_id"].get<std::string>();

    auto [ls, list] = f.get("/api/runs");
    CHECK(ls == 200);
    REQUIRE(list.size() == 1);
    CHECK(list[0]["run_id"] == id);

    auto [gs, run] = f.get("/api/runs/" + id);
    CHECK(gs == 200);
    CHECK(run["cells"].size() == 6);
    CHECK(run["summary"]["run_id"] == id);

    auto [ns, err] = f.get("/api/runs/does-not-exist");
    CHECK(ns == 404);
    CHECK(err["code"] == "run.unknown");

    // the server's default config serves a bodyless request
    auto [ds, dsum] = f.post_raw("/api/runs", "");
    CHECK(ds == 200);
    CHECK(dsum["cell_count"] == 6);
}

TEST_CASE("runs: invalid configs are 400 config.invalid") {
    Fixture f(64, false);
    auto [s1, e1] = f.post_raw("/api/runs", "{not json");
    CHECK(s1 == 400);
    CHECK(e1["code"] == "config.invalid");
    auto [s2, e2] = f.post("/api/runs", {{"config", "prompts: [a\n"}});
    CHECK(s2 == 400);
    CHECK(e2["code"] == "config.invalid");
    auto [s3, e3] = f.post("/api/runs", {{"config", "prompts: [a]\nproviders: [x:y]\ntests: []\n"}});
    CHECK(s3 == 400);
    CHECK(e3["code"] == "config.invalid");
    auto [s4, e4] = f.post("/api/runs", json::object());
    CHECK(s4 == 400);
    auto [s5, e5] = f.post("/api/runs", {{"config_path", "missing.yaml"}});
    CHECK(s5 == 400);
    CHECK(e5["code"] == "config.invalid");
}

TEST_CASE("runs: inline config object with scripted providers") {
    Fixture f;
    json cfg = {{"prompts", {"Summarize: {{document}}"}},
                {"providers", {{{"id", "local:a"}, {"kind", "scripted"}, {"script", "scripts/old_model.json"}}}},
                {"tests", {{{"vars", {{"document", "file://docs/library.txt"}}},
                            {"assert", {{{"type", "bleu"}, {"value", "The library will open longer"}}}}}}}};
    auto [status, summary] = f.post("/api/runs", {{"config", cfg}});
    CHECK(status == 200);
    CHECK(summary["cell_count"] == 1);
}

TEST_CASE("runs: large grids go to a background job") {
    Fixture f(1);
    auto [status, body] = f.post("/api/runs", {{"config_path", "retain.yaml"}});
    REQUIRE(status == 202);
    CHECK(body["cells"] == 6);
    const auto handle = body["handle"].get<std::string>();
    json job;
    for (int i = 0; i < 200; ++i) {
        auto [js, j] = f.get("/api/jobs/" + handle);
        REQUIRE(js == 200);
        job = j;
        if (job["status"] != "running") break;
        std::this_thread::sleep_for(20ms);
    }
    REQUIRE(job["status"] == "done");
    CHECK(job["run"]["cell_count"] == 6);
    CHECK(f.ws.list_runs().size() == 1);
    auto [ms, me] = f.get("/api/jobs/job-999");
    CHECK(ms == 404);
}

TEST_CASE("compare delegates to the diff engine") {
    Fixture f;
    auto first = f.run_offline();
    std::this_thread::sleep_for(5ms);
    auto second = f.run_offline();

    auto [status, cmp] = f.get("/api/runs/compare");
    REQUIRE(status == 200);
    CHECK(cmp["old"] == first);
    CHECK(cmp["new"] == second);
    CHECK(cmp["total_regressions"] == 0);
    CHECK(cmp["test_count"] == 3);

    // one run against itself, old model side vs new model side
    auto q = "/api/runs/compare?old=" + second + "&new=" + second +
             "&old_provider=openai:gpt-35-turbo-16k&new_provider=meta-llama-3-8b";
    auto [s2, sides] = f.get(q);
    REQUIRE(s2 == 200);
    auto old_run = f.ws.load_run(second);
    auto expected = runner::diff_runs(old_run, old_run, old_run.config_snapshot.defaults,
                                      {std::nullopt, "openai:gpt-35-turbo-16k"}, {std::nullopt, "meta-llama-3-8b"});
    CHECK(sides["total_regressions"] == expected.total_regressions());
    CHECK(expected.total_regressions() > 0);
    CHECK(sides["verdicts"].size() == expected.verdicts.size());

    auto [s3, filtered] = f.get(q + "&metric=bleu&mode=regressions-only&tolerance=0.1");
    REQUIRE(s3 == 200);
    auto ids = runner::filter_by_tolerance(old_run, old_run, "bleu", 0.1, runner::FilterMode::RegressionsOnly,
                                           {std::nullopt, "openai:gpt-35-turbo-16k"},
                                           {std::nullopt, "meta-llama-3-8b"});
    CHECK(filtered["filter"]["test_ids"] == json(ids));

    auto [s4, e4] = f.get(q + "&metric=rouge");
    CHECK(s4 == 400);
    CHECK(e4["code"] == "metric.unknown");
    auto [s5, e5] = f.get(q + "&tolerance=abc");
    CHECK(s5 == 400);
    CHECK(e5["code"] == "request.invalid");
    auto [s6, e6] = f.get(q + "&segment=nope");
    CHECK(s6 == 404);
}

TEST_CASE("discover, support, promote") {
    Fixture f;
    auto id = f.run_offline();

    auto [s0, e0] = f.post("/api/runs/" + id + "/discover", {{"goal", "   "}});
    CHECK(s0 == 400);
    CHECK(e0["code"] == "discovery.invalid_goal");

    auto [status, found] = f.post("/api/runs/" + id + "/discover", {{"goal", "How do the openings differ?"}});
    REQUIRE(status == 200);
    REQUIRE(found["descriptions"].size() == 1);
    const auto eid = found["descriptions"][0]["id"].get<std::string>();
    CHECK(found["a"]["provider"] == "openai:gpt-35-turbo-16k");
    CHECK(found["b"]["provider"] == "meta-llama-3-8b");

    auto [es, errors] = f.get("/api/runs/" + id + "/errors");
    CHECK(es == 200);
    REQUIRE(errors.size() == 1);
    CHECK(errors[0]["id"] == eid);

    // rerunning is idempotent
    f.post("/api/runs/" + id + "/discover", {{"goal", "How do the openings differ?"}});
    CHECK(f.get("/api/runs/" + id + "/errors").second.size() == 1);

    auto [ss, support] = f.post("/api/runs/" + id + "/errors/" + eid + "/support", json::object());
    REQUIRE(ss == 200);
    std::set<int> flagged;
    for (const auto& e : support["support"]) {
        CHECK(e["corpus"] == "B");
        CHECK(e["provider"] == "meta-llama-3-8b");
        flagged.insert(e["test_id"].get<int>());
    }
    CHECK(flagged == std::set<int>{0, 2});
    auto again = f.post("/api/runs/" + id + "/errors/" + eid + "/support", json::object()).second;
    CHECK(again["support"] == support["support"]);
    CHECK(f.ws.find_error(eid).second.support.has_value());

    auto [ms, me] = f.post("/api/runs/" + id + "/errors/nope/support", json::object());
    CHECK(ms == 404);

    auto [ps, assertion] = f.post("/api/assertions", {{"error_id", eid}});
    CHECK(ps == 201);
    CHECK(assertion["judge_provider_id"] == "scripted:judge");
    CHECK(assertion["active"] == true);
    auto [dup, dup_err] = f.post("/api/assertions", {{"error_id", eid}});
    CHECK(dup == 409);
    CHECK(dup_err["code"] == "assertion.already_promoted");
    auto [bad, bad_err] = f.post("/api/assertions", json::object());
    CHECK(bad == 400);

    // the next run scores the promoted assertion
    auto next = f.run_offline();
    auto run = f.ws.load_run(next);
    const auto metric = "assert:" + assertion["id"].get<std::string>();
    CHECK(std::find(run.metrics.begin(), run.metrics.end(), metric) != run.metrics.end());
    for (const auto& c : run.cells) {
        const auto* s = c.score(metric);
        REQUIRE(s != nullptr);
        const bool preamble = c.output.starts_with("Sure!");
        CHECK(s->value == (preamble ? 0.0 : 1.0));
    }

    auto [ds, deact] = f.del("/api/assertions/" + assertion["id"].get<std::string>());
    CHECK(ds == 200);
    CHECK(deact["active"] == false);
    CHECK(f.get("/api/assertions").second.size() == 1);
    CHECK(f.del("/api/assertions/unknown").first == 404);
}

TEST_CASE("baseline discovery and explicit sides") {
    Fixture f;
    auto id = f.run_offline();
    auto [status, found] = f.post("/api/runs/" + id + "/discover",
                                  {{"mode", "baseline"},
                                   {"a", {{"provider", "openai:gpt-35-turbo-16k"}, {"prompt", "summarize"}}},
                                   {"b", {{"provider", "meta-llama-3-8b"}, {"prompt", "summarize"}}}});
    CHECK(status == 200);
    CHECK(found.contains("descriptions"));
    auto [s2, e2] = f.post("/api/runs/" + id + "/discover", {{"mode", "sideways"}});
    CHECK(s2 == 400);
    auto [s3, e3] = f.post("/api/runs/nope/discover", {{"goal", "x"}});
    CHECK(s3 == 404);
}

TEST_CASE("prompts") {
    Fixture f;
    auto [s1, v1] = f.post("/api/prompts", {{"id", "p"}, {"text", "one {{x}}"}});
    CHECK(s1 == 201);
    CHECK(v1["version"] == 1);
    auto [s2, v2] = f.post("/api/prompts/p", {{"text", "two {{x}}"}});
    CHECK(s2 == 201);
    CHECK(v2["version"] == 2);
    auto [s3, hist] = f.get("/api/prompts/p");
    CHECK(s3 == 200);
    CHECK(hist.size() == 2);
    CHECK(f.get("/api/prompts").second["p"].size() == 2);
    CHECK(f.get("/api/prompts/none").first == 404);
    CHECK(f.post("/api/prompts", {{"text", "no id"}}).first == 400);

    // runs record the workspace version used
    f.run_offline();
    auto [s4, h4] = f.get("/api/prompts/summarize");
    CHECK(s4 == 200);
    CHECK(h4.size() == 1);
}

TEST_CASE("segments") {
    Fixture f;
    auto id = f.run_offline();
    auto [s1, seg] = f.post("/api/segments", {{"name", "hard"}, {"test_ids", {0, 2}}, {"run", id}});
    CHECK(s1 == 201);
    CHECK(seg["test_ids"] == json({0, 2}));
    CHECK(f.post("/api/segments", {{"name", "hard"}, {"test_ids", {0, 2}}}).first == 201);
    auto [s2, e2] = f.post("/api/segments", {{"name", "hard"}, {"test_ids", {1}}});
    CHECK(s2 == 409);
    CHECK(e2["code"] == "workspace.conflict");
    auto [s3, e3] = f.post("/api/segments", {{"name", "stale"}, {"test_ids", {9}}, {"run", id}});
    CHECK(s3 == 400);
    CHECK(e3["code"] == "segment.stale");
    CHECK(f.get("/api/segments").second.size() == 1);
    CHECK(f.get("/api/segments/hard?run=" + id).first == 200);
    CHECK(f.get("/api/segments/none").first == 404);
    CHECK(f.post("/api/segments", {{"name", "x"}}).first == 400);

    // a segment restricts discovery to its tests
    auto [ds, found] = f.post("/api/runs/" + id + "/discover", {{"goal", "openings"}, {"segment", "hard"}});
    CHECK(ds == 200);
    CHECK(found["test_ids"] == json({0, 2}));
}

TEST_CASE("unknown routes return a JSON error") {
    Fixture f;
    auto [status, body] = f.get("/api/nothing");
    CHECK(status == 404);
    CHECK(body["code"] == "http.not_found");
}
