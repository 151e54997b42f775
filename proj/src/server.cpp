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

#include "retain/server.hpp"

#include <atomic>
#include <map>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "retain/discovery.hpp"
#include "retain/errors.hpp"
#include "retain/text.hpp"

namespace retain::server {

using json = nlohmann::json;

json ApiError::to_json() const { return {{"status", status}, {"code", code}, {"message", message}}; }

int status_for(std::string_view code) {
    static const std::map<std::string_view, int> exact = {
        {"run.unknown", 404},         {"workspace.not_found", 404},
        {"segment.unknown", 404},     {"workspace.conflict", 409},
        {"assertion.already_promoted", 409}, {"provider.unknown", 400},
        {"run.aborted", 502},         {"discovery.failed", 502},
        {"workspace.io", 500},
    };
    if (auto it = exact.find(code); it != exact.end()) return it->second;
    if (code.starts_with("config.") || code.starts_with("run.") || code.starts_with("segment.") ||
        code.starts_with("discovery.") || code.starts_with("metric.") || code.starts_with("bench.")) {
        return 400;
    }
    if (code.starts_with("provider.")) return 502;
    return 500;
}

namespace {

/// Request-level problems that are not library errors.
class BadRequest : public Error {
public:
    explicit BadRequest(const std::string& message) : Error("request.invalid", message) {}
};

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        auto j = json::parse(req.body);
        if (!j.is_object()) throw BadRequest("request body must be a JSON object");
        return j;
    } catch (const json::exception& e) {
        throw BadRequest(std::string("malformed JSON body: ") + e.what());
    }
}

template <typename T>
std::optional<T> opt_field(const json& body, const char* key) {
    if (!body.contains(key) || body[key].is_null()) return std::nullopt;
    try {
        return body[key].get<T>();
    } catch (const json::exception&) {
        throw BadRequest(fmt::format("field '{}' has the wrong type", key));
    }
}

std::optional<std::string> query(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    return req.get_param_value(key);
}

double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw BadRequest(fmt::format("'{}' is not a number: '{}'", what, s));
    }
}

runner::CellSelector selector_from(const json& j) {
    runner::CellSelector sel;
    if (!j.is_object()) return sel;
    sel.provider_id = opt_field<std::string>(j, "provider");
    sel.prompt_id = opt_field<std::string>(j, "prompt");
    return sel;
}

json selector_json(const runner::CellSelector& s) {
    return {{"provider", s.provider_id ? json(*s.provider_id) : json(nullptr)},
            {"prompt", s.prompt_id ? json(*s.prompt_id) : json(nullptr)}};
}

json to_json(const runner::MetricChart& c) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"regressions", c.regressions}, {"improvements", c.improvements}, {"equivalent", c.equivalent},
            {"excluded", c.excluded},       {"old_mean", opt(c.old_mean)},   {"new_mean", opt(c.new_mean)},
            {"delta", opt(c.delta())}};
}

json to_json(const metrics::RegressionVerdict& v) {
    return {{"test_id", v.test_id},     {"metric", v.metric},
            {"old_score", v.old_score}, {"new_score", v.new_score},
            {"delta", v.new_score - v.old_score}, {"verdict", std::string(metrics::to_string(v.verdict))}};
}

json segment_json(const runner::Segment& s) { return {{"name", s.name}, {"test_ids", s.test_ids}}; }

json prompt_version_json(const workspace::PromptVersion& v) {
    return {{"id", v.id}, {"version", v.version}, {"text", v.text}, {"created_at", v.created_at}};
}

std::size_t grid_size(const config::EvalConfig& cfg) {
    return cfg.prompts.size() * cfg.providers.size() * cfg.tests.size();
}

/// Two sides of a run to contrast. Defaults: first two providers under the
/// first prompt, or the first two prompts when there is one provider.
std::pair<runner::CellSelector, runner::CellSelector> sides(const runner::RunRecord& run, const json& body) {
    runner::CellSelector a = selector_from(body.value("a", json::object()));
    runner::CellSelector b = selector_from(body.value("b", json::object()));
    const auto& cfg = run.config_snapshot;
    const bool explicit_sides = (a.provider_id || a.prompt_id) && (b.provider_id || b.prompt_id);
    if (explicit_sides) return {a, b};
    if (cfg.providers.size() >= 2) {
        return {{cfg.prompts.front().id, cfg.providers[0].id}, {cfg.prompts.front().id, cfg.providers[1].id}};
    }
    if (cfg.prompts.size() >= 2) {
        return {{cfg.prompts[0].id, cfg.providers.front().id}, {cfg.prompts[1].id, cfg.providers.front().id}};
    }
    throw BadRequest("run has a single prompt and provider; specify 'a' and 'b' selections");
}

struct SideCells {
    std::vector<const runner::CellResult*> cells;
};

/// One non-errored cell per test on a side, restricted to `tests`.
SideCells side_cells(const runner::RunRecord& run, const runner::CellSelector& sel, const std::set<int>& tests,
                     std::string_view label) {
    SideCells out;
    std::set<int> seen;
    for (const auto& c : run.cells) {
        if (!sel.matches(c) || !tests.contains(c.test_id) || c.error) continue;
        if (!seen.insert(c.test_id).second) {
            throw BadRequest(fmt::format("selection {} matches several cells for test {}; name a prompt and provider",
                                         label, c.test_id));
        }
        out.cells.push_back(&c);
    }
    if (out.cells.empty()) throw BadRequest(fmt::format("selection {} matches no usable outputs", label));
    return out;
}

discovery::Corpus corpus_of(discovery::CorpusLabel label, const SideCells& side) {
    std::vector<discovery::CorpusItem> items;
    for (const auto* c : side.cells) items.push_back({c->test_id, c->output});
    return discovery::Corpus(label, std::move(items));
}

config::EvalConfig with_roles(config::EvalConfig cfg, const std::optional<config::EvalConfig>& role_source) {
    if (role_source) {
        for (const auto& [role, spec] : role_source->roles) cfg.roles.emplace(role, spec);
    }
    return cfg;
}

std::set<int> restrict_tests(const workspace::Workspace& ws, const runner::RunRecord& run, const json& body,
                             const runner::CellSelector& a, const runner::CellSelector& b) {
    std::set<int> tests = run.test_ids();
    if (auto seg = opt_field<std::string>(body, "segment")) {
        auto ids = ws.resolve_segment(*seg, run);
        tests = std::set<int>(ids.begin(), ids.end());
    }
    if (body.contains("filter") && body["filter"].is_object()) {
        const auto& f = body["filter"];
        auto metric = opt_field<std::string>(f, "metric");
        if (!metric) throw BadRequest("filter needs a metric");
        double eps = opt_field<double>(f, "tolerance").value_or(run.config_snapshot.defaults.tolerance_for(*metric));
        auto mode = runner::parse_filter_mode(opt_field<std::string>(f, "mode").value_or("all-exceeding"));
        auto kept = runner::filter_by_tolerance(run, run, *metric, eps, mode, a, b);
        std::set<int> next;
        for (int id : kept) {
            if (tests.contains(id)) next.insert(id);
        }
        tests = std::move(next);
    }
    return tests;
}

} // namespace

json discover(workspace::Workspace& ws, const std::string& run_id, const json& body,
              const std::optional<config::EvalConfig>& role_source, const RegistryFactory& make_registry) {
    auto run = ws.load_run(run_id);
    auto mode_name = opt_field<std::string>(body, "mode").value_or("goal");
    if (mode_name != "goal" && mode_name != "baseline") throw BadRequest("mode must be 'goal' or 'baseline'");
    auto goal = opt_field<std::string>(body, "goal").value_or("");
    if (mode_name == "goal" && text::trim(goal).empty()) throw InvalidGoal("goal must be non-empty");

    auto [sel_a, sel_b] = sides(run, body);
    auto tests = restrict_tests(ws, run, body, sel_a, sel_b);
    if (tests.empty()) throw BadRequest("selection leaves no tests to compare");
    auto a = corpus_of(discovery::CorpusLabel::A, side_cells(run, sel_a, tests, "a"));
    auto b = corpus_of(discovery::CorpusLabel::B, side_cells(run, sel_b, tests, "b"));

    auto cfg = with_roles(run.config_snapshot, role_source);
    if (!cfg.roles.contains(std::string(config::kRoleGenerator))) {
        throw ValidationError("no discovery_generator role configured");
    }
    auto registry = make_registry(cfg);
    auto& generator = registry.role(config::kRoleGenerator);
    discovery::DiscoveryOptions dopts;
    if (auto budget = opt_field<std::size_t>(body, "budget")) dopts.budget = *budget;
    auto result = mode_name == "goal" ? discovery::generate_differences(a, b, goal, generator, dopts)
                                      : discovery::generate_differences_baseline(a, b, generator, dopts);
    ws.append_discoveries(run.run_id, result.descriptions);

    json descs = json::array();
    for (const auto& d : result.descriptions) descs.push_back(runner::to_json(d));
    std::vector<int> test_ids(tests.begin(), tests.end());
    return {{"run_id", run.run_id},
            {"descriptions", std::move(descs)},
            {"warnings", result.warnings},
            {"chunk_count", result.chunk_count},
            {"failed_chunks", result.failed_chunks},
            {"a", selector_json(sel_a)},
            {"b", selector_json(sel_b)},
            {"test_ids", test_ids}};
}

struct ApiServer::Impl {
    workspace::Workspace& ws;
    std::optional<config::EvalConfig> default_config;
    ServerOptions opts;
    httplib::Server http;
    std::thread listener;

    struct Job {
        std::string status = "running";
        json run;
        std::optional<ApiError> error;
    };
    std::mutex jobs_mu;
    std::map<std::string, Job> jobs;
    std::vector<std::jthread> workers;
    std::atomic<std::uint64_t> next_job{1};

    Impl(workspace::Workspace& w, std::optional<config::EvalConfig> cfg, ServerOptions o)
        : ws(w), default_config(std::move(cfg)), opts(std::move(o)) {
        routes();
    }

    // -- helpers -------------------------------------------------------------

    static void send(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, const ApiError& e) { send(res, e.status, e.to_json()); }

    static ApiError api_error(const Error& e) {
        int status = e.code() == "request.invalid" ? 400 : status_for(e.code());
        return {status, e.code(), e.what()};
    }

    template <typename Fn>
    httplib::Server::Handler wrap(Fn fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const Error& e) {
                send_error(res, api_error(e));
            } catch (const std::exception& e) {
                spdlog::error("unhandled error on {} {}: {}", req.method, req.path, e.what());
                send_error(res, {500, "internal", e.what()});
            }
        };
    }

    config::EvalConfig request_config(const json& body) const {
        config::EvalConfig cfg;
        if (body.contains("config")) {
            const auto& c = body["config"];
            std::string text;
            if (c.is_string()) {
                text = c.get<std::string>();
            } else if (c.is_object()) {
                text = c.dump();
            } else {
                throw ValidationError("'config' must be YAML text or an object");
            }
            try {
                cfg = config::resolve_file_refs(config::parse_config(text), opts.config_root);
            } catch (const SyntaxError& e) {
                throw ValidationError(e.what());
            }
        } else if (body.contains("config_path")) {
            if (!body["config_path"].is_string()) throw ValidationError("'config_path' must be a string");
            std::filesystem::path p = body["config_path"].get<std::string>();
            if (p.is_relative()) p = opts.config_root / p;
            try {
                cfg = config::load_config_file(p);
            } catch (const SyntaxError& e) {
                throw ValidationError(e.what());
            } catch (const IOError& e) {
                throw ValidationError(e.what());
            }
        } else if (default_config) {
            cfg = *default_config;
        } else {
            throw ValidationError("no config given and the server has no default config");
        }
        return cfg;
    }

    json execute_and_persist(const config::EvalConfig& cfg) {
        auto registry = opts.make_registry(cfg);
        auto run_opts = opts.run;
        run_opts.assertions = ws.active_assertions();
        auto run = runner::execute_run(cfg, registry, run_opts);
        ws.persist_run(run);
        return workspace::to_json(workspace::summarize(run));
    }

    // -- routes --------------------------------------------------------------

    void routes() {
        http.Post("/api/runs", wrap([this](const httplib::Request& req, httplib::Response& res) {
            json body;
            try {
                body = parse_body(req);
            } catch (const BadRequest& e) {
                throw ValidationError(e.what());
            }
            auto pins = opt_field<std::map<std::string, int>>(body, "pins").value_or(std::map<std::string, int>{});
            auto cfg = ws.apply_prompt_versions(request_config(body), pins);
            if (grid_size(cfg) <= opts.async_threshold) {
                send(res, 200, execute_and_persist(cfg));
                return;
            }
            auto handle = fmt::format("job-{}", next_job++);
            {
                std::lock_guard lock(jobs_mu);
                jobs[handle] = Job{};
                workers.emplace_back([this, handle, cfg] {
                    Job done;
                    try {
                        done.run = execute_and_persist(cfg);
                        done.status = "done";
                    } catch (const Error& e) {
                        done.status = "failed";
                        done.error = api_error(e);
                    } catch (const std::exception& e) {
                        done.status = "failed";
                        done.error = ApiError{500, "internal", e.what()};
                    }
                    std::lock_guard inner(jobs_mu);
                    jobs[handle] = std::move(done);
                });
            }
            send(res, 202, {{"handle", handle}, {"status", "running"}, {"cells", grid_size(cfg)}});
        }));

        http.Get("/api/jobs/:handle", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const auto& handle = req.path_params.at("handle");
            std::lock_guard lock(jobs_mu);
            auto it = jobs.find(handle);
            if (it == jobs.end()) throw NotFound("no job '" + handle + "'");
            json body = {{"handle", handle}, {"status", it->second.status}};
            if (it->second.status == "done") body["run"] = it->second.run;
            if (it->second.error) body["error"] = it->second.error->to_json();
            send(res, 200, body);
        }));

        http.Get("/api/runs", wrap([this](const httplib::Request&, httplib::Response& res) {
            json out = json::array();
            for (const auto& s : ws.list_runs()) out.push_back(workspace::to_json(s));
            send(res, 200, out);
        }));

        http.Get("/api/runs/compare", wrap([this](const httplib::Request& req, httplib::Response& res) {
            std::string new_id;
            if (auto n = query(req, "new")) {
                new_id = *n;
            } else if (auto latest = ws.latest_run_id()) {
                new_id = *latest;
            } else {
                throw UnknownRun("workspace has no runs");
            }
            std::string old_id;
            if (auto o = query(req, "old")) {
                old_id = *o;
            } else if (auto prev = ws.previous_run_id(new_id)) {
                old_id = *prev;
            } else {
                throw BadRequest("no 'old' run given and none precedes '" + new_id + "'");
            }
            auto old_run = ws.load_run(old_id);
            auto new_run = ws.load_run(new_id);
            runner::CellSelector old_sel{query(req, "old_prompt"), query(req, "old_provider")};
            runner::CellSelector new_sel{query(req, "new_prompt"), query(req, "new_provider")};

            auto tolerances = new_run.config_snapshot.defaults;
            std::optional<double> tol;
            if (auto t = query(req, "tolerance")) {
                tol = parse_double(*t, "tolerance");
                tolerances = config::MetricDefaults{*tol, {}};
            }
            auto report = runner::diff_runs(old_run, new_run, tolerances, old_sel, new_sel);

            std::optional<std::set<int>> segment_ids;
            if (auto seg = query(req, "segment")) {
                auto ids = ws.resolve_segment(*seg, new_run);
                segment_ids = std::set<int>(ids.begin(), ids.end());
            }
            auto in_segment = [&](int id) { return !segment_ids || segment_ids->contains(id); };

            json verdicts = json::array();
            for (const auto& v : report.verdicts) {
                if (in_segment(v.test_id)) verdicts.push_back(to_json(v));
            }
            json charts = json::object();
            for (const auto& [metric, chart] : report.charts) charts[metric] = to_json(chart);
            json body = {{"old", old_id},
                         {"new", new_id},
                         {"old_selection", selector_json(old_sel)},
                         {"new_selection", selector_json(new_sel)},
                         {"test_count", report.test_count},
                         {"total_regressions", report.total_regressions()},
                         {"verdicts", std::move(verdicts)},
                         {"charts", std::move(charts)}};
            if (auto metric = query(req, "metric")) {
                double eps = tol.value_or(new_run.config_snapshot.defaults.tolerance_for(*metric));
                auto mode = runner::parse_filter_mode(query(req, "mode").value_or("all-exceeding"));
                auto ids = runner::filter_by_tolerance(old_run, new_run, *metric, eps, mode, old_sel, new_sel);
                std::vector<int> kept;
                for (int id : ids) {
                    if (in_segment(id)) kept.push_back(id);
                }
                body["filter"] = {{"metric", *metric},
                                  {"tolerance", eps},
                                  {"mode", std::string(runner::to_string(mode))},
                                  {"test_ids", kept}};
            }
            send(res, 200, body);
        }));

        http.Get("/api/runs/:id", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto run = ws.load_run(req.path_params.at("id"));
            auto body = runner::to_json(run);
            body["summary"] = workspace::to_json(workspace::summarize(run));
            send(res, 200, body);
        }));

        http.Post("/api/runs/:id/discover", wrap([this](const httplib::Request& req, httplib::Response& res) {
            send(res, 200, discover(ws, req.path_params.at("id"), parse_body(req), default_config, opts.make_registry));
        }));

        http.Get("/api/runs/:id/errors", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto run = ws.load_run(req.path_params.at("id"));
            json out = json::array();
            for (const auto& d : run.discoveries) out.push_back(runner::to_json(d));
            send(res, 200, out);
        }));

        http.Post("/api/runs/:id/errors/:eid/support", wrap([this](const httplib::Request& req,
                                                                   httplib::Response& res) {
            auto body = parse_body(req);
            auto run = ws.load_run(req.path_params.at("id"));
            const auto& eid = req.path_params.at("eid");
            const discovery::ErrorDescription* desc = nullptr;
            for (const auto& d : run.discoveries) {
                if (d.id == eid) desc = &d;
            }
            if (!desc) throw NotFound("no error '" + eid + "' in run '" + run.run_id + "'");

            auto [sel_a, sel_b] = sides(run, body);
            auto tests = restrict_tests(ws, run, body, sel_a, sel_b);
            auto cells_a = side_cells(run, sel_a, tests, "a");
            auto cells_b = side_cells(run, sel_b, tests, "b");

            auto cfg = with_roles(run.config_snapshot, default_config);
            if (!cfg.roles.contains(std::string(config::kRoleSelector))) {
                throw ValidationError("no discovery_selector role configured");
            }
            auto registry = opts.make_registry(cfg);
            auto& selector = registry.role(config::kRoleSelector);

            std::set<discovery::SupportEntry> support;
            json flagged = json::array();
            json unclassified = json::array();
            json warnings = json::array();
            for (auto [label, side] : {std::pair{discovery::CorpusLabel::A, &cells_a},
                                       std::pair{discovery::CorpusLabel::B, &cells_b}}) {
                auto result = discovery::select_support(*desc, corpus_of(label, *side), selector);
                std::map<int, const runner::CellResult*> by_test;
                for (const auto* c : side->cells) by_test[c->test_id] = c;
                for (const auto& e : result.support) {
                    support.insert(e);
                    const auto* cell = by_test.at(e.test_id);
                    flagged.push_back({{"corpus", std::string(discovery::to_string(label))},
                                       {"provider", cell->provider_id},
                                       {"prompt", cell->prompt.id},
                                       {"test_id", e.test_id}});
                }
                for (int id : result.unclassified) {
                    unclassified.push_back({{"corpus", std::string(discovery::to_string(label))}, {"test_id", id}});
                }
                for (const auto& w : result.warnings) warnings.push_back(w);
            }
            ws.set_support(run.run_id, eid, support);
            send(res, 200,
                 {{"error_id", eid}, {"support", flagged}, {"unclassified", unclassified}, {"warnings", warnings}});
        }));

        http.Get("/api/assertions", wrap([this](const httplib::Request&, httplib::Response& res) {
            json out = json::array();
            for (const auto& a : ws.assertions()) out.push_back(runner::to_json(a));
            send(res, 200, out);
        }));

        http.Post("/api/assertions", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            auto error_id = opt_field<std::string>(body, "error_id");
            if (!error_id) throw BadRequest("'error_id' is required");
            auto judge = opt_field<std::string>(body, "judge_provider");
            if (!judge) {
                auto [run_id, desc] = ws.find_error(*error_id);
                auto cfg = with_roles(ws.load_run(run_id).config_snapshot, default_config);
                auto it = cfg.roles.find(std::string(config::kRoleJudge));
                if (it == cfg.roles.end()) throw ValidationError("no judge role configured and no judge_provider given");
                judge = it->second.id;
            }
            send(res, 201, runner::to_json(ws.promote_error(*error_id, *judge)));
        }));

        http.Delete("/api/assertions/:id", wrap([this](const httplib::Request& req, httplib::Response& res) {
            const auto& id = req.path_params.at("id");
            ws.deactivate_assertion(id);
            for (const auto& a : ws.assertions()) {
                if (a.id == id) {
                    send(res, 200, runner::to_json(a));
                    return;
                }
            }
            throw NotFound("no assertion '" + id + "'");
        }));

        http.Get("/api/prompts", wrap([this](const httplib::Request&, httplib::Response& res) {
            json out = json::object();
            for (const auto& [id, versions] : ws.prompts()) {
                json list = json::array();
                for (const auto& v : versions) list.push_back(prompt_version_json(v));
                out[id] = std::move(list);
            }
            send(res, 200, out);
        }));

        auto add_prompt = [this](const std::string& id, const json& body, httplib::Response& res) {
            auto text = opt_field<std::string>(body, "text");
            if (!text) throw BadRequest("'text' is required");
            send(res, 201, prompt_version_json(ws.add_prompt_version(id, *text)));
        };

        http.Post("/api/prompts", wrap([add_prompt](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            auto id = opt_field<std::string>(body, "id");
            if (!id) throw BadRequest("'id' is required");
            add_prompt(*id, body, res);
        }));

        http.Get("/api/prompts/:id", wrap([this](const httplib::Request& req, httplib::Response& res) {
            json list = json::array();
            for (const auto& v : ws.prompt_history(req.path_params.at("id"))) list.push_back(prompt_version_json(v));
            send(res, 200, list);
        }));

        http.Post("/api/prompts/:id", wrap([add_prompt](const httplib::Request& req, httplib::Response& res) {
            add_prompt(req.path_params.at("id"), parse_body(req), res);
        }));

        http.Get("/api/segments", wrap([this](const httplib::Request&, httplib::Response& res) {
            json out = json::array();
            for (const auto& s : ws.segments()) out.push_back(segment_json(s));
            send(res, 200, out);
        }));

        http.Post("/api/segments", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            auto name = opt_field<std::string>(body, "name");
            auto ids = opt_field<std::vector<int>>(body, "test_ids");
            if (!name || !ids) throw BadRequest("'name' and 'test_ids' are required");
            runner::Segment seg{*name, *ids};
            std::optional<runner::RunRecord> against;
            if (auto run_id = opt_field<std::string>(body, "run")) against = ws.load_run(*run_id);
            ws.save_segment(seg, against ? &*against : nullptr);
            send(res, 201, segment_json(ws.segment(*name)));
        }));

        http.Get("/api/segments/:name", wrap([this](const httplib::Request& req, httplib::Response& res) {
            auto seg = ws.segment(req.path_params.at("name"));
            if (auto run_id = query(req, "run")) runner::resolve_segment_ids(seg, ws.load_run(*run_id));
            send(res, 200, segment_json(seg));
        }));

        http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) {
                send_error(res, {res.status, res.status == 404 ? "http.not_found" : "http.error",
                                 httplib::status_message(res.status)});
            }
        });
    }
};

ApiServer::ApiServer(workspace::Workspace& ws, std::optional<config::EvalConfig> default_config, ServerOptions opts)
    : impl_(std::make_unique<Impl>(ws, std::move(default_config), std::move(opts))) {}

ApiServer::~ApiServer() {
    stop();
    std::vector<std::jthread> workers;
    {
        std::lock_guard lock(impl_->jobs_mu);
        workers.swap(impl_->workers);
    }
    workers.clear();
}

int ApiServer::bind(const std::string& host, int port) {
    int bound = port == 0 ? impl_->http.bind_to_any_port(host) : (impl_->http.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IOError(fmt::format("cannot bind {}:{}", host, port));
    return bound;
}

void ApiServer::listen() { impl_->http.listen_after_bind(); }

int ApiServer::start(const std::string& host, int port) {
    int bound = bind(host, port);
    impl_->listener = std::thread([this] { listen(); });
    impl_->http.wait_until_ready();
    return bound;
}

void ApiServer::stop() {
    impl_->http.stop();
    if (impl_->listener.joinable()) impl_->listener.join();
}

} // namespace retain::server
