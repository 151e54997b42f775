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

#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <csignal>
#include <fstream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "retain/config.hpp"
#include "retain/errors.hpp"
#include "retain/runner.hpp"
#include "retain/server.hpp"
#include "retain/synthbench.hpp"
#include "retain/workspace.hpp"

namespace retain::cli {

namespace {

using json = nlohmann::json;

int exit_code_for(const Error& e) {
    const std::string& code = e.code();
    if (code.starts_with("provider.") || code == "run.aborted" || code == "discovery.failed" || code == "workspace.io" ||
        code == "bench.generation_rejected") {
        return kFailure;
    }
    return kUsage;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : "n/a"; }

void configure_logging(bool verbose) {
    static std::once_flag once;
    std::call_once(once, [] {
        auto logger = spdlog::stderr_color_mt("retain");
        spdlog::set_default_logger(logger);
    });
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);
}

std::atomic<server::ApiServer*> g_server{nullptr};

extern "C" void on_signal(int) {
    if (auto* s = g_server.load()) s->stop();
}

/// A config that cannot be read is a usage problem, not a runtime failure.
config::EvalConfig load_config(const std::string& path) {
    try {
        return config::load_config_file(path);
    } catch (const IOError& e) {
        throw ValidationError(e.what());
    }
}

struct EvalArgs {
    std::string config;
    std::string out;
};

int cmd_eval(const EvalArgs& args, const std::string& ws_root, std::ostream& out) {
    auto cfg = load_config(args.config);
    workspace::Workspace ws(args.out.empty() ? ws_root : args.out);
    cfg = ws.apply_prompt_versions(cfg);
    auto registry = provider::build_registry(cfg);
    runner::RunOptions opts;
    opts.assertions = ws.active_assertions();
    auto run = runner::execute_run(cfg, registry, opts);
    ws.persist_run(run);

    auto summary = workspace::summarize(run);
    fmt::print(out, "run {} ({} cells, {} errored) in {}\n", run.run_id, summary.cell_count, summary.error_count,
               ws.root().string());
    fmt::print(out, "{:<28} {:>8} {:>6} {:>9}\n", "metric", "mean", "count", "excluded");
    for (const auto& [metric, stat] : summary.aggregates) {
        fmt::print(out, "{:<28} {:>8} {:>6} {:>9}\n", metric, fmt_opt(stat.mean), stat.count, stat.excluded);
    }

    auto prev = ws.previous_run_id(run.run_id);
    if (!prev) {
        fmt::print(out, "no previous run to compare against\n");
        return kClean;
    }
    auto old_run = ws.load_run(*prev);
    runner::DiffReport report;
    try {
        report = runner::diff_runs(old_run, run, cfg.defaults);
    } catch (const TestSetMismatch& e) {
        fmt::print(out, "not compared with {}: {}\n", *prev, e.what());
        return kClean;
    }
    fmt::print(out, "\nvs {}:\n", *prev);
    fmt::print(out, "{:<28} {:>9} {:>6} {:>11} {:>12} {:>9}\n", "metric", "tolerance", "regr", "improvements",
               "equivalent", "excluded");
    for (const auto& [metric, chart] : report.charts) {
        fmt::print(out, "{:<28} {:>9} {:>6} {:>11} {:>12} {:>9}\n", metric, cfg.defaults.tolerance_for(metric),
                   chart.regressions, chart.improvements, chart.equivalent, chart.excluded);
    }
    for (const auto& v : report.verdicts) {
        if (v.verdict != metrics::Verdict::Regression) continue;
        fmt::print(out, "regression: test {} {} {:.4f} -> {:.4f}\n", v.test_id, v.metric, v.old_score, v.new_score);
    }
    fmt::print(out, "{} regression(s)\n", report.total_regressions());
    return report.total_regressions() > 0 ? kRegressions : kClean;
}

struct ServeArgs {
    std::string config;
    std::string host = "127.0.0.1";
    int port = 8787;
    std::size_t async_threshold = 64;
};

int cmd_serve(const ServeArgs& args, const std::string& ws_root, std::ostream& out) {
    auto cfg = load_config(args.config);
    workspace::Workspace ws(ws_root);
    server::ServerOptions opts;
    opts.async_threshold = args.async_threshold;
    opts.config_root = std::filesystem::absolute(args.config).parent_path();
    server::ApiServer srv(ws, cfg, opts);
    int port = srv.bind(args.host, args.port);
    fmt::print(out, "listening on http://{}:{} (workspace {})\n", args.host, port, ws.root().string());
    out.flush();
    g_server = &srv;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    srv.listen();
    g_server = nullptr;
    return kClean;
}

struct BenchArgs {
    int n = 10;
    std::optional<double> v;
    std::uint64_t seed = 0;
    std::size_t cases = 100;
    bool hermetic = false;
    bool live = false;
    std::string config;
    bool json = false;
    std::string out;
    std::string dataset_out;
    std::size_t workers = 8;
};

int cmd_bench(const BenchArgs& args, std::ostream& out, std::ostream& err) {
    if (args.hermetic && args.live) {
        fmt::print(err, "--hermetic and --live are mutually exclusive\n");
        return kUsage;
    }
    synthbench::BenchOptions opts;
    opts.cases = args.cases;
    opts.n = args.n;
    opts.seed = args.seed;
    opts.workers = args.workers;
    if (args.v) {
        double tenths = *args.v * 10.0;
        if (std::abs(tenths - std::round(tenths)) > 1e-9 || std::round(tenths) < 6 || std::round(tenths) > 10) {
            fmt::print(err, "--v must be one of 0.6, 0.7, 0.8, 0.9, 1.0\n");
            return kUsage;
        }
        opts.v_tenths = static_cast<int>(std::round(tenths));
    }
    if (args.n < 1 || args.cases < 1) {
        fmt::print(err, "--n and --cases must be positive\n");
        return kUsage;
    }

    synthbench::BenchProviders roles;
    std::optional<provider::ProviderRegistry> registry;
    if (args.live) {
        if (args.config.empty()) {
            fmt::print(err, "--live needs -c <config> with writer, discovery_generator, discovery_selector and judge roles\n");
            return kUsage;
        }
        auto cfg = load_config(args.config);
        for (auto role : {config::kRoleWriter, config::kRoleGenerator, config::kRoleSelector, config::kRoleJudge}) {
            if (!cfg.roles.contains(std::string(role))) {
                fmt::print(err, "config lacks the '{}' role\n", role);
                return kUsage;
            }
        }
        registry = provider::build_registry(cfg);
        roles.writer = &registry->role(config::kRoleWriter);
        roles.generator = &registry->role(config::kRoleGenerator);
        roles.selector = &registry->role(config::kRoleSelector);
        roles.judge = &registry->role(config::kRoleJudge);
    }

    auto dataset = synthbench::build_dataset(opts, synthbench::default_pool(), roles.writer);
    if (!args.dataset_out.empty()) {
        std::ofstream f(args.dataset_out);
        f << synthbench::dataset_to_json(dataset).dump(2) << "\n";
        if (!f) throw IOError("cannot write '" + args.dataset_out + "'");
    }
    auto result = synthbench::run_bench(dataset, opts, roles);
    auto report = synthbench::to_json(result);
    if (!args.out.empty()) {
        std::ofstream f(args.out);
        f << report.dump(2) << "\n";
        if (!f) throw IOError("cannot write '" + args.out + "'");
    }
    if (args.json) {
        out << report.dump(2) << "\n";
    } else {
        out << synthbench::markdown_report(result);
    }
    return kClean;
}

struct DiscoverArgs {
    std::string run;
    std::string goal;
    std::string mode = "goal";
    std::string config;
    std::string a_provider, b_provider, a_prompt, b_prompt;
    std::string segment;
    std::size_t budget = 0;
};

int cmd_discover(const DiscoverArgs& args, const std::string& ws_root, std::ostream& out) {
    workspace::Workspace ws(ws_root);
    std::optional<config::EvalConfig> roles;
    if (!args.config.empty()) roles = load_config(args.config);
    json req = {{"mode", args.mode}, {"goal", args.goal}};
    auto side = [](const std::string& provider, const std::string& prompt) {
        json j = json::object();
        if (!provider.empty()) j["provider"] = provider;
        if (!prompt.empty()) j["prompt"] = prompt;
        return j;
    };
    req["a"] = side(args.a_provider, args.a_prompt);
    req["b"] = side(args.b_provider, args.b_prompt);
    if (!args.segment.empty()) req["segment"] = args.segment;
    if (args.budget > 0) req["budget"] = args.budget;
    auto result = server::discover(ws, args.run, req, roles,
                                   [](const config::EvalConfig& cfg) { return provider::build_registry(cfg); });
    for (const auto& w : result["warnings"]) spdlog::warn("{}", w.get<std::string>());
    for (const auto& d : result["descriptions"]) {
        fmt::print(out, "{}  {}\n", d["id"].get<std::string>(), d["text"].get<std::string>());
    }
    fmt::print(out, "{} description(s) from {} chunk(s), {} failed\n", result["descriptions"].size(),
               result["chunk_count"].get<std::size_t>(), result["failed_chunks"].get<std::size_t>());
    return kClean;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Regression testing for LLM migrations", "retain"};
    app.require_subcommand(1);
    std::string ws_root;
    bool verbose = false;
    app.add_option("--workspace", ws_root, "Workspace directory (default: $RETAIN_WORKSPACE or ./.retain)");
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Run the eval grid and gate on regressions vs the previous run");
    eval_cmd->add_option("-c,--config", eval.config, "Config file")->required();
    eval_cmd->add_option("--out", eval.out, "Workspace directory to write the run into");

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Serve the JSON API");
    serve_cmd->add_option("-c,--config", serve.config, "Config file")->required();
    serve_cmd->add_option("--host", serve.host, "Bind address");
    serve_cmd->add_option("--port", serve.port, "Port (0 picks a free one)");
    serve_cmd->add_option("--async-threshold", serve.async_threshold, "Grids above this many cells run in the background");

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "Benchmarks");
    bench_cmd->require_subcommand(1);
    auto* synth_cmd = bench_cmd->add_subcommand("synth", "Planted-difference discovery benchmark");
    synth_cmd->add_option("--n", bench.n, "Samples per corpus");
    synth_cmd->add_option("--v", bench.v, "Fixed prevalence in {0.6..1.0}; sampled per case when omitted");
    synth_cmd->add_option("--seed", bench.seed, "Dataset seed");
    synth_cmd->add_option("--cases", bench.cases, "Number of cases");
    synth_cmd->add_flag("--hermetic", bench.hermetic, "Marker-phrase corpora and scripted models (default)");
    synth_cmd->add_flag("--live", bench.live, "Use the config's writer/generator/selector/judge roles");
    synth_cmd->add_option("-c,--config", bench.config, "Config with roles (live mode)");
    synth_cmd->add_flag("--json", bench.json, "Print the JSON report instead of the table");
    synth_cmd->add_option("--out", bench.out, "Also write the JSON report here");
    synth_cmd->add_option("--dataset-out", bench.dataset_out, "Write the generated dataset here");
    synth_cmd->add_option("--workers", bench.workers, "Cases processed concurrently");

    DiscoverArgs disc;
    auto* disc_cmd = app.add_subcommand("discover", "Describe output differences between two sides of a run");
    disc_cmd->add_option("--run", disc.run, "Run id")->required();
    disc_cmd->add_option("--goal", disc.goal, "Question steering the generator");
    disc_cmd->add_option("--mode", disc.mode, "goal or baseline")->check(CLI::IsMember({"goal", "baseline"}));
    disc_cmd->add_option("-c,--config", disc.config, "Config supplying model roles");
    disc_cmd->add_option("--a-provider", disc.a_provider);
    disc_cmd->add_option("--b-provider", disc.b_provider);
    disc_cmd->add_option("--a-prompt", disc.a_prompt);
    disc_cmd->add_option("--b-prompt", disc.b_prompt);
    disc_cmd->add_option("--segment", disc.segment, "Restrict to a saved segment");
    disc_cmd->add_option("--budget", disc.budget, "Items per group per generator call");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? kClean : kUsage;
    }
    configure_logging(verbose);
    if (ws_root.empty()) ws_root = workspace::default_root().string();

    try {
        if (*eval_cmd) return cmd_eval(eval, ws_root, out);
        if (*serve_cmd) return cmd_serve(serve, ws_root, out);
        if (*synth_cmd) return cmd_bench(bench, out, err);
        if (*disc_cmd) return cmd_discover(disc, ws_root, out);
    } catch (const FileNotFound& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kUsage;
    } catch (const Error& e) {
        fmt::print(err, "error [{}]: {}\n", e.code(), e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kFailure;
    }
    return kUsage;
}

} // namespace retain::cli
