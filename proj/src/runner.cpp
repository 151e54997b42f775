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

#include "retain/runner.hpp"

#include <algorithm>
#include <mutex>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "retain/errors.hpp"
#include "retain/parallel.hpp"
#include "retain/text.hpp"

namespace retain::runner {

const metrics::MetricScore* CellResult::score(std::string_view metric) const {
    for (const auto& s : scores) {
        if (s.metric == metric) return &s;
    }
    return nullptr;
}

std::set<int> RunRecord::test_ids() const {
    std::set<int> ids;
    for (const auto& c : cells) ids.insert(c.test_id);
    return ids;
}

std::size_t RunRecord::error_count() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const CellResult& c) {
        return c.error.has_value();
    }));
}

std::vector<std::string> assertion_metric_names(const config::TestCase& test) {
    std::vector<std::string> names;
    std::map<std::string, int> seen;
    for (const auto& a : test.assertions) {
        auto base = std::string(config::to_string(a.type));
        int n = ++seen[base];
        names.push_back(n == 1 ? base : fmt::format("{}#{}", base, n));
    }
    return names;
}

namespace {

/// Fallback embedder for `similarity` when no `embedder` role is configured.
provider::Provider& fallback_embedder() {
    static provider::ScriptedProvider hashed("builtin:hash-embedder",
                                             {provider::ScriptRule{provider::MatchKind::Any, "", "", std::nullopt, 0}},
                                             256, 64);
    return hashed;
}

metrics::MetricScore error_score(std::string metric, std::string message) {
    return metrics::MetricScore{std::move(metric), 0.0, std::nullopt, std::move(message)};
}

struct GridCell {
    std::size_t prompt;
    std::size_t provider;
    std::size_t test;
};

} // namespace

RunRecord execute_run(const config::EvalConfig& cfg, const provider::ProviderRegistry& providers,
                      const RunOptions& opts) {
    config::validate(cfg);
    for (const auto& p : cfg.providers) providers.get(p.id);

    provider::Provider* embedder = nullptr;
    bool needs_embedder = false;
    for (const auto& t : cfg.tests) {
        for (const auto& a : t.assertions) needs_embedder |= a.type == config::AssertionType::Similarity;
    }
    if (needs_embedder) {
        if (providers.has_role(config::kRoleEmbedder)) {
            embedder = &providers.role(config::kRoleEmbedder);
        } else {
            spdlog::warn("no '{}' role configured; similarity uses the built-in hashed embedder",
                         config::kRoleEmbedder);
            embedder = &fallback_embedder();
        }
    }

    std::vector<metrics::AssertionMetric> active;
    for (const auto& a : opts.assertions) {
        if (a.active) active.push_back(a);
    }

    std::vector<GridCell> grid;
    for (std::size_t p = 0; p < cfg.prompts.size(); ++p) {
        for (std::size_t m = 0; m < cfg.providers.size(); ++m) {
            for (std::size_t t = 0; t < cfg.tests.size(); ++t) grid.push_back({p, m, t});
        }
    }

    std::vector<CellResult> cells(grid.size());
    parallel_for(grid.size(), opts.max_workers, [&](std::size_t i) {
        const auto& prompt = cfg.prompts[grid[i].prompt];
        const auto& spec = cfg.providers[grid[i].provider];
        const auto& test = cfg.tests[grid[i].test];
        auto names = assertion_metric_names(test);

        CellResult& cell = cells[i];
        cell.prompt = {prompt.id, prompt.version};
        cell.provider_id = spec.id;
        cell.test_id = test.id;

        try {
            auto& model = providers.get(spec.id);
            provider::CompletionRequest req{spec.id, config::compose_prompt(prompt, test.vars),
                                            model.grid_temperature(), opts.max_tokens};
            auto result = model.complete(req);
            cell.output = std::move(result.text);
            cell.latency_ms = result.latency_ms;
        } catch (const std::exception& e) {
            cell.error = e.what();
            for (const auto& n : names) cell.scores.push_back(error_score(n, "cell failed: " + *cell.error));
            for (const auto& a : active) cell.scores.push_back(error_score(a.metric_name(), "cell failed: " + *cell.error));
            return;
        }

        for (std::size_t k = 0; k < test.assertions.size(); ++k) {
            const auto& a = test.assertions[k];
            try {
                switch (a.type) {
                case config::AssertionType::Bleu:
                    cell.scores.push_back({names[k], metrics::bleu(cell.output, a.value), std::nullopt, std::nullopt});
                    break;
                case config::AssertionType::Similarity:
                    cell.scores.push_back(
                        {names[k], metrics::similarity(cell.output, a.value, *embedder), std::nullopt, std::nullopt});
                    break;
                case config::AssertionType::LlmJudge: {
                    auto& judge = a.provider ? providers.get(*a.provider) : providers.role(config::kRoleJudge);
                    metrics::AssertionMetric rubric{names[k], a.value, judge.id(), true, std::nullopt};
                    auto s = metrics::llm_judge(cell.output, rubric, judge);
                    s.metric = names[k];
                    cell.scores.push_back(std::move(s));
                    break;
                }
                }
            } catch (const std::exception& e) {
                cell.scores.push_back(error_score(names[k], e.what()));
            }
        }
        for (const auto& a : active) {
            try {
                cell.scores.push_back(metrics::llm_judge(cell.output, a, providers.get(a.judge_provider_id)));
            } catch (const std::exception& e) {
                cell.scores.push_back(error_score(a.metric_name(), e.what()));
            }
        }
    });

    RunRecord run;
    run.config_snapshot = cfg;
    run.created_at = opts.created_at.value_or(text::utc_timestamp());
    run.run_id = compute_run_id(cfg, run.created_at);
    for (const auto& p : cfg.prompts) run.prompt_versions[p.id] = p.version;
    for (const auto& c : cells) {
        for (const auto& s : c.scores) {
            if (std::find(run.metrics.begin(), run.metrics.end(), s.metric) == run.metrics.end()) {
                run.metrics.push_back(s.metric);
            }
        }
    }
    run.cells = std::move(cells);

    const auto errored = run.error_count();
    if (static_cast<double>(errored) > opts.abort_fraction * static_cast<double>(run.cells.size())) {
        std::string first;
        for (const auto& c : run.cells) {
            if (c.error) {
                first = *c.error;
                break;
            }
        }
        throw AbortedRun(fmt::format("{} of {} cells failed (first: {})", errored, run.cells.size(), first));
    }
    if (errored > 0) spdlog::warn("run {}: {} of {} cells failed", run.run_id, errored, run.cells.size());
    return run;
}

// ---------------------------------------------------------------------------

bool CellSelector::matches(const CellResult& cell) const {
    if (prompt_id && cell.prompt.id != *prompt_id) return false;
    if (provider_id && cell.provider_id != *provider_id) return false;
    return true;
}

ScoreTable collect_scores(const RunRecord& run, const CellSelector& sel) {
    std::map<std::string, std::map<int, std::pair<double, int>>> sums;
    for (const auto& c : run.cells) {
        if (!sel.matches(c)) continue;
        for (const auto& s : c.scores) {
            if (!s.ok()) continue;
            auto& [sum, n] = sums[s.metric][c.test_id];
            sum += s.value;
            ++n;
        }
    }
    ScoreTable table;
    for (const auto& [metric, per_test] : sums) {
        for (const auto& [test, acc] : per_test) table[metric][test] = acc.first / acc.second;
    }
    return table;
}

std::optional<double> MetricChart::delta() const {
    if (!old_mean || !new_mean) return std::nullopt;
    return *new_mean - *old_mean;
}

std::size_t DiffReport::total_regressions() const {
    std::size_t n = 0;
    for (const auto& [m, c] : charts) n += c.regressions;
    return n;
}

namespace {

void require_same_tests(const RunRecord& old_run, const RunRecord& new_run) {
    if (old_run.test_ids() != new_run.test_ids()) {
        throw TestSetMismatch(fmt::format("runs {} and {} have different test sets", old_run.run_id, new_run.run_id));
    }
}

/// metric -> tests that carry it at all, errored or not.
std::map<std::string, std::set<int>> metric_tests_seen(const RunRecord& run, const CellSelector& sel) {
    std::map<std::string, std::set<int>> seen;
    for (const auto& c : run.cells) {
        if (!sel.matches(c)) continue;
        for (const auto& s : c.scores) seen[s.metric].insert(c.test_id);
    }
    return seen;
}

std::optional<double> mean_of(const std::map<int, double>& scores) {
    if (scores.empty()) return std::nullopt;
    double sum = 0.0;
    for (const auto& [t, v] : scores) sum += v;
    return sum / static_cast<double>(scores.size());
}

} // namespace

DiffReport diff_runs(const RunRecord& old_run, const RunRecord& new_run, const config::MetricDefaults& tolerances,
                     const CellSelector& old_sel, const CellSelector& new_sel) {
    require_same_tests(old_run, new_run);
    auto old_scores = collect_scores(old_run, old_sel);
    auto new_scores = collect_scores(new_run, new_sel);
    auto old_seen = metric_tests_seen(old_run, old_sel);
    auto new_seen = metric_tests_seen(new_run, new_sel);

    DiffReport report;
    const auto tests = old_run.test_ids();
    report.test_count = tests.size();
    for (const auto& [metric, old_tests] : old_seen) {
        auto seen = new_seen.find(metric);
        if (seen == new_seen.end()) continue;
        metrics::Tolerance tol(metric, tolerances.tolerance_for(metric));
        const auto& olds = old_scores[metric];
        const auto& news = new_scores[metric];
        MetricChart chart;
        chart.old_mean = mean_of(olds);
        chart.new_mean = mean_of(news);
        for (int t : tests) {
            auto o = olds.find(t);
            auto n = news.find(t);
            if (o == olds.end() || n == news.end()) {
                // Tests that never declare the metric are not part of its chart.
                if (old_tests.contains(t) || seen->second.contains(t)) ++chart.excluded;
                continue;
            }
            auto v = metrics::classify_regression(t, o->second, n->second, tol);
            switch (v.verdict) {
            case metrics::Verdict::Regression: ++chart.regressions; break;
            case metrics::Verdict::Improvement: ++chart.improvements; break;
            case metrics::Verdict::Equivalent: ++chart.equivalent; break;
            }
            report.verdicts.push_back(std::move(v));
        }
        report.charts.emplace(metric, chart);
    }
    return report;
}

FilterMode parse_filter_mode(std::string_view s) {
    if (s == "all-exceeding" || s.empty()) return FilterMode::AllExceeding;
    if (s == "regressions-only") return FilterMode::RegressionsOnly;
    if (s == "improvements-only") return FilterMode::ImprovementsOnly;
    throw ValidationError("unknown filter mode '" + std::string(s) + "'");
}

std::string_view to_string(FilterMode m) {
    switch (m) {
    case FilterMode::AllExceeding: return "all-exceeding";
    case FilterMode::RegressionsOnly: return "regressions-only";
    case FilterMode::ImprovementsOnly: return "improvements-only";
    }
    return "unknown";
}

std::vector<int> filter_deltas(const ScorePairs& pairs, double epsilon, FilterMode mode) {
    metrics::Tolerance tol("filter", epsilon);
    std::vector<int> ids;
    for (const auto& [test, scores] : pairs) {
        auto v = metrics::classify_delta(scores.first, scores.second, tol.epsilon());
        bool keep = false;
        switch (mode) {
        case FilterMode::AllExceeding: keep = v != metrics::Verdict::Equivalent; break;
        case FilterMode::RegressionsOnly: keep = v == metrics::Verdict::Regression; break;
        case FilterMode::ImprovementsOnly: keep = v == metrics::Verdict::Improvement; break;
        }
        if (keep) ids.push_back(test);
    }
    return ids;
}

std::vector<int> filter_by_tolerance(const RunRecord& old_run, const RunRecord& new_run, const std::string& metric,
                                     double epsilon, FilterMode mode, const CellSelector& old_sel,
                                     const CellSelector& new_sel) {
    if (!metric_tests_seen(old_run, old_sel).contains(metric) || !metric_tests_seen(new_run, new_sel).contains(metric)) {
        throw UnknownMetric("metric '" + metric + "' is not present in both runs");
    }
    auto olds = collect_scores(old_run, old_sel)[metric];
    auto news = collect_scores(new_run, new_sel)[metric];
    ScorePairs pairs;
    for (const auto& [t, o] : olds) {
        auto n = news.find(t);
        if (n != news.end()) pairs[t] = {o, n->second};
    }
    return filter_deltas(pairs, epsilon, mode);
}

std::vector<int> resolve_segment_ids(const Segment& seg, const RunRecord& run) {
    auto ids = run.test_ids();
    for (int t : seg.test_ids) {
        if (!ids.contains(t)) {
            throw StaleSegment(fmt::format("segment '{}' references test {} absent from run {}", seg.name, t, run.run_id));
        }
    }
    return seg.test_ids;
}

std::vector<CellResult> cells_for_tests(const RunRecord& run, const std::vector<int>& test_ids) {
    std::set<int> wanted(test_ids.begin(), test_ids.end());
    std::vector<CellResult> out;
    for (const auto& c : run.cells) {
        if (wanted.contains(c.test_id)) out.push_back(c);
    }
    return out;
}

} // namespace retain::runner
