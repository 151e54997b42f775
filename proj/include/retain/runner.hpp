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

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "retain/config.hpp"
#include "retain/discovery.hpp"
#include "retain/metrics.hpp"
#include "retain/provider.hpp"

namespace retain::runner {

inline constexpr int kRunSchemaVersion = 1;

struct PromptRef {
    std::string id;
    int version = 1;

    auto operator<=>(const PromptRef&) const = default;
};

struct CellResult {
    PromptRef prompt;
    std::string provider_id;
    int test_id = 0;
    std::string output;
    std::int64_t latency_ms = 0;
    std::vector<metrics::MetricScore> scores;
    /// Provider failure for this cell; scores then carry error placeholders.
    std::optional<std::string> error;

    const metrics::MetricScore* score(std::string_view metric) const;
    bool operator==(const CellResult&) const = default;
};

struct RunRecord {
    int schema_version = kRunSchemaVersion;
    std::string run_id;
    std::string created_at;
    std::map<std::string, int> prompt_versions;
    /// Metric names scored in this run, in first-seen order.
    std::vector<std::string> metrics;
    std::vector<CellResult> cells;
    config::EvalConfig config_snapshot;
    /// Append-only; the rest of the record never changes after persist.
    std::vector<discovery::ErrorDescription> discoveries;

    std::set<int> test_ids() const;
    std::size_t error_count() const;
    bool operator==(const RunRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json config_to_json(const config::EvalConfig& cfg);
config::EvalConfig config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunRecord& run);
RunRecord run_from_json(const nlohmann::json& j);

nlohmann::json to_json(const discovery::ErrorDescription& d);
discovery::ErrorDescription description_from_json(const nlohmann::json& j);

nlohmann::json to_json(const metrics::AssertionMetric& a);
metrics::AssertionMetric assertion_from_json(const nlohmann::json& j);

/// Sorted keys, two-space indent, shortest round-trip float formatting,
/// trailing newline.
std::string canonical_dump(const nlohmann::json& j);
std::string serialize_run(const RunRecord& run);
RunRecord parse_run(std::string_view text);

/// Content address of a run: hash of its config snapshot plus timestamp.
std::string compute_run_id(const config::EvalConfig& snapshot, std::string_view created_at);

// ---------------------------------------------------------------------------
// Execution

struct RunOptions {
    /// Workspace assertions scored on every cell when active.
    std::vector<metrics::AssertionMetric> assertions;
    /// Runs with strictly more than this fraction of errored cells abort.
    double abort_fraction = 0.5;
    std::size_t max_workers = 16;
    int max_tokens = 1024;
    /// Timestamp override; defaults to now.
    std::optional<std::string> created_at;
};

/// Metric name for the i-th assertion of a test, disambiguated when a test
/// declares the same type more than once (`bleu`, `bleu#2`, ...).
std::vector<std::string> assertion_metric_names(const config::TestCase& test);

/// Executes the prompt x provider x test grid. Cells are ordered by
/// (prompt, provider, test) config position. Throws AbortedRun.
RunRecord execute_run(const config::EvalConfig& cfg, const provider::ProviderRegistry& providers,
                      const RunOptions& opts = {});

// ---------------------------------------------------------------------------
// Comparison

/// Picks the cells of a run that represent one side of a comparison. Unset
/// fields match everything; a test's score is the mean over matched cells.
struct CellSelector {
    std::optional<std::string> prompt_id;
    std::optional<std::string> provider_id;

    bool matches(const CellResult& cell) const;
};

/// metric -> test id -> score, over non-errored cells.
using ScoreTable = std::map<std::string, std::map<int, double>>;

ScoreTable collect_scores(const RunRecord& run, const CellSelector& sel = {});

struct MetricChart {
    std::size_t regressions = 0;
    std::size_t improvements = 0;
    std::size_t equivalent = 0;
    /// Tests without a usable score on one side.
    std::size_t excluded = 0;
    std::optional<double> old_mean;
    std::optional<double> new_mean;

    std::optional<double> delta() const;
};

struct DiffReport {
    std::vector<metrics::RegressionVerdict> verdicts;
    std::map<std::string, MetricChart> charts;
    std::size_t test_count = 0;

    std::size_t total_regressions() const;
};

/// Per (test, metric) verdicts for metrics present on both sides. Throws
/// TestSetMismatch when the runs' test ids differ.
DiffReport diff_runs(const RunRecord& old_run, const RunRecord& new_run, const config::MetricDefaults& tolerances,
                     const CellSelector& old_sel = {}, const CellSelector& new_sel = {});

enum class FilterMode { AllExceeding, RegressionsOnly, ImprovementsOnly };

FilterMode parse_filter_mode(std::string_view s);
std::string_view to_string(FilterMode m);

/// test id -> (old score, new score)
using ScorePairs = std::map<int, std::pair<double, double>>;

std::vector<int> filter_deltas(const ScorePairs& pairs, double epsilon, FilterMode mode);

/// Throws UnknownMetric when `metric` is missing on either side.
std::vector<int> filter_by_tolerance(const RunRecord& old_run, const RunRecord& new_run, const std::string& metric,
                                     double epsilon, FilterMode mode, const CellSelector& old_sel = {},
                                     const CellSelector& new_sel = {});

// ---------------------------------------------------------------------------
// Segments

struct Segment {
    std::string name;
    std::vector<int> test_ids;

    bool operator==(const Segment&) const = default;
};

/// Throws StaleSegment when any id is absent from the run.
std::vector<int> resolve_segment_ids(const Segment& seg, const RunRecord& run);

std::vector<CellResult> cells_for_tests(const RunRecord& run, const std::vector<int>& test_ids);

} // namespace retain::runner
