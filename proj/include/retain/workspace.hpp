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

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "retain/config.hpp"
#include "retain/metrics.hpp"
#include "retain/runner.hpp"

namespace retain::workspace {

struct PromptVersion {
    std::string id;
    int version = 1;
    std::string text;
    std::string created_at;

    bool operator==(const PromptVersion&) const = default;
};

struct RunSummary {
    std::string run_id;
    std::string created_at;
    std::map<std::string, int> prompt_versions;
    std::vector<std::string> providers;
    std::size_t cell_count = 0;
    std::size_t error_count = 0;
    std::map<std::string, metrics::AggregateStat> aggregates;
};

RunSummary summarize(const runner::RunRecord& run);
nlohmann::json to_json(const RunSummary& s);

/// Directory store: `runs/<run_id>.json` plus a `workspace.json` manifest
/// holding run order, prompt history, segments, assertions, and the error
/// index. Mutations are serialised; reads run concurrently with each other.
class Workspace {
public:
    /// Loads an existing manifest if present. Nothing is written until the
    /// first mutation.
    explicit Workspace(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }

    // runs
    /// Writes the run document. Re-persisting an identical run is a no-op;
    /// a different document under the same id raises Conflict. Throws IOError.
    std::string persist_run(const runner::RunRecord& run);
    runner::RunRecord load_run(const std::string& run_id) const;
    bool has_run(const std::string& run_id) const;
    /// Ordered by created_at, ties in persist order (newest last).
    std::vector<RunSummary> list_runs() const;
    std::optional<std::string> latest_run_id() const;
    /// Run persisted immediately before `run_id`, if any.
    std::optional<std::string> previous_run_id(const std::string& run_id) const;

    /// Appends descriptions to a run, skipping ids it already holds. Returns
    /// the run's full discovery list.
    std::vector<discovery::ErrorDescription> append_discoveries(const std::string& run_id,
                                                                const std::vector<discovery::ErrorDescription>& descs);
    /// Records the support set of an existing description.
    discovery::ErrorDescription set_support(const std::string& run_id, const std::string& error_id,
                                            const std::set<discovery::SupportEntry>& support);
    /// (run id, description) for a known error id; throws NotFound.
    std::pair<std::string, discovery::ErrorDescription> find_error(const std::string& error_id) const;

    // prompts
    PromptVersion add_prompt_version(const std::string& id, const std::string& text);
    std::vector<PromptVersion> prompt_history(const std::string& id) const;
    std::map<std::string, std::vector<PromptVersion>> prompts() const;

    /// Registers the config's prompts and returns the config with each
    /// prompt set to the workspace version to run: the pinned version when
    /// given, otherwise the latest. Config text that matches no stored
    /// version is recorded as a new version first.
    config::EvalConfig apply_prompt_versions(const config::EvalConfig& cfg,
                                             const std::map<std::string, int>& pins = {});

    // segments
    /// Saving the same ids under a name is idempotent; different ids raise
    /// Conflict. When `against` is given the ids are checked for staleness.
    void save_segment(const runner::Segment& seg, const runner::RunRecord* against = nullptr);
    runner::Segment segment(const std::string& name) const;
    std::vector<runner::Segment> segments() const;
    std::vector<int> resolve_segment(const std::string& name, const runner::RunRecord& run) const;

    // assertions
    /// Promotes an error description into an active assertion and links it.
    metrics::AssertionMetric promote_error(const std::string& error_id, const std::string& judge_provider_id);
    void deactivate_assertion(const std::string& assertion_id);
    std::vector<metrics::AssertionMetric> assertions() const;
    std::vector<metrics::AssertionMetric> active_assertions() const;

private:
    std::filesystem::path run_path(const std::string& run_id) const;
    void save_manifest_locked();
    void write_file_atomic(const std::filesystem::path& path, const std::string& content);
    runner::RunRecord load_run_unlocked(const std::string& run_id) const;

    std::filesystem::path root_;
    mutable std::shared_mutex mu_;

    std::vector<std::string> run_order_;
    std::map<std::string, std::vector<PromptVersion>> prompts_;
    std::map<std::string, runner::Segment> segments_;
    std::vector<metrics::AssertionMetric> assertions_;
    std::map<std::string, std::string> error_index_;
};

/// `RETAIN_WORKSPACE` when set, otherwise `.retain` in the working directory.
std::filesystem::path default_root();

} // namespace retain::workspace
