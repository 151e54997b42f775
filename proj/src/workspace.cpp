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

#include "retain/workspace.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "retain/discovery.hpp"
#include "retain/errors.hpp"
#include "retain/text.hpp"

namespace retain::workspace {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kManifestSchemaVersion = 1;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot read '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

bool valid_run_id(const std::string& id) {
    return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '-' || c == '_';
    });
}

} // namespace

RunSummary summarize(const runner::RunRecord& run) {
    RunSummary s;
    s.run_id = run.run_id;
    s.created_at = run.created_at;
    s.prompt_versions = run.prompt_versions;
    for (const auto& p : run.config_snapshot.providers) s.providers.push_back(p.id);
    s.cell_count = run.cells.size();
    s.error_count = run.error_count();
    std::vector<metrics::MetricScore> all;
    for (const auto& c : run.cells) all.insert(all.end(), c.scores.begin(), c.scores.end());
    if (!all.empty()) s.aggregates = metrics::aggregate(all);
    return s;
}

json to_json(const RunSummary& s) {
    json aggregates = json::object();
    for (const auto& [metric, stat] : s.aggregates) {
        aggregates[metric] = {{"mean", stat.mean ? json(*stat.mean) : json(nullptr)},
                              {"count", stat.count},
                              {"excluded", stat.excluded}};
    }
    return {
        {"run_id", s.run_id},
        {"created_at", s.created_at},
        {"prompt_versions", s.prompt_versions},
        {"providers", s.providers},
        {"cell_count", s.cell_count},
        {"error_count", s.error_count},
        {"aggregates", std::move(aggregates)},
    };
}

Workspace::Workspace(fs::path root) : root_(std::move(root)) {
    auto manifest = root_ / "workspace.json";
    if (!fs::exists(manifest)) return;
    json j;
    try {
        j = json::parse(read_file(manifest));
    } catch (const json::exception& e) {
        throw IOError("corrupt workspace manifest: " + std::string(e.what()));
    }
    run_order_ = j.value("runs", std::vector<std::string>{});
    const json prompts = j.value("prompts", json::object());
    const json segments = j.value("segments", json::object());
    const json assertions = j.value("assertions", json::array());
    for (const auto& [id, versions] : prompts.items()) {
        for (const auto& v : versions) {
            prompts_[id].push_back({id, v.at("version").get<int>(), v.at("text").get<std::string>(),
                                    v.value("created_at", "")});
        }
    }
    for (const auto& [name, ids] : segments.items()) {
        segments_[name] = runner::Segment{name, ids.get<std::vector<int>>()};
    }
    for (const auto& a : assertions) assertions_.push_back(runner::assertion_from_json(a));
    error_index_ = j.value("errors", std::map<std::string, std::string>{});
}

fs::path Workspace::run_path(const std::string& run_id) const {
    if (!valid_run_id(run_id)) throw UnknownRun("invalid run id '" + run_id + "'");
    return root_ / "runs" / (run_id + ".json");
}

void Workspace::write_file_atomic(const fs::path& path, const std::string& content) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IOError("cannot create '" + path.parent_path().string() + "': " + ec.message());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IOError("cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) throw IOError("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, path, ec);
    if (ec) throw IOError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

void Workspace::save_manifest_locked() {
    json prompts = json::object();
    for (const auto& [id, versions] : prompts_) {
        json list = json::array();
        for (const auto& v : versions) {
            list.push_back({{"version", v.version}, {"text", v.text}, {"created_at", v.created_at}});
        }
        prompts[id] = std::move(list);
    }
    json segments = json::object();
    for (const auto& [name, seg] : segments_) segments[name] = seg.test_ids;
    json assertions = json::array();
    for (const auto& a : assertions_) assertions.push_back(runner::to_json(a));
    json j = {
        {"schema_version", kManifestSchemaVersion},
        {"runs", run_order_},
        {"prompts", std::move(prompts)},
        {"segments", std::move(segments)},
        {"assertions", std::move(assertions)},
        {"errors", error_index_},
    };
    write_file_atomic(root_ / "workspace.json", runner::canonical_dump(j));
}

std::string Workspace::persist_run(const runner::RunRecord& run) {
    std::unique_lock lock(mu_);
    auto path = run_path(run.run_id);
    auto doc = runner::serialize_run(run);
    if (fs::exists(path)) {
        if (read_file(path) == doc) return run.run_id;
        throw Conflict("run '" + run.run_id + "' already exists with different content");
    }
    write_file_atomic(path, doc);
    if (std::find(run_order_.begin(), run_order_.end(), run.run_id) == run_order_.end()) {
        run_order_.push_back(run.run_id);
    }
    for (const auto& d : run.discoveries) error_index_[d.id] = run.run_id;
    save_manifest_locked();
    return run.run_id;
}

runner::RunRecord Workspace::load_run_unlocked(const std::string& run_id) const {
    auto path = run_path(run_id);
    if (!fs::exists(path)) throw UnknownRun("no run '" + run_id + "'");
    return runner::parse_run(read_file(path));
}

runner::RunRecord Workspace::load_run(const std::string& run_id) const {
    std::shared_lock lock(mu_);
    return load_run_unlocked(run_id);
}

bool Workspace::has_run(const std::string& run_id) const {
    std::shared_lock lock(mu_);
    return valid_run_id(run_id) && fs::exists(run_path(run_id));
}

std::vector<RunSummary> Workspace::list_runs() const {
    std::shared_lock lock(mu_);
    std::vector<RunSummary> out;
    for (const auto& id : run_order_) out.push_back(summarize(load_run_unlocked(id)));
    std::stable_sort(out.begin(), out.end(),
                     [](const RunSummary& a, const RunSummary& b) { return a.created_at < b.created_at; });
    return out;
}

std::optional<std::string> Workspace::latest_run_id() const {
    auto runs = list_runs();
    if (runs.empty()) return std::nullopt;
    return runs.back().run_id;
}

std::optional<std::string> Workspace::previous_run_id(const std::string& run_id) const {
    auto runs = list_runs();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        if (runs[i].run_id == run_id) {
            if (i == 0) return std::nullopt;
            return runs[i - 1].run_id;
        }
    }
    return std::nullopt;
}

std::vector<discovery::ErrorDescription> Workspace::append_discoveries(
    const std::string& run_id, const std::vector<discovery::ErrorDescription>& descs) {
    std::unique_lock lock(mu_);
    auto run = load_run_unlocked(run_id);
    bool changed = false;
    for (const auto& d : descs) {
        auto same = [&](const discovery::ErrorDescription& e) { return e.id == d.id; };
        if (std::any_of(run.discoveries.begin(), run.discoveries.end(), same)) continue;
        run.discoveries.push_back(d);
        error_index_[d.id] = run_id;
        changed = true;
    }
    if (changed) {
        write_file_atomic(run_path(run_id), runner::serialize_run(run));
        save_manifest_locked();
    }
    return run.discoveries;
}

discovery::ErrorDescription Workspace::set_support(const std::string& run_id, const std::string& error_id,
                                                   const std::set<discovery::SupportEntry>& support) {
    std::unique_lock lock(mu_);
    auto run = load_run_unlocked(run_id);
    for (auto& d : run.discoveries) {
        if (d.id != error_id) continue;
        if (d.support != support) {
            d.support = support;
            write_file_atomic(run_path(run_id), runner::serialize_run(run));
        }
        return d;
    }
    throw NotFound("no error '" + error_id + "' in run '" + run_id + "'");
}

std::pair<std::string, discovery::ErrorDescription> Workspace::find_error(const std::string& error_id) const {
    std::shared_lock lock(mu_);
    auto it = error_index_.find(error_id);
    if (it == error_index_.end()) throw NotFound("no error '" + error_id + "'");
    auto run = load_run_unlocked(it->second);
    for (const auto& d : run.discoveries) {
        if (d.id == error_id) return {run.run_id, d};
    }
    throw NotFound("no error '" + error_id + "'");
}

PromptVersion Workspace::add_prompt_version(const std::string& id, const std::string& text) {
    if (id.empty()) throw ValidationError("prompt id must be non-empty");
    std::unique_lock lock(mu_);
    auto& history = prompts_[id];
    PromptVersion v{id, history.empty() ? 1 : history.back().version + 1, text, text::utc_timestamp()};
    history.push_back(v);
    save_manifest_locked();
    return v;
}

std::vector<PromptVersion> Workspace::prompt_history(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = prompts_.find(id);
    if (it == prompts_.end()) throw NotFound("no prompt '" + id + "'");
    return it->second;
}

std::map<std::string, std::vector<PromptVersion>> Workspace::prompts() const {
    std::shared_lock lock(mu_);
    return prompts_;
}

config::EvalConfig Workspace::apply_prompt_versions(const config::EvalConfig& cfg,
                                                    const std::map<std::string, int>& pins) {
    std::unique_lock lock(mu_);
    config::EvalConfig out = cfg;
    bool changed = false;
    for (auto& p : out.prompts) {
        auto& history = prompts_[p.id];
        bool known = std::any_of(history.begin(), history.end(), [&](const PromptVersion& v) { return v.text == p.text; });
        if (!known) {
            history.push_back({p.id, history.empty() ? 1 : history.back().version + 1, p.text, text::utc_timestamp()});
            changed = true;
        }
        const PromptVersion* chosen = &history.back();
        if (auto pin = pins.find(p.id); pin != pins.end()) {
            auto it = std::find_if(history.begin(), history.end(),
                                   [&](const PromptVersion& v) { return v.version == pin->second; });
            if (it == history.end()) {
                throw NotFound(fmt::format("prompt '{}' has no version {}", p.id, pin->second));
            }
            chosen = &*it;
        }
        p.text = chosen->text;
        p.version = chosen->version;
    }
    if (changed) save_manifest_locked();
    config::validate(out);
    return out;
}

void Workspace::save_segment(const runner::Segment& seg, const runner::RunRecord* against) {
    if (seg.name.empty()) throw ValidationError("segment name must be non-empty");
    if (against) runner::resolve_segment_ids(seg, *against);
    std::unique_lock lock(mu_);
    auto it = segments_.find(seg.name);
    if (it != segments_.end()) {
        if (it->second.test_ids == seg.test_ids) return;
        throw Conflict("segment '" + seg.name + "' already exists with different ids");
    }
    segments_[seg.name] = seg;
    save_manifest_locked();
}

runner::Segment Workspace::segment(const std::string& name) const {
    std::shared_lock lock(mu_);
    auto it = segments_.find(name);
    if (it == segments_.end()) throw UnknownSegment("no segment '" + name + "'");
    return it->second;
}

std::vector<runner::Segment> Workspace::segments() const {
    std::shared_lock lock(mu_);
    std::vector<runner::Segment> out;
    for (const auto& [name, seg] : segments_) out.push_back(seg);
    return out;
}

std::vector<int> Workspace::resolve_segment(const std::string& name, const runner::RunRecord& run) const {
    return runner::resolve_segment_ids(segment(name), run);
}

metrics::AssertionMetric Workspace::promote_error(const std::string& error_id, const std::string& judge_provider_id) {
    std::unique_lock lock(mu_);
    auto idx = error_index_.find(error_id);
    if (idx == error_index_.end()) throw NotFound("no error '" + error_id + "'");
    auto run = load_run_unlocked(idx->second);
    for (auto& d : run.discoveries) {
        if (d.id != error_id) continue;
        auto assertion = discovery::promote_to_assertion(d, judge_provider_id);
        if (std::any_of(assertions_.begin(), assertions_.end(),
                        [&](const metrics::AssertionMetric& a) { return a.id == assertion.id; })) {
            throw AlreadyPromoted("assertion '" + assertion.id + "' already exists");
        }
        write_file_atomic(run_path(run.run_id), runner::serialize_run(run));
        assertions_.push_back(assertion);
        save_manifest_locked();
        return assertion;
    }
    throw NotFound("no error '" + error_id + "'");
}

void Workspace::deactivate_assertion(const std::string& assertion_id) {
    std::unique_lock lock(mu_);
    for (auto& a : assertions_) {
        if (a.id != assertion_id) continue;
        if (a.active) {
            a.active = false;
            save_manifest_locked();
        }
        return;
    }
    throw NotFound("no assertion '" + assertion_id + "'");
}

std::vector<metrics::AssertionMetric> Workspace::assertions() const {
    std::shared_lock lock(mu_);
    return assertions_;
}

std::vector<metrics::AssertionMetric> Workspace::active_assertions() const {
    std::shared_lock lock(mu_);
    std::vector<metrics::AssertionMetric> out;
    for (const auto& a : assertions_) {
        if (a.active) out.push_back(a);
    }
    return out;
}

fs::path default_root() {
    if (const char* env = std::getenv("RETAIN_WORKSPACE"); env != nullptr && *env != '\0') return fs::path(env);
    return fs::current_path() / ".retain";
}

} // namespace retain::workspace
