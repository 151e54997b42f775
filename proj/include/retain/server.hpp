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

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "retain/config.hpp"
#include "retain/provider.hpp"
#include "retain/runner.hpp"
#include "retain/workspace.hpp"

namespace retain::server {

/// Body of every non-2xx response.
struct ApiError {
    int status = 500;
    std::string code;
    std::string message;

    nlohmann::json to_json() const;
};

/// HTTP status for a library error code.
int status_for(std::string_view code);

using RegistryFactory = std::function<provider::ProviderRegistry(const config::EvalConfig&)>;

struct ServerOptions {
    /// Grids with more cells than this run in the background (202 + handle).
    std::size_t async_threshold = 64;
    runner::RunOptions run;
    /// Base directory for `config_path` and `file://` references in inline
    /// configs.
    std::filesystem::path config_root = std::filesystem::current_path();
    RegistryFactory make_registry = [](const config::EvalConfig& cfg) { return provider::build_registry(cfg); };
};

/// Goal-driven or baseline discovery between two sides of a stored run,
/// persisting the descriptions. Request fields: goal, mode ("goal" |
/// "baseline"), a/b ({provider, prompt}), segment, filter ({metric,
/// tolerance, mode}), budget. `role_source` supplies roles the run's
/// snapshot lacks.
nlohmann::json discover(workspace::Workspace& ws, const std::string& run_id, const nlohmann::json& request,
                        const std::optional<config::EvalConfig>& role_source, const RegistryFactory& make_registry);

/// JSON REST API over a workspace. Routes:
///   POST /api/runs, GET /api/runs, GET /api/runs/compare, GET /api/runs/{id},
///   GET /api/jobs/{handle},
///   POST /api/runs/{id}/discover, GET /api/runs/{id}/errors,
///   POST /api/runs/{id}/errors/{eid}/support,
///   GET|POST /api/assertions, DELETE /api/assertions/{id},
///   GET|POST /api/prompts, GET|POST /api/prompts/{id},
///   GET|POST /api/segments, GET /api/segments/{name}
class ApiServer {
public:
    /// `default_config` serves POST /api/runs without a config and supplies
    /// roles missing from a run's snapshot.
    ApiServer(workspace::Workspace& ws, std::optional<config::EvalConfig> default_config, ServerOptions opts = {});
    ~ApiServer();

    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    /// Binds; port 0 picks a free one. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop(). Call after bind().
    void listen();
    /// bind() + listen() on a background thread.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace retain::server
