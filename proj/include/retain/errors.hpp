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

#include <stdexcept>
#include <string>

namespace retain {

/// Base for every error the library raises. `code()` is a stable,
/// machine-readable identifier (e.g. `config.invalid`) that the HTTP layer
/// forwards verbatim in ApiError bodies.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define RETAIN_DEFINE_ERROR(Name, Code)                                        \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& message) : Error(Code, message) {}   \
    }

// config
RETAIN_DEFINE_ERROR(SyntaxError, "config.syntax");
RETAIN_DEFINE_ERROR(ValidationError, "config.invalid");
RETAIN_DEFINE_ERROR(MissingVar, "config.missing_var");

class FileNotFound : public Error {
public:
    FileNotFound(std::string var, std::string path)
        : Error("config.file_not_found",
                "var '" + var + "' references missing file '" + path + "'"),
          var_(std::move(var)), path_(std::move(path)) {}

    const std::string& var() const noexcept { return var_; }
    const std::string& path() const noexcept { return path_; }

private:
    std::string var_;
    std::string path_;
};

// provider
RETAIN_DEFINE_ERROR(UnknownProvider, "provider.unknown");
RETAIN_DEFINE_ERROR(AuthError, "provider.auth");
RETAIN_DEFINE_ERROR(RateLimited, "provider.rate_limited");
RETAIN_DEFINE_ERROR(TransportError, "provider.transport");
RETAIN_DEFINE_ERROR(Timeout, "provider.timeout");
RETAIN_DEFINE_ERROR(Unsupported, "provider.unsupported");
RETAIN_DEFINE_ERROR(RequestRejected, "provider.rejected");

// metrics
RETAIN_DEFINE_ERROR(EmptyInput, "metric.empty_input");
RETAIN_DEFINE_ERROR(EmptyList, "metric.empty_list");
RETAIN_DEFINE_ERROR(JudgeUnparseable, "metric.judge_unparseable");
RETAIN_DEFINE_ERROR(UnknownMetric, "metric.unknown");

// runner / workspace
RETAIN_DEFINE_ERROR(AbortedRun, "run.aborted");
RETAIN_DEFINE_ERROR(IOError, "workspace.io");
RETAIN_DEFINE_ERROR(UnknownRun, "run.unknown");
RETAIN_DEFINE_ERROR(TestSetMismatch, "run.test_set_mismatch");
RETAIN_DEFINE_ERROR(UnknownSegment, "segment.unknown");
RETAIN_DEFINE_ERROR(StaleSegment, "segment.stale");
RETAIN_DEFINE_ERROR(Conflict, "workspace.conflict");
RETAIN_DEFINE_ERROR(NotFound, "workspace.not_found");

// discovery
RETAIN_DEFINE_ERROR(InvalidGoal, "discovery.invalid_goal");
RETAIN_DEFINE_ERROR(DiscoveryFailed, "discovery.failed");
RETAIN_DEFINE_ERROR(AlreadyPromoted, "assertion.already_promoted");

// synthbench
RETAIN_DEFINE_ERROR(PoolTooSmall, "bench.pool_too_small");
RETAIN_DEFINE_ERROR(GenerationRejected, "bench.generation_rejected");

#undef RETAIN_DEFINE_ERROR

} // namespace retain
