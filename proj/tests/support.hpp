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
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "retain/provider.hpp"

namespace retain::testing {

/// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("retain-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline provider::ScriptRule rule(provider::MatchKind kind, std::string pattern, std::string response, int order = 0) {
    return provider::ScriptRule{kind, std::move(pattern), std::move(response), std::nullopt, order};
}

inline provider::ScriptRule catch_all(std::string response, int order = 1000) {
    return rule(provider::MatchKind::Any, "", std::move(response), order);
}

inline std::shared_ptr<provider::ScriptedProvider> scripted(std::string id, std::vector<provider::ScriptRule> rules,
                                                            int max_in_flight = 8) {
    return std::make_shared<provider::ScriptedProvider>(std::move(id), std::move(rules),
                                                        provider::ScriptedProvider::kDefaultDimension, max_in_flight);
}

/// Always answers `text`.
inline std::shared_ptr<provider::ScriptedProvider> constant(std::string id, std::string text) {
    return scripted(std::move(id), {catch_all(std::move(text))});
}

inline std::filesystem::path source_dir() { return RETAIN_SOURCE_DIR; }

} // namespace retain::testing
