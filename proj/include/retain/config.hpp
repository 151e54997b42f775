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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace retain::config {

enum class AssertionType { Bleu, Similarity, LlmJudge };

std::string_view to_string(AssertionType t);

/// Accepts the canonical names plus the aliases `bertscore` (similarity) and
/// `llm-rubric` (llm-judge). Returns nullopt for anything else.
std::optional<AssertionType> parse_assertion_type(std::string_view name);

struct AssertionSpec {
    AssertionType type = AssertionType::Bleu;
    /// Reference text for bleu/similarity, rubric text for llm-judge.
    std::string value;
    /// Judge provider override for llm-judge; falls back to the `judge` role.
    std::optional<std::string> provider;

    bool operator==(const AssertionSpec&) const = default;
};

struct TestCase {
    int id = 0;
    std::map<std::string, std::string> vars;
    std::vector<AssertionSpec> assertions;

    bool operator==(const TestCase&) const = default;
};

struct PromptTemplate {
    std::string id;
    int version = 1;
    std::string text;

    /// Placeholder names in order of first appearance, without duplicates.
    std::vector<std::string> placeholders() const;

    bool operator==(const PromptTemplate&) const = default;
};

enum class ProviderKind { Chat, Scripted };

struct ProviderSpec {
    /// `family:model`; an id without a colon is its own family and model.
    std::string id;
    ProviderKind kind = ProviderKind::Chat;
    std::string credentials_env;
    std::optional<std::string> base_url;
    double temperature = 0.0;
    /// Scripted providers only: path to a JSON rule file.
    std::optional<std::string> script;
    int max_in_flight = 8;

    std::string family() const;
    std::string model() const;

    bool operator==(const ProviderSpec&) const = default;
};

/// `<FAMILY>_API_KEY` with the family uppercased and `-`/`.` mapped to `_`.
std::string default_credentials_env(std::string_view provider_id);

struct MetricDefaults {
    double tolerance = 0.0;
    std::map<std::string, double> per_metric;

    double tolerance_for(const std::string& metric) const;

    bool operator==(const MetricDefaults&) const = default;
};

/// Roles used outside the eval grid.
inline constexpr std::string_view kRoleGenerator = "discovery_generator";
inline constexpr std::string_view kRoleSelector = "discovery_selector";
inline constexpr std::string_view kRoleJudge = "judge";
inline constexpr std::string_view kRoleEmbedder = "embedder";
inline constexpr std::string_view kRoleWriter = "writer";

struct EvalConfig {
    std::vector<PromptTemplate> prompts;
    std::vector<ProviderSpec> providers;
    std::vector<TestCase> tests;
    MetricDefaults defaults;
    std::map<std::string, ProviderSpec> roles;

    const PromptTemplate* find_prompt(std::string_view id) const;
    const ProviderSpec* find_provider(std::string_view id) const;

    bool operator==(const EvalConfig&) const = default;
};

/// Parses and validates config text. Throws SyntaxError or ValidationError.
EvalConfig parse_config(std::string_view raw);

/// Canonical YAML rendering; `parse_config(serialize_config(c)) == c`.
std::string serialize_config(const EvalConfig& cfg);

/// Re-runs the structural validation on an in-memory config.
void validate(const EvalConfig& cfg);

/// Replaces every `file://` var with the referenced file's contents
/// (relative paths resolve against `root`) and makes scripted-provider
/// script paths absolute. Throws FileNotFound.
EvalConfig resolve_file_refs(const EvalConfig& cfg, const std::filesystem::path& root);

/// Substitutes every `{{name}}`. Throws MissingVar.
std::string render_prompt(const PromptTemplate& tmpl,
                          const std::map<std::string, std::string>& vars);

/// Prompt sent for one grid cell. Templates with placeholders render as
/// usual; a template without any (`"Summarize this document"`) gets each
/// var value appended as its own paragraph, in var-name order.
std::string compose_prompt(const PromptTemplate& tmpl, const std::map<std::string, std::string>& vars);

EvalConfig load_config_file(const std::filesystem::path& path);

} // namespace retain::config
