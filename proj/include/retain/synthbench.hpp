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

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "retain/discovery.hpp"
#include "retain/provider.hpp"

namespace retain::synthbench {

inline constexpr std::array<std::string_view, 6> kDimNames = {"topic",      "writing style", "stance",
                                                              "language",   "formatting",    "country"};

bool is_dim_name(std::string_view name);

/// One concrete attribute instance.
struct AttributeDim {
    std::string name;
    std::string value;
    /// Sentence planted verbatim in hermetic samples.
    std::string marker;
    /// Instruction fragment for the live writer ("is about astronomy").
    std::string requirement;

    bool operator==(const AttributeDim&) const = default;
};

struct PoolEntry {
    std::string name;
    std::vector<AttributeDim> values;
};

using AttributePool = std::vector<PoolEntry>;

/// Six dimensions, a few values each, with mutually non-overlapping markers.
const AttributePool& default_pool();

/// Prevalence is kept as integer tenths (6..10) so counts are exact.
struct CaseSpec {
    AttributeDim goal_dim;
    AttributeDim distractor_dim;
    int v_tenths = 10;
    int n = 10;
    std::uint64_t seed = 0;

    double prevalence() const { return v_tenths / 10.0; }
};

/// round(V*n), halves rounded up.
int gold_count(int v_tenths, int n);

/// Draws two distinct dimension names, a value for each, and V uniform over
/// {0.6..1.0}. Throws PoolTooSmall with fewer than two distinct names.
CaseSpec sample_case(const AttributePool& pool, std::mt19937_64& rng, int n);

struct SyntheticCase {
    AttributeDim goal_dim;
    AttributeDim distractor_dim;
    int v_tenths = 10;
    int n = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> corpus_a;
    std::vector<std::string> corpus_b;
    /// Corpus-B indices carrying the goal dimension.
    std::set<int> gold_support;

    double prevalence() const { return v_tenths / 10.0; }
    discovery::Corpus corpus(discovery::CorpusLabel label) const;
    bool operator==(const SyntheticCase&) const = default;
};

enum class WriterMode { Hermetic, Live };

/// Hermetic mode (writer == nullptr) assembles samples from filler text and
/// marker sentences, then checks each one; a sample failing its own check
/// raises GenerationRejected. Live mode asks `writer` for every sample.
SyntheticCase generate_case(const CaseSpec& spec, provider::Provider* writer = nullptr);

/// Question handed to goal-driven discovery for a case.
std::string goal_question(const AttributeDim& goal_dim);

/// Hermetic relevance: any description containing the marker sentence.
bool hermetic_relevant(std::span<const discovery::ErrorDescription> descs, const AttributeDim& gold);

/// Judge relevance: one YES/NO call over all descriptions. An empty list is
/// irrelevant without a call. Provider errors propagate.
bool judged_relevant(std::span<const discovery::ErrorDescription> descs, const AttributeDim& gold,
                     provider::Provider& judge);

/// Mean over scored cases; unset entries are excluded. Empty -> nullopt.
std::optional<double> mean_relevance(std::span<const std::optional<bool>> per_case);

struct Coverage {
    double precision = 1.0;
    double recall = 1.0;

    bool operator==(const Coverage&) const = default;
};

/// Set precision/recall with 0/0 taken as 1.
Coverage score_coverage(const std::set<int>& predicted, const std::set<int>& gold);

/// Scripted providers realising the hermetic pipeline for one case: the
/// generator emits a description quoting the goal marker when it appears in
/// the prompt, the selector answers YES when an output opens with it.
struct HermeticProviders {
    std::shared_ptr<provider::ScriptedProvider> generator;
    std::shared_ptr<provider::ScriptedProvider> selector;
};

HermeticProviders hermetic_providers(const SyntheticCase& c);

/// Description text the hermetic generator emits for a goal marker.
std::string marker_description(const AttributeDim& dim);

struct CaseOutcome {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    std::string goal_dim;
    std::string distractor_dim;
    int v_tenths = 10;
    int n = 0;
    std::optional<bool> goal_relevant;
    std::optional<bool> baseline_relevant;
    std::optional<Coverage> coverage;
    std::size_t goal_descriptions = 0;
    std::size_t baseline_descriptions = 0;
    std::vector<std::string> warnings;
};

struct BenchResult {
    std::optional<double> relevance_goal;
    std::optional<double> relevance_baseline;
    /// Macro averages over cases with coverage.
    std::optional<double> precision;
    std::optional<double> recall;
    std::vector<CaseOutcome> cases;
    bool hermetic = true;
};

struct BenchOptions {
    std::size_t cases = 100;
    int n = 10;
    /// Fixed prevalence; sampled per case when unset.
    std::optional<int> v_tenths;
    std::uint64_t seed = 0;
    std::size_t workers = 8;
    std::size_t chunk_budget = discovery::kDefaultChunkBudget;
};

/// Live roles; all null means hermetic.
struct BenchProviders {
    provider::Provider* writer = nullptr;
    provider::Provider* generator = nullptr;
    provider::Provider* selector = nullptr;
    provider::Provider* judge = nullptr;

    bool live() const { return writer != nullptr; }
};

/// Per-case seed derived from the dataset seed.
std::uint64_t case_seed(std::uint64_t seed, std::size_t index);

std::vector<SyntheticCase> build_dataset(const BenchOptions& opts, const AttributePool& pool = default_pool(),
                                         provider::Provider* writer = nullptr);

/// Throws ValidationError when live roles are only partly set.
BenchResult run_bench(const std::vector<SyntheticCase>& dataset, const BenchOptions& opts,
                      const BenchProviders& providers = {});

nlohmann::json to_json(const AttributeDim& d);
AttributeDim dim_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticCase& c);
SyntheticCase case_from_json(const nlohmann::json& j);
nlohmann::json dataset_to_json(const std::vector<SyntheticCase>& dataset);
std::vector<SyntheticCase> dataset_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BenchResult& r);

/// Two-column table: w/ goal, w/o goal.
std::string markdown_report(const BenchResult& r);

} // namespace retain::synthbench
