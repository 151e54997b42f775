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
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "retain/metrics.hpp"
#include "retain/provider.hpp"

namespace retain::discovery {

enum class CorpusLabel { A, B };

std::string_view to_string(CorpusLabel label);
CorpusLabel parse_corpus_label(std::string_view s);

struct CorpusItem {
    int test_id = 0;
    std::string text;

    bool operator==(const CorpusItem&) const = default;
};

/// Outputs of one model (or one prompt/model side) in test order.
class Corpus {
public:
    /// Throws ValidationError on an empty list or duplicate test ids.
    Corpus(CorpusLabel label, std::vector<CorpusItem> items);

    CorpusLabel label() const noexcept { return label_; }
    const std::vector<CorpusItem>& items() const noexcept { return items_; }
    std::size_t size() const noexcept { return items_.size(); }

private:
    CorpusLabel label_;
    std::vector<CorpusItem> items_;
};

struct SupportEntry {
    CorpusLabel corpus = CorpusLabel::B;
    int test_id = 0;

    auto operator<=>(const SupportEntry&) const = default;
};

enum class DiscoveryMode { GoalDriven, Baseline };

std::string_view to_string(DiscoveryMode mode);

struct ErrorDescription {
    std::string id;
    std::string text;
    std::string goal;
    DiscoveryMode mode = DiscoveryMode::GoalDriven;
    /// Indices of the generator chunks whose responses contained this text.
    std::vector<int> source_chunks;
    std::optional<std::set<SupportEntry>> support;
    std::optional<std::string> promoted_assertion_id;

    bool operator==(const ErrorDescription&) const = default;
};

/// One generator call's share of the two corpora. Slices are half-open
/// index ranges into the corpus item lists; either may be empty when the
/// corpora differ in length.
struct Chunk {
    std::size_t a_begin = 0, a_end = 0;
    std::size_t b_begin = 0, b_end = 0;

    bool operator==(const Chunk&) const = default;
};

struct ChunkPlan {
    std::size_t budget = 0;
    std::vector<Chunk> chunks;
};

inline constexpr std::size_t kDefaultChunkBudget = 20;

/// ceil(max(|A|,|B|) / budget) chunks; chunk k holds positions
/// [k*budget, (k+1)*budget) of each corpus.
ChunkPlan plan_chunks(std::size_t a_size, std::size_t b_size, std::size_t budget);
ChunkPlan plan_chunks(const Corpus& a, const Corpus& b, std::size_t budget);

/// Completion text the model is meant to continue from.
inline constexpr std::string_view kGeneratorStem = "Compared to outputs in Group A, more outputs in Group B";
inline constexpr std::string_view kBaselineStem = "Compared to outputs in Group A, majority outputs in Group B";
/// Guideline-5 answer meaning the groups do not differ for the question.
inline constexpr std::string_view kNoDifferenceSentinel =
    "There are no differences that make the groups different according to the question provided";

/// Group block: each item on its own line prefixed with `[ITEM] `. Newlines
/// inside an item are flattened to spaces and literal `[ITEM]` tokens inside
/// item text are neutralised so item boundaries stay unambiguous.
std::string render_group(std::span<const CorpusItem> items);

/// Throws InvalidGoal on a blank goal.
std::string render_generator_prompt(const Corpus& a, const Corpus& b, const Chunk& chunk, std::string_view goal);
std::string render_baseline_prompt(const Corpus& a, const Corpus& b, const Chunk& chunk);

/// One description per non-empty line; bullets and numbering are stripped,
/// sentinel lines dropped.
std::vector<std::string> parse_descriptions(std::string_view response);

/// Case-insensitive, whitespace-normalised exact dedup. First occurrence
/// wins and keeps its position; later duplicates fold their source chunks in.
std::vector<ErrorDescription> dedup_descriptions(std::vector<ErrorDescription> descs);

struct DiscoveryResult {
    std::vector<ErrorDescription> descriptions;
    std::vector<std::string> warnings;
    std::size_t chunk_count = 0;
    std::size_t failed_chunks = 0;
};

struct DiscoveryOptions {
    std::size_t budget = kDefaultChunkBudget;
    int max_tokens = 512;
};

/// Goal-driven discovery. Chunk calls run concurrently (bounded by the
/// generator's in-flight limit) at temperature 0. Throws DiscoveryFailed
/// only when every chunk fails.
DiscoveryResult generate_differences(const Corpus& a, const Corpus& b, std::string_view goal,
                                     provider::Provider& generator, const DiscoveryOptions& opts = {});

/// Same pipeline with the goal-free prompt.
DiscoveryResult generate_differences_baseline(const Corpus& a, const Corpus& b, provider::Provider& generator,
                                              const DiscoveryOptions& opts = {});

/// Stable id for a description: derived from mode, goal, and normalised text.
std::string description_id(DiscoveryMode mode, std::string_view goal, std::string_view text);

std::string render_selector_prompt(std::string_view description, std::string_view output);

enum class SelectorAnswer { Yes, No, Unparseable };

SelectorAnswer parse_selector_response(std::string_view response);

struct SupportResult {
    std::set<SupportEntry> support;
    /// Items whose selector call failed; excluded from support and from
    /// coverage denominators.
    std::vector<int> unclassified;
    std::size_t unparseable = 0;
    std::vector<std::string> warnings;
};

/// One YES/NO selector call per corpus item at temperature 0.
SupportResult select_support(const ErrorDescription& desc, const Corpus& corpus, provider::Provider& selector);

/// Rubric text embedding the description.
std::string assertion_rubric(std::string_view description);

/// Creates an active assertion from `desc` and links it back. Throws
/// AlreadyPromoted when `desc` already has one.
metrics::AssertionMetric promote_to_assertion(ErrorDescription& desc, const std::string& judge_provider_id);

} // namespace retain::discovery
