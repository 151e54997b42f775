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

#include "retain/discovery.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "retain/config.hpp"
#include "retain/errors.hpp"
#include "retain/parallel.hpp"
#include "retain/prompt_assets.hpp"
#include "retain/text.hpp"

namespace retain::discovery {

std::string_view to_string(CorpusLabel label) { return label == CorpusLabel::A ? "A" : "B"; }

CorpusLabel parse_corpus_label(std::string_view s) {
    if (s == "A" || s == "a") return CorpusLabel::A;
    if (s == "B" || s == "b") return CorpusLabel::B;
    throw ValidationError("corpus label must be 'A' or 'B', got '" + std::string(s) + "'");
}

std::string_view to_string(DiscoveryMode mode) { return mode == DiscoveryMode::GoalDriven ? "goal" : "baseline"; }

Corpus::Corpus(CorpusLabel label, std::vector<CorpusItem> items) : label_(label), items_(std::move(items)) {
    if (items_.empty()) throw ValidationError(fmt::format("corpus {} is empty", to_string(label_)));
    std::set<int> seen;
    for (const auto& item : items_) {
        if (!seen.insert(item.test_id).second) {
            throw ValidationError(fmt::format("corpus {} repeats test id {}", to_string(label_), item.test_id));
        }
    }
}

ChunkPlan plan_chunks(std::size_t a_size, std::size_t b_size, std::size_t budget) {
    if (budget < 1) throw ValidationError("chunk budget must be >= 1");
    ChunkPlan plan;
    plan.budget = budget;
    const std::size_t longest = std::max(a_size, b_size);
    const std::size_t count = (longest + budget - 1) / budget;
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t lo = k * budget;
        const std::size_t hi = lo + budget;
        plan.chunks.push_back(Chunk{std::min(lo, a_size), std::min(hi, a_size), std::min(lo, b_size),
                                    std::min(hi, b_size)});
    }
    return plan;
}

ChunkPlan plan_chunks(const Corpus& a, const Corpus& b, std::size_t budget) {
    return plan_chunks(a.size(), b.size(), budget);
}

std::string render_group(std::span<const CorpusItem> items) {
    std::string out;
    for (const auto& item : items) {
        std::string flat = item.text;
        std::replace(flat.begin(), flat.end(), '\n', ' ');
        std::replace(flat.begin(), flat.end(), '\r', ' ');
        text::replace_all(flat, "[ITEM]", "[item]");
        out += "\n[ITEM] ";
        out += text::trim(flat);
    }
    return out;
}

namespace {

std::span<const CorpusItem> slice(const Corpus& c, std::size_t begin, std::size_t end) {
    return std::span<const CorpusItem>(c.items()).subspan(begin, end - begin);
}

bool is_sentinel(std::string_view line) {
    return text::normalize(line).find("there are no differences") != std::string::npos;
}

std::string strip_list_marker(std::string_view line) {
    std::string s = text::trim(line);
    // "1." / "2)" numbering
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])) != 0) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) s = text::trim(std::string_view(s).substr(i + 1));
    for (std::string_view bullet : {"- ", "* ", "\xE2\x80\xA2"}) {
        if (std::string_view(s).starts_with(bullet)) {
            s = text::trim(std::string_view(s).substr(bullet.size()));
            break;
        }
    }
    for (auto stem : {kGeneratorStem, kBaselineStem}) {
        if (text::starts_with_ci(s, stem)) {
            s = text::trim(std::string_view(s).substr(stem.size()));
            break;
        }
    }
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
        s = text::trim(std::string_view(s).substr(1, s.size() - 2));
    }
    return s;
}

template <typename Render>
DiscoveryResult run_discovery(const Corpus& a, const Corpus& b, std::string_view goal, DiscoveryMode mode,
                              provider::Provider& generator, const DiscoveryOptions& opts, Render&& render) {
    auto plan = plan_chunks(a, b, opts.budget);

    struct ChunkOutcome {
        std::vector<std::string> lines;
        std::optional<std::string> error;
    };
    std::vector<ChunkOutcome> outcomes(plan.chunks.size());
    std::vector<std::string> prompts;
    prompts.reserve(plan.chunks.size());
    for (const auto& chunk : plan.chunks) prompts.push_back(render(chunk));

    parallel_for(plan.chunks.size(), static_cast<std::size_t>(generator.max_in_flight()), [&](std::size_t k) {
        try {
            provider::CompletionRequest req{generator.id(), prompts[k], 0.0, opts.max_tokens};
            outcomes[k].lines = parse_descriptions(generator.complete(req).text);
        } catch (const std::exception& e) {
            outcomes[k].error = e.what();
        }
    });

    DiscoveryResult result;
    result.chunk_count = plan.chunks.size();
    std::vector<ErrorDescription> raw;
    for (std::size_t k = 0; k < outcomes.size(); ++k) {
        if (outcomes[k].error) {
            ++result.failed_chunks;
            result.warnings.push_back(fmt::format("chunk {} failed: {}", k, *outcomes[k].error));
            continue;
        }
        for (auto& line : outcomes[k].lines) {
            ErrorDescription d;
            d.id = description_id(mode, goal, line);
            d.text = std::move(line);
            d.goal = std::string(goal);
            d.mode = mode;
            d.source_chunks = {static_cast<int>(k)};
            raw.push_back(std::move(d));
        }
    }
    if (result.chunk_count > 0 && result.failed_chunks == result.chunk_count) {
        throw DiscoveryFailed("every generator chunk failed; first error: " + *outcomes.front().error);
    }
    for (const auto& w : result.warnings) spdlog::warn("discovery: {}", w);
    result.descriptions = dedup_descriptions(std::move(raw));
    return result;
}

} // namespace

std::string render_generator_prompt(const Corpus& a, const Corpus& b, const Chunk& chunk, std::string_view goal) {
    auto g = text::trim(goal);
    if (g.empty()) throw InvalidGoal("goal-driven discovery needs a non-empty goal");
    config::PromptTemplate tmpl{"generator", 1, std::string(assets::generator_prompt_v1())};
    return config::render_prompt(tmpl, {{"group_a", render_group(slice(a, chunk.a_begin, chunk.a_end))},
                                        {"group_b", render_group(slice(b, chunk.b_begin, chunk.b_end))},
                                        {"goal", g}});
}

std::string render_baseline_prompt(const Corpus& a, const Corpus& b, const Chunk& chunk) {
    config::PromptTemplate tmpl{"baseline", 1, std::string(assets::baseline_prompt_v1())};
    return config::render_prompt(tmpl, {{"group_a", render_group(slice(a, chunk.a_begin, chunk.a_end))},
                                        {"group_b", render_group(slice(b, chunk.b_begin, chunk.b_end))}});
}

std::vector<std::string> parse_descriptions(std::string_view response) {
    std::vector<std::string> out;
    for (const auto& line : text::split_lines(response)) {
        if (is_sentinel(line)) continue;
        auto d = strip_list_marker(line);
        if (!d.empty()) out.push_back(std::move(d));
    }
    return out;
}

std::vector<ErrorDescription> dedup_descriptions(std::vector<ErrorDescription> descs) {
    std::vector<ErrorDescription> out;
    std::map<std::string, std::size_t> index;
    for (auto& d : descs) {
        auto key = text::normalize(d.text);
        auto it = index.find(key);
        if (it == index.end()) {
            d.text = text::trim(d.text);
            index.emplace(std::move(key), out.size());
            out.push_back(std::move(d));
            continue;
        }
        auto& kept = out[it->second].source_chunks;
        for (int c : d.source_chunks) {
            if (std::find(kept.begin(), kept.end(), c) == kept.end()) kept.push_back(c);
        }
        std::sort(kept.begin(), kept.end());
    }
    return out;
}

DiscoveryResult generate_differences(const Corpus& a, const Corpus& b, std::string_view goal,
                                     provider::Provider& generator, const DiscoveryOptions& opts) {
    if (text::trim(goal).empty()) throw InvalidGoal("goal-driven discovery needs a non-empty goal");
    return run_discovery(a, b, text::trim(goal), DiscoveryMode::GoalDriven, generator, opts,
                         [&](const Chunk& c) { return render_generator_prompt(a, b, c, goal); });
}

DiscoveryResult generate_differences_baseline(const Corpus& a, const Corpus& b, provider::Provider& generator,
                                              const DiscoveryOptions& opts) {
    return run_discovery(a, b, "", DiscoveryMode::Baseline, generator, opts,
                         [&](const Chunk& c) { return render_baseline_prompt(a, b, c); });
}

std::string description_id(DiscoveryMode mode, std::string_view goal, std::string_view text) {
    auto key = fmt::format("{}\n{}\n{}", to_string(mode), text::normalize(goal), text::normalize(text));
    return "e" + text::sha256_hex(key).substr(0, 12);
}

std::string render_selector_prompt(std::string_view description, std::string_view output) {
    config::PromptTemplate tmpl{"selector", 1, std::string(assets::selector_prompt_v1())};
    return config::render_prompt(tmpl, {{"description", std::string(description)}, {"output", std::string(output)}});
}

SelectorAnswer parse_selector_response(std::string_view response) {
    auto t = text::trim(response);
    std::size_t i = 0;
    while (i < t.size() && std::isalpha(static_cast<unsigned char>(t[i])) == 0) ++i;
    std::size_t j = i;
    while (j < t.size() && std::isalpha(static_cast<unsigned char>(t[j])) != 0) ++j;
    auto word = text::to_lower(std::string_view(t).substr(i, j - i));
    if (word == "yes") return SelectorAnswer::Yes;
    if (word == "no") return SelectorAnswer::No;
    return SelectorAnswer::Unparseable;
}

SupportResult select_support(const ErrorDescription& desc, const Corpus& corpus, provider::Provider& selector) {
    const auto& items = corpus.items();
    std::vector<std::optional<SelectorAnswer>> answers(items.size());
    std::vector<std::string> errors(items.size());

    parallel_for(items.size(), static_cast<std::size_t>(selector.max_in_flight()), [&](std::size_t i) {
        try {
            provider::CompletionRequest req{selector.id(), render_selector_prompt(desc.text, items[i].text), 0.0, 8};
            answers[i] = parse_selector_response(selector.complete(req).text);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    SupportResult result;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!answers[i]) {
            result.unclassified.push_back(items[i].test_id);
            result.warnings.push_back(fmt::format("test {}: selector failed: {}", items[i].test_id, errors[i]));
            continue;
        }
        switch (*answers[i]) {
        case SelectorAnswer::Yes: result.support.insert({corpus.label(), items[i].test_id}); break;
        case SelectorAnswer::No: break;
        case SelectorAnswer::Unparseable:
            ++result.unparseable;
            result.warnings.push_back(fmt::format("test {}: unparseable selector answer, counted as NO",
                                                  items[i].test_id));
            break;
        }
    }
    return result;
}

std::string assertion_rubric(std::string_view description) {
    return fmt::format("The output must not exhibit the following behavior: \"{}\". "
                       "PASS if the behavior is absent, FAIL if it is present.",
                       text::trim(description));
}

metrics::AssertionMetric promote_to_assertion(ErrorDescription& desc, const std::string& judge_provider_id) {
    if (desc.promoted_assertion_id) {
        throw AlreadyPromoted("error '" + desc.id + "' is already promoted to assertion '" +
                              *desc.promoted_assertion_id + "'");
    }
    metrics::AssertionMetric a;
    a.id = desc.id;
    a.rubric_text = assertion_rubric(desc.text);
    a.judge_provider_id = judge_provider_id;
    a.active = true;
    a.source_error_id = desc.id;
    desc.promoted_assertion_id = a.id;
    return a;
}

} // namespace retain::discovery
