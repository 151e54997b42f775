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

#include "retain/synthbench.hpp"

#include <algorithm>
#include <exception>
#include <numeric>

#include <fmt/format.h>

#include "retain/config.hpp"
#include "retain/errors.hpp"
#include "retain/parallel.hpp"
#include "retain/prompt_assets.hpp"
#include "retain/text.hpp"

namespace retain::synthbench {

using json = nlohmann::json;

namespace {

AttributeDim dim(std::string name, std::string value, std::string marker, std::string requirement) {
    return AttributeDim{std::move(name), std::move(value), std::move(marker), std::move(requirement)};
}

// Neutral sentences that carry none of the pool's attributes.
constexpr std::array<std::string_view, 8> kFillers = {
    "The update was shared with the whole group on Monday.",
    "Several people asked follow-up questions afterwards.",
    "A short summary was added at the end of the notes.",
    "Most of the details were settled during the first meeting.",
    "The schedule stayed the same for the rest of the week.",
    "Everyone agreed to review the plan again next month.",
    "The numbers were checked twice before anything was sent.",
    "A few open items were moved to the next session.",
};

constexpr std::array<std::string_view, 6> kSubjects = {
    "a neighbourhood library", "a weekend trip", "a new kitchen appliance",
    "a local football club",   "a morning commute", "a community garden",
};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::string hermetic_sample(const AttributeDim& distractor, const AttributeDim* goal, std::mt19937_64& rng) {
    std::string s;
    if (goal) s += goal->marker + " ";
    s += std::string(kFillers[rng() % kFillers.size()]);
    s += " " + distractor.marker;
    return s;
}

std::string writer_prompt(const AttributeDim& distractor, const AttributeDim* goal, std::mt19937_64& rng) {
    std::string requirements = "The paragraph " + distractor.requirement + ".";
    if (goal) requirements += "\nThe paragraph also " + goal->requirement + ".";
    config::PromptTemplate tmpl{"writer", 1, std::string(assets::writer_prompt_v1())};
    return config::render_prompt(
        tmpl, {{"subject", std::string(kSubjects[rng() % kSubjects.size()])}, {"requirements", requirements}});
}

std::string relevance_prompt(const AttributeDim& gold, std::string_view description) {
    config::PromptTemplate tmpl{"relevance", 1, std::string(assets::relevance_judge_prompt_v1())};
    return config::render_prompt(tmpl, {{"attribute", gold.name + ": " + gold.value},
                                        {"descriptions", "- " + std::string(description)}});
}

/// Index of the first description matching the gold dimension. Hermetic when
/// `judge` is null.
std::optional<std::size_t> first_relevant(std::span<const discovery::ErrorDescription> descs,
                                          const AttributeDim& gold, provider::Provider* judge) {
    for (std::size_t i = 0; i < descs.size(); ++i) {
        if (!judge) {
            if (text::contains_ci(descs[i].text, gold.marker)) return i;
            continue;
        }
        provider::CompletionRequest req{judge->id(), relevance_prompt(gold, descs[i].text), 0.0, 8};
        auto answer = discovery::parse_selector_response(judge->complete(req).text);
        if (answer == discovery::SelectorAnswer::Unparseable) {
            throw JudgeUnparseable("relevance judge gave no YES/NO answer");
        }
        if (answer == discovery::SelectorAnswer::Yes) return i;
    }
    return std::nullopt;
}

std::optional<double> mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return std::nullopt;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json opt_json(const std::optional<bool>& v) { return v ? json(*v) : json(nullptr); }

} // namespace

bool is_dim_name(std::string_view name) {
    return std::find(kDimNames.begin(), kDimNames.end(), name) != kDimNames.end();
}

const AttributePool& default_pool() {
    static const AttributePool pool = {
        {"topic",
         {dim("topic", "astronomy", "Telescopes keep revealing galaxies far beyond our own.", "is about astronomy"),
          dim("topic", "cooking", "Slow-roasted garlic makes any sauce taste richer.", "is about cooking"),
          dim("topic", "gardening", "Tomato seedlings need plenty of morning sun.", "is about gardening")}},
        {"writing style",
         {dim("writing style", "formal", "It is hereby respectfully submitted that the matter merits attention.",
              "is written in a formal, official register"),
          dim("writing style", "poetic", "Soft rain whispers secrets to the sleeping hills.",
              "is written in a lyrical, poetic style"),
          dim("writing style", "slang", "Honestly that whole thing was lowkey wild, no cap.",
              "is written in casual internet slang")}},
        {"stance",
         {dim("stance", "optimistic", "Things are bound to get better from here.", "takes a clearly optimistic stance"),
          dim("stance", "skeptical", "Frankly, none of these claims hold up to scrutiny.",
              "takes a clearly skeptical stance")}},
        {"language",
         {dim("language", "French", "Voici une phrase entièrement en français.", "contains a sentence in French"),
          dim("language", "Spanish", "Esta es una oración completamente en español.",
              "contains a sentence in Spanish")}},
        {"formatting",
         {dim("formatting", "all caps", "THIS SENTENCE IS WRITTEN ENTIRELY IN CAPITAL LETTERS.",
              "contains one sentence written entirely in capital letters"),
          dim("formatting", "hashtag", "#weekly #update #notes", "ends with a line of hashtags")}},
        {"country",
         {dim("country", "Japan", "The old temples of Kyoto glow softly at dusk.", "mentions Japan"),
          dim("country", "Brazil", "Samba drums echo through the streets of Rio.", "mentions Brazil")}},
    };
    return pool;
}

int gold_count(int v_tenths, int n) { return (v_tenths * n + 5) / 10; }

CaseSpec sample_case(const AttributePool& pool, std::mt19937_64& rng, int n) {
    std::vector<const PoolEntry*> usable;
    std::set<std::string> names;
    for (const auto& e : pool) {
        if (!e.values.empty() && names.insert(e.name).second) usable.push_back(&e);
    }
    if (usable.size() < 2) throw PoolTooSmall("attribute pool needs at least two distinct dimension names");
    if (n < 1) throw ValidationError("samples per corpus must be >= 1");

    const std::size_t g = rng() % usable.size();
    std::size_t d = rng() % (usable.size() - 1);
    if (d >= g) ++d;
    CaseSpec spec;
    spec.goal_dim = usable[g]->values[rng() % usable[g]->values.size()];
    spec.distractor_dim = usable[d]->values[rng() % usable[d]->values.size()];
    spec.v_tenths = 6 + static_cast<int>(rng() % 5);
    spec.n = n;
    return spec;
}

discovery::Corpus SyntheticCase::corpus(discovery::CorpusLabel label) const {
    const auto& texts = label == discovery::CorpusLabel::A ? corpus_a : corpus_b;
    std::vector<discovery::CorpusItem> items;
    items.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) items.push_back({static_cast<int>(i), texts[i]});
    return discovery::Corpus(label, std::move(items));
}

SyntheticCase generate_case(const CaseSpec& spec, provider::Provider* writer) {
    if (spec.goal_dim.name == spec.distractor_dim.name) {
        throw ValidationError("goal and distractor dimensions must differ");
    }
    if (spec.v_tenths < 6 || spec.v_tenths > 10) throw ValidationError("prevalence must be in 0.6..1.0");
    if (spec.n < 1) throw ValidationError("samples per corpus must be >= 1");

    SyntheticCase c;
    c.goal_dim = spec.goal_dim;
    c.distractor_dim = spec.distractor_dim;
    c.v_tenths = spec.v_tenths;
    c.n = spec.n;
    c.seed = spec.seed;

    std::mt19937_64 rng(spec.seed);
    std::vector<int> order(static_cast<std::size_t>(spec.n));
    std::iota(order.begin(), order.end(), 0);
    const int k = gold_count(spec.v_tenths, spec.n);
    for (int i = 0; i < k; ++i) {
        auto j = static_cast<std::size_t>(i) + rng() % static_cast<std::size_t>(spec.n - i);
        std::swap(order[static_cast<std::size_t>(i)], order[j]);
    }
    c.gold_support.insert(order.begin(), order.begin() + k);

    auto make = [&](const AttributeDim* goal) {
        if (!writer) return hermetic_sample(spec.distractor_dim, goal, rng);
        provider::CompletionRequest req{writer->id(), writer_prompt(spec.distractor_dim, goal, rng), 0.7, 256};
        return text::trim(writer->complete(req).text);
    };
    for (int i = 0; i < spec.n; ++i) c.corpus_a.push_back(make(nullptr));
    for (int i = 0; i < spec.n; ++i) c.corpus_b.push_back(make(c.gold_support.contains(i) ? &spec.goal_dim : nullptr));

    if (!writer) {
        auto check = [&](const std::string& s, bool want_goal, std::string_view where) {
            bool has_d = s.find(spec.distractor_dim.marker) != std::string::npos;
            bool has_g = s.find(spec.goal_dim.marker) != std::string::npos;
            if (!has_d || has_g != want_goal) {
                throw GenerationRejected(fmt::format("sample in {} fails its carrier check: {}", where, s));
            }
        };
        for (const auto& s : c.corpus_a) check(s, false, "corpus A");
        for (int i = 0; i < spec.n; ++i) {
            check(c.corpus_b[static_cast<std::size_t>(i)], c.gold_support.contains(i), "corpus B");
        }
    }
    return c;
}

std::string goal_question(const AttributeDim& goal_dim) {
    return fmt::format("How do the outputs differ in {}?", goal_dim.name);
}

bool hermetic_relevant(std::span<const discovery::ErrorDescription> descs, const AttributeDim& gold) {
    return first_relevant(descs, gold, nullptr).has_value();
}

bool judged_relevant(std::span<const discovery::ErrorDescription> descs, const AttributeDim& gold,
                     provider::Provider& judge) {
    return first_relevant(descs, gold, &judge).has_value();
}

std::optional<double> mean_relevance(std::span<const std::optional<bool>> per_case) {
    std::vector<double> xs;
    for (const auto& v : per_case) {
        if (v) xs.push_back(*v ? 1.0 : 0.0);
    }
    return mean_of(xs);
}

Coverage score_coverage(const std::set<int>& predicted, const std::set<int>& gold) {
    std::size_t tp = 0;
    for (int i : predicted) tp += gold.contains(i) ? 1 : 0;
    Coverage c;
    c.precision = predicted.empty() ? 1.0 : static_cast<double>(tp) / static_cast<double>(predicted.size());
    c.recall = gold.empty() ? 1.0 : static_cast<double>(tp) / static_cast<double>(gold.size());
    return c;
}

std::string marker_description(const AttributeDim& dim) {
    return fmt::format("include the sentence \"{}\"", dim.marker);
}

HermeticProviders hermetic_providers(const SyntheticCase& c) {
    using provider::MatchKind;
    using provider::ScriptRule;
    HermeticProviders p;
    p.generator = std::make_shared<provider::ScriptedProvider>(
        "hermetic-generator",
        std::vector<ScriptRule>{
            {MatchKind::Substring, c.goal_dim.marker, marker_description(c.goal_dim), std::nullopt, 0},
            {MatchKind::Any, "", std::string(discovery::kNoDifferenceSentinel), std::nullopt, 1},
        });
    // The selector prompt quotes the description, which itself holds the
    // marker, so the rule anchors on the opening of the output block.
    p.selector = std::make_shared<provider::ScriptedProvider>(
        "hermetic-selector", std::vector<ScriptRule>{
                                 {MatchKind::Substring, "<output>\n" + c.goal_dim.marker, "YES", std::nullopt, 0},
                                 {MatchKind::Any, "", "NO", std::nullopt, 1},
                             });
    return p;
}

std::uint64_t case_seed(std::uint64_t seed, std::size_t index) { return splitmix64(seed ^ splitmix64(index)); }

std::vector<SyntheticCase> build_dataset(const BenchOptions& opts, const AttributePool& pool,
                                         provider::Provider* writer) {
    if (opts.v_tenths && (*opts.v_tenths < 6 || *opts.v_tenths > 10)) {
        throw ValidationError("prevalence must be in 0.6..1.0");
    }
    std::vector<CaseSpec> specs;
    for (std::size_t i = 0; i < opts.cases; ++i) {
        std::mt19937_64 rng(case_seed(opts.seed, i));
        auto spec = sample_case(pool, rng, opts.n);
        if (opts.v_tenths) spec.v_tenths = *opts.v_tenths;
        spec.seed = rng();
        specs.push_back(std::move(spec));
    }
    std::vector<SyntheticCase> out(specs.size());
    std::vector<std::exception_ptr> errors(specs.size());
    parallel_for(specs.size(), opts.workers, [&](std::size_t i) {
        try {
            out[i] = generate_case(specs[i], writer);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

BenchResult run_bench(const std::vector<SyntheticCase>& dataset, const BenchOptions& opts,
                      const BenchProviders& providers) {
    const bool any = providers.writer || providers.generator || providers.selector || providers.judge;
    const bool all = providers.writer && providers.generator && providers.selector && providers.judge;
    if (any && !all) throw ValidationError("live bench needs writer, generator, selector and judge providers");

    BenchResult result;
    result.hermetic = !all;
    result.cases.resize(dataset.size());

    parallel_for(dataset.size(), opts.workers, [&](std::size_t i) {
        const auto& c = dataset[i];
        auto& out = result.cases[i];
        out.index = i;
        out.seed = c.seed;
        out.goal_dim = c.goal_dim.name + ": " + c.goal_dim.value;
        out.distractor_dim = c.distractor_dim.name + ": " + c.distractor_dim.value;
        out.v_tenths = c.v_tenths;
        out.n = c.n;

        HermeticProviders hermetic;
        provider::Provider* generator = providers.generator;
        provider::Provider* selector = providers.selector;
        if (result.hermetic) {
            hermetic = hermetic_providers(c);
            generator = hermetic.generator.get();
            selector = hermetic.selector.get();
        }
        auto a = c.corpus(discovery::CorpusLabel::A);
        auto b = c.corpus(discovery::CorpusLabel::B);
        discovery::DiscoveryOptions dopts;
        dopts.budget = opts.chunk_budget;

        try {
            auto goal = discovery::generate_differences(a, b, goal_question(c.goal_dim), *generator, dopts);
            out.goal_descriptions = goal.descriptions.size();
            for (auto& w : goal.warnings) out.warnings.push_back(std::move(w));
            auto hit = first_relevant(goal.descriptions, c.goal_dim, providers.judge);
            out.goal_relevant = hit.has_value();

            std::set<int> predicted;
            std::set<int> gold = c.gold_support;
            if (hit) {
                auto support = discovery::select_support(goal.descriptions[*hit], b, *selector);
                for (const auto& e : support.support) predicted.insert(e.test_id);
                for (int id : support.unclassified) gold.erase(id);
                for (auto& w : support.warnings) out.warnings.push_back(std::move(w));
            }
            out.coverage = score_coverage(predicted, gold);
        } catch (const std::exception& e) {
            out.warnings.push_back(fmt::format("goal-driven discovery: {}", e.what()));
        }

        try {
            auto base = discovery::generate_differences_baseline(a, b, *generator, dopts);
            out.baseline_descriptions = base.descriptions.size();
            for (auto& w : base.warnings) out.warnings.push_back(std::move(w));
            out.baseline_relevant = first_relevant(base.descriptions, c.goal_dim, providers.judge).has_value();
        } catch (const std::exception& e) {
            out.warnings.push_back(fmt::format("baseline discovery: {}", e.what()));
        }
    });

    std::vector<std::optional<bool>> goal, base;
    std::vector<double> precision, recall;
    for (const auto& c : result.cases) {
        goal.push_back(c.goal_relevant);
        base.push_back(c.baseline_relevant);
        if (c.coverage) {
            precision.push_back(c.coverage->precision);
            recall.push_back(c.coverage->recall);
        }
    }
    result.relevance_goal = mean_relevance(goal);
    result.relevance_baseline = mean_relevance(base);
    result.precision = mean_of(precision);
    result.recall = mean_of(recall);
    return result;
}

json to_json(const AttributeDim& d) {
    return {{"name", d.name}, {"value", d.value}, {"marker", d.marker}, {"requirement", d.requirement}};
}

AttributeDim dim_from_json(const json& j) {
    AttributeDim d;
    d.name = j.at("name").get<std::string>();
    if (!is_dim_name(d.name)) throw ValidationError("unknown attribute dimension '" + d.name + "'");
    d.value = j.at("value").get<std::string>();
    d.marker = j.at("marker").get<std::string>();
    d.requirement = j.at("requirement").get<std::string>();
    return d;
}

json to_json(const SyntheticCase& c) {
    return {
        {"goal_dim", to_json(c.goal_dim)},
        {"distractor_dim", to_json(c.distractor_dim)},
        {"v", c.prevalence()},
        {"n", c.n},
        {"seed", c.seed},
        {"corpus_a", c.corpus_a},
        {"corpus_b", c.corpus_b},
        {"gold_support", c.gold_support},
    };
}

SyntheticCase case_from_json(const json& j) {
    SyntheticCase c;
    c.goal_dim = dim_from_json(j.at("goal_dim"));
    c.distractor_dim = dim_from_json(j.at("distractor_dim"));
    c.v_tenths = static_cast<int>(std::lround(j.at("v").get<double>() * 10.0));
    c.n = j.at("n").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.corpus_a = j.at("corpus_a").get<std::vector<std::string>>();
    c.corpus_b = j.at("corpus_b").get<std::vector<std::string>>();
    c.gold_support = j.at("gold_support").get<std::set<int>>();
    return c;
}

json dataset_to_json(const std::vector<SyntheticCase>& dataset) {
    json cases = json::array();
    for (const auto& c : dataset) cases.push_back(to_json(c));
    return {{"cases", std::move(cases)}};
}

std::vector<SyntheticCase> dataset_from_json(const json& j) {
    std::vector<SyntheticCase> out;
    for (const auto& c : j.at("cases")) out.push_back(case_from_json(c));
    return out;
}

json to_json(const BenchResult& r) {
    json cases = json::array();
    for (const auto& c : r.cases) {
        json cj = {
            {"index", c.index},
            {"seed", c.seed},
            {"goal_dim", c.goal_dim},
            {"distractor_dim", c.distractor_dim},
            {"v", c.v_tenths / 10.0},
            {"n", c.n},
            {"goal_relevant", opt_json(c.goal_relevant)},
            {"baseline_relevant", opt_json(c.baseline_relevant)},
            {"goal_descriptions", c.goal_descriptions},
            {"baseline_descriptions", c.baseline_descriptions},
            {"warnings", c.warnings},
        };
        cj["precision"] = c.coverage ? json(c.coverage->precision) : json(nullptr);
        cj["recall"] = c.coverage ? json(c.coverage->recall) : json(nullptr);
        cases.push_back(std::move(cj));
    }
    return {
        {"mode", r.hermetic ? "hermetic" : "live"},
        {"relevance", {{"with_goal", opt_json(r.relevance_goal)}, {"without_goal", opt_json(r.relevance_baseline)}}},
        {"coverage", {{"precision", opt_json(r.precision)}, {"recall", opt_json(r.recall)}}},
        {"cases", std::move(cases)},
    };
}

std::string markdown_report(const BenchResult& r) {
    auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{:.2f}", *v) : std::string("n/a"); };
    std::string out;
    out += fmt::format("Mode: {}, cases: {}\n\n", r.hermetic ? "hermetic" : "live", r.cases.size());
    out += "| | w/ goal | w/o goal |\n";
    out += "|---|---|---|\n";
    out += fmt::format("| Error Relevance | {} | {} |\n", cell(r.relevance_goal), cell(r.relevance_baseline));
    out += "| Error Coverage | | |\n";
    out += fmt::format("| - Precision | {} | - |\n", cell(r.precision));
    out += fmt::format("| - Recall | {} | - |\n", cell(r.recall));
    return out;
}

} // namespace retain::synthbench
