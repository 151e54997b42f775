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

#include <catch_amalgamated.hpp>

#include <random>

#include "retain/synthbench.hpp"
#include "support.hpp"

using namespace retain;
using namespace retain::synthbench;
using retain::testing::catch_all;
using retain::testing::constant;
using retain::testing::rule;
using retain::testing::scripted;

namespace {

const AttributeDim& dim(std::string_view name, std::size_t value = 0) {
    for (const auto& e : default_pool()) {
        if (e.name == name) return e.values.at(value);
    }
    throw std::runtime_error("no such dimension");
}

CaseSpec spec(int v_tenths, int n, std::uint64_t seed) {
    return CaseSpec{dim("topic"), dim("writing style"), v_tenths, n, seed};
}

// Brute-force precision/recall by explicit membership counting.
std::pair<double, double> brute_pr(const std::set<int>& predicted, const std::set<int>& gold, int n) {
    int tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < n; ++i) {
        bool p = predicted.count(i) > 0, g = gold.count(i) > 0;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    double prec = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
    double rec = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fn);
    return {prec, rec};
}

} // namespace

TEST_CASE("default pool covers the six dimensions with distinct markers") {
    const auto& pool = default_pool();
    REQUIRE(pool.size() == kDimNames.size());
    std::set<std::string> markers;
    for (const auto& e : pool) {
        CHECK(is_dim_name(e.name));
        CHECK(e.values.size() >= 2);
        for (const auto& v : e.values) {
            CHECK(v.name == e.name);
            CHECK(markers.insert(v.marker).second);
        }
    }
    // no marker contains another
    for (const auto& m1 : markers) {
        for (const auto& m2 : markers) {
            if (m1 != m2) CHECK(m1.find(m2) == std::string::npos);
        }
    }
    CHECK_FALSE(is_dim_name("color"));
}

TEST_CASE("gold counts round half up") {
    CHECK(gold_count(8, 10) == 8);
    CHECK(gold_count(10, 10) == 10);
    CHECK(gold_count(7, 5) == 4);
    CHECK(gold_count(6, 5) == 3);
    CHECK(gold_count(8, 20) == 16);
}

TEST_CASE("sample_case draws two different dimensions") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        auto s = sample_case(default_pool(), rng, 10);
        CHECK(s.goal_dim.name != s.distractor_dim.name);
        CHECK(s.v_tenths >= 6);
        CHECK(s.v_tenths <= 10);
        CHECK(s.n == 10);
    }
    AttributePool tiny = {default_pool()[0]};
    CHECK_THROWS_AS(sample_case(tiny, rng, 10), PoolTooSmall);
}

TEST_CASE("generate_case examples") {
    auto c = generate_case(spec(8, 10, 42));
    CHECK(c.corpus_a.size() == 10);
    CHECK(c.corpus_b.size() == 10);
    CHECK(c.gold_support.size() == 8);
    for (int i = 0; i < 10; ++i) {
        const bool gold = c.gold_support.contains(i);
        CHECK((c.corpus_b[i].find(c.goal_dim.marker) != std::string::npos) == gold);
        CHECK(c.corpus_b[i].find(c.distractor_dim.marker) != std::string::npos);
        CHECK(c.corpus_a[i].find(c.goal_dim.marker) == std::string::npos);
        CHECK(c.corpus_a[i].find(c.distractor_dim.marker) != std::string::npos);
    }
    auto full = generate_case(spec(10, 10, 42));
    CHECK(full.gold_support.size() == 10);

    CHECK(generate_case(spec(8, 10, 42)) == c);
    CHECK(generate_case(spec(8, 10, 43)) != c);

    CHECK_THROWS_AS(generate_case(spec(5, 10, 1)), ValidationError);
    CHECK_THROWS_AS(generate_case(spec(8, 0, 1)), ValidationError);
    CaseSpec same = spec(8, 10, 1);
    same.distractor_dim = dim("topic", 1);
    CHECK_THROWS_AS(generate_case(same), ValidationError);
}

TEST_CASE("gold support size over random cases") {
    std::mt19937_64 rng(77);
    for (int i = 0; i < 200; ++i) {
        const int n = 5 + static_cast<int>(rng() % 46);
        auto s = sample_case(default_pool(), rng, n);
        s.seed = rng();
        auto c = generate_case(s);
        const int expected = static_cast<int>(std::lround(s.v_tenths * n / 10.0 + 1e-9));
        CHECK(static_cast<int>(c.gold_support.size()) == expected);
        CHECK(static_cast<int>(c.gold_support.size()) == gold_count(s.v_tenths, n));
    }
}

TEST_CASE("live writer output is used verbatim") {
    auto writer = scripted("w", {rule(provider::MatchKind::Substring, "astronomy", "Stars are bright, mate."),
                                 catch_all("Cheers, mate.")});
    auto c = generate_case(spec(6, 5, 3), writer.get());
    for (int i = 0; i < 5; ++i) {
        CHECK(c.corpus_b[i] == (c.gold_support.contains(i) ? "Stars are bright, mate." : "Cheers, mate."));
        CHECK(c.corpus_a[i] == "Cheers, mate.");
    }
}

TEST_CASE("score_coverage examples") {
    CHECK(score_coverage({1, 2, 3}, {2, 3, 4, 5}) == Coverage{2.0 / 3.0, 0.5});
    CHECK(score_coverage({}, {1}) == Coverage{1.0, 0.0});
    CHECK(score_coverage({}, {}) == Coverage{1.0, 1.0});
    CHECK(score_coverage({1}, {}) == Coverage{0.0, 1.0});
    std::mt19937_64 rng(4);
    for (int i = 0; i < 500; ++i) {
        std::set<int> p, g;
        const int n = 1 + static_cast<int>(rng() % 30);
        for (int k = 0; k < n; ++k) {
            if (rng() % 2) p.insert(k);
            if (rng() % 2) g.insert(k);
        }
        auto [bp, br] = brute_pr(p, g, n);
        auto cov = score_coverage(p, g);
        CHECK(cov.precision == bp);
        CHECK(cov.recall == br);
    }
}

TEST_CASE("relevance") {
    std::vector<std::optional<bool>> v = {true, true, false, true};
    CHECK(mean_relevance(v) == 0.75);
    std::vector<std::optional<bool>> gaps = {true, std::nullopt, false};
    CHECK(mean_relevance(gaps) == 0.5);
    CHECK_FALSE(mean_relevance(std::span<const std::optional<bool>>{}).has_value());

    const auto& goal = dim("topic");
    discovery::ErrorDescription hit;
    hit.text = marker_description(goal);
    discovery::ErrorDescription miss;
    miss.text = "is written in French";
    std::vector<discovery::ErrorDescription> descs = {miss, hit};
    CHECK(hermetic_relevant(descs, goal));
    CHECK_FALSE(hermetic_relevant(std::span(descs).first(1), goal));
    CHECK(goal_question(goal) == "How do the outputs differ in topic?");

    auto judge = scripted("j", {rule(provider::MatchKind::Substring, "French", "YES"), catch_all("NO")});
    CHECK(judged_relevant(descs, dim("language"), *judge));
    auto no = constant("j", "NO");
    CHECK_FALSE(judged_relevant(descs, goal, *no));
    CHECK_FALSE(judged_relevant(std::span<const discovery::ErrorDescription>{}, goal, *no));
    auto garbled = constant("j", "perhaps");
    CHECK_THROWS_AS(judged_relevant(descs, goal, *garbled), JudgeUnparseable);
}

TEST_CASE("hermetic end to end pipeline recovers gold support") {
    auto c = generate_case(spec(8, 20, 2026));
    auto hp = hermetic_providers(c);
    auto a = c.corpus(discovery::CorpusLabel::A);
    auto b = c.corpus(discovery::CorpusLabel::B);
    auto found = discovery::generate_differences(a, b, goal_question(c.goal_dim), *hp.generator);
    REQUIRE(hermetic_relevant(found.descriptions, c.goal_dim));
    const auto* desc = &found.descriptions.front();
    CHECK(desc->text == marker_description(c.goal_dim));
    auto support = discovery::select_support(*desc, b, *hp.selector);
    std::set<int> predicted;
    for (const auto& e : support.support) predicted.insert(e.test_id);
    auto cov = score_coverage(predicted, c.gold_support);
    auto [bp, br] = brute_pr(predicted, c.gold_support, c.n);
    CHECK(cov.precision == bp);
    CHECK(cov.recall == br);
    CHECK(predicted == c.gold_support);
}

TEST_CASE("bench over a hermetic dataset") {
    BenchOptions opts;
    opts.cases = 12;
    opts.n = 10;
    opts.seed = 5;
    auto data = build_dataset(opts);
    REQUIRE(data.size() == 12);
    CHECK(build_dataset(opts) == data);
    CHECK(case_seed(5, 0) != case_seed(5, 1));
    CHECK(case_seed(5, 0) == case_seed(5, 0));

    auto r = run_bench(data, opts);
    CHECK(r.hermetic);
    CHECK(r.cases.size() == 12);
    CHECK(r.relevance_goal == 1.0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    auto report = markdown_report(r);
    CHECK(report.find("Error Relevance") != std::string::npos);
    CHECK(report.find("w/ goal") != std::string::npos);
    CHECK(to_json(r)["cases"].size() == 12);

    BenchProviders partial;
    auto w = constant("w", "x");
    partial.writer = w.get();
    CHECK_THROWS_AS(run_bench(data, opts, partial), ValidationError);
}

TEST_CASE("fixed prevalence and default dataset size") {
    BenchOptions opts;
    CHECK(opts.cases == 100);
    opts.v_tenths = 7;
    opts.cases = 100;
    auto data = build_dataset(opts);
    REQUIRE(data.size() == 100);
    for (const auto& c : data) {
        CHECK(c.v_tenths == 7);
        CHECK(c.gold_support.size() == 7);
        CHECK(c.goal_dim.name != c.distractor_dim.name);
    }
}

TEST_CASE("dataset json round trip") {
    BenchOptions opts;
    opts.cases = 5;
    opts.seed = 8;
    auto data = build_dataset(opts);
    auto j = dataset_to_json(data);
    CHECK(dataset_from_json(j) == data);
    CHECK(dataset_from_json(nlohmann::json::parse(j.dump())) == data);
    CHECK(dim_from_json(to_json(data[0].goal_dim)) == data[0].goal_dim);
}
