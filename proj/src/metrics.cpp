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

#include "retain/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "retain/config.hpp"
#include "retain/errors.hpp"
#include "retain/prompt_assets.hpp"
#include "retain/text.hpp"

namespace retain::metrics {

Tolerance::Tolerance(std::string metric, double epsilon) : metric_(std::move(metric)), epsilon_(epsilon) {
    if (!(epsilon_ >= 0.0)) throw ValidationError("tolerance for '" + metric_ + "' must be >= 0");
}

std::string_view to_string(Verdict v) {
    switch (v) {
    case Verdict::Regression: return "regression";
    case Verdict::Improvement: return "improvement";
    case Verdict::Equivalent: return "equivalent";
    }
    return "unknown";
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, int n) {
    NgramCounts counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

} // namespace

double bleu(std::string_view candidate, std::string_view reference) {
    auto cand = text::tokenize(candidate);
    auto ref = text::tokenize(reference);
    if (cand.empty()) throw EmptyInput("bleu candidate has no tokens");
    if (ref.empty()) throw EmptyInput("bleu reference has no tokens");

    const int max_order = std::min<int>(kBleuMaxOrder, static_cast<int>(cand.size()));
    double log_sum = 0.0;
    for (int n = 1; n <= max_order; ++n) {
        auto cand_counts = count_ngrams(cand, n);
        auto ref_counts = count_ngrams(ref, n);
        int matches = 0;
        for (const auto& [gram, count] : cand_counts) {
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matches += std::min(count, it->second);
        }
        const double total = static_cast<double>(cand.size() - n + 1);
        const double precision = matches == 0 ? kBleuSmoothing / total : matches / total;
        log_sum += std::log(precision);
    }
    const double c = static_cast<double>(cand.size());
    const double r = static_cast<double>(ref.size());
    const double brevity = c > r ? 1.0 : std::exp(1.0 - r / c);
    return std::clamp(brevity * std::exp(log_sum / max_order), 0.0, 1.0);
}

double similarity(std::string_view candidate, std::string_view reference, provider::Provider& embedder) {
    auto cand = text::tokenize(candidate);
    auto ref = text::tokenize(reference);
    if (cand.empty()) throw EmptyInput("similarity candidate has no tokens");
    if (ref.empty()) throw EmptyInput("similarity reference has no tokens");

    std::unordered_map<std::string, std::vector<double>> cache;
    auto vec = [&](const std::string& tok) -> const std::vector<double>& {
        auto it = cache.find(tok);
        if (it == cache.end()) it = cache.emplace(tok, embedder.embed(tok)).first;
        return it->second;
    };

    std::vector<std::vector<double>> sim(cand.size(), std::vector<double>(ref.size(), 0.0));
    for (std::size_t i = 0; i < cand.size(); ++i) {
        for (std::size_t j = 0; j < ref.size(); ++j) {
            sim[i][j] = cand[i] == ref[j] ? 1.0 : provider::cosine(vec(cand[i]), vec(ref[j]));
        }
    }
    double precision = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) precision += *std::max_element(sim[i].begin(), sim[i].end());
    precision /= static_cast<double>(cand.size());
    double recall = 0.0;
    for (std::size_t j = 0; j < ref.size(); ++j) {
        double best = sim[0][j];
        for (std::size_t i = 1; i < cand.size(); ++i) best = std::max(best, sim[i][j]);
        recall += best;
    }
    recall /= static_cast<double>(ref.size());
    if (precision + recall <= 0.0) return 0.0;
    return std::clamp(2.0 * precision * recall / (precision + recall), 0.0, 1.0);
}

std::string render_judge_prompt(std::string_view rubric, std::string_view output) {
    config::PromptTemplate tmpl{"judge", 1, std::string(assets::judge_prompt_v1())};
    return config::render_prompt(tmpl, {{"rubric", std::string(rubric)}, {"output", std::string(output)}});
}

namespace {

bool is_word_byte(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

std::string strip_separators(std::string_view s) {
    static constexpr std::string_view kSeparators[] = {"\xE2\x80\x94", "\xE2\x80\x93", "-", ":", ",", "."};
    std::string t = text::trim(s);
    for (bool again = true; again;) {
        again = false;
        for (auto sep : kSeparators) {
            if (std::string_view(t).starts_with(sep)) {
                t = text::trim(std::string_view(t).substr(sep.size()));
                again = true;
                break;
            }
        }
    }
    return t;
}

} // namespace

JudgeVerdict parse_judge_response(std::string_view response) {
    for (std::size_t i = 0; i + 4 <= response.size(); ++i) {
        auto word = response.substr(i, 4);
        if (word != "PASS" && word != "FAIL") continue;
        if (i > 0 && is_word_byte(response[i - 1])) continue;
        if (i + 4 < response.size() && is_word_byte(response[i + 4])) continue;
        auto rest = response.substr(i + 4);
        rest = rest.substr(0, rest.find('\n'));
        return JudgeVerdict{word == "PASS", strip_separators(rest)};
    }
    throw JudgeUnparseable("judge response has no PASS/FAIL verdict: '" + std::string(response.substr(0, 200)) + "'");
}

MetricScore llm_judge(std::string_view output, const AssertionMetric& rubric, provider::Provider& judge) {
    provider::CompletionRequest req{judge.id(), render_judge_prompt(rubric.rubric_text, output), 0.0, 256};
    auto result = judge.complete(req);
    auto verdict = parse_judge_response(result.text);
    MetricScore score{rubric.metric_name(), verdict.pass ? 1.0 : 0.0, std::nullopt, std::nullopt};
    if (!verdict.rationale.empty()) score.detail = verdict.rationale;
    return score;
}

Verdict classify_delta(double old_score, double new_score, double epsilon) {
    const double delta = std::round((new_score - old_score) / kScoreResolution);
    const double margin = std::round(epsilon / kScoreResolution);
    if (delta < -margin) return Verdict::Regression;
    if (delta > margin) return Verdict::Improvement;
    return Verdict::Equivalent;
}

RegressionVerdict classify_regression(int test_id, double old_score, double new_score, const Tolerance& tol) {
    return RegressionVerdict{test_id, tol.metric(), old_score, new_score,
                             classify_delta(old_score, new_score, tol.epsilon())};
}

std::map<std::string, AggregateStat> aggregate(std::span<const MetricScore> scores) {
    if (scores.empty()) throw EmptyList("aggregate over an empty score list");
    std::map<std::string, AggregateStat> out;
    std::map<std::string, double> sums;
    for (const auto& s : scores) {
        auto& stat = out[s.metric];
        if (!s.ok()) {
            ++stat.excluded;
            continue;
        }
        ++stat.count;
        sums[s.metric] += s.value;
    }
    for (auto& [metric, stat] : out) {
        if (stat.count > 0) stat.mean = sums[metric] / static_cast<double>(stat.count);
    }
    return out;
}

std::vector<std::size_t> histogram(std::span<const double> scores, int bins) {
    if (bins < 1) throw ValidationError("histogram needs at least one bin");
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (double s : scores) {
        double v = std::clamp(s, 0.0, 1.0);
        auto idx = static_cast<std::size_t>(std::floor(v * bins));
        counts[std::min(idx, counts.size() - 1)]++;
    }
    return counts;
}

} // namespace retain::metrics
