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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "retain/provider.hpp"

namespace retain::metrics {

inline constexpr std::string_view kBleu = "bleu";
inline constexpr std::string_view kSimilarity = "similarity";
inline constexpr std::string_view kAssertPrefix = "assert:";

struct MetricScore {
    std::string metric;
    double value = 0.0;
    /// Judge rationale, when the metric has one.
    std::optional<std::string> detail;
    /// Set when the score could not be computed; `value` is then meaningless.
    std::optional<std::string> error;

    bool ok() const noexcept { return !error.has_value(); }
    bool operator==(const MetricScore&) const = default;
};

/// Absolute margin on [0,1] scores within which two scores are equivalent.
class Tolerance {
public:
    Tolerance(std::string metric, double epsilon);

    const std::string& metric() const noexcept { return metric_; }
    double epsilon() const noexcept { return epsilon_; }

private:
    std::string metric_;
    double epsilon_;
};

enum class Verdict { Regression, Improvement, Equivalent };

std::string_view to_string(Verdict v);

struct RegressionVerdict {
    int test_id = 0;
    std::string metric;
    double old_score = 0.0;
    double new_score = 0.0;
    Verdict verdict = Verdict::Equivalent;

    bool operator==(const RegressionVerdict&) const = default;
};

struct AssertionMetric {
    std::string id;
    std::string rubric_text;
    std::string judge_provider_id;
    bool active = true;
    /// Error description this assertion was promoted from, if any.
    std::optional<std::string> source_error_id;

    std::string metric_name() const { return std::string(kAssertPrefix) + id; }
    bool operator==(const AssertionMetric&) const = default;
};

/// Smoothing mass substituted for a zero n-gram match count. Kept below
/// 0.01 so a candidate sharing no tokens with its reference always scores
/// below 0.01 regardless of length.
inline constexpr double kBleuSmoothing = 1e-3;
inline constexpr int kBleuMaxOrder = 4;

/// Sentence BLEU: clipped n-gram precisions for n = 1..min(4, |candidate|)
/// with uniform weights, add-epsilon smoothing for zero matches, and
/// brevity penalty exp(1 - r/c) when c <= r. Throws EmptyInput when either
/// side has no tokens.
double bleu(std::string_view candidate, std::string_view reference);

/// Greedy token matching F1 over embedding cosines (BERTScore-style, no IDF
/// weighting, no baseline rescaling). Identical tokens match with cosine 1.
double similarity(std::string_view candidate, std::string_view reference, provider::Provider& embedder);

struct JudgeVerdict {
    bool pass = false;
    std::string rationale;
};

std::string render_judge_prompt(std::string_view rubric, std::string_view output);

/// Finds the first standalone PASS or FAIL token. Throws JudgeUnparseable.
JudgeVerdict parse_judge_response(std::string_view response);

/// Asks `judge` at temperature 0 whether `output` satisfies the rubric.
MetricScore llm_judge(std::string_view output, const AssertionMetric& rubric, provider::Provider& judge);

/// Score resolution used when comparing deltas against a tolerance.
/// Differences below this are rounding noise from the [0,1] arithmetic.
inline constexpr double kScoreResolution = 1e-9;

Verdict classify_delta(double old_score, double new_score, double epsilon);

RegressionVerdict classify_regression(int test_id, double old_score, double new_score, const Tolerance& tol);

struct AggregateStat {
    std::optional<double> mean;
    std::size_t count = 0;
    /// Errored scores left out of the mean.
    std::size_t excluded = 0;

    bool operator==(const AggregateStat&) const = default;
};

/// Arithmetic mean per metric name over non-errored scores. Throws EmptyList
/// on an empty input.
std::map<std::string, AggregateStat> aggregate(std::span<const MetricScore> scores);

/// Uniform bins over [0,1]; bin i covers [i/bins, (i+1)/bins) except the
/// last, which is closed on the right. Out-of-range scores are clamped.
std::vector<std::size_t> histogram(std::span<const double> scores, int bins);

} // namespace retain::metrics
