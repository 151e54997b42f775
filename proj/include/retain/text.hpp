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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace retain::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Lowercases, trims, and collapses internal whitespace runs to one space.
std::string normalize(std::string_view s);

/// Metric tokenizer shared by BLEU and similarity: ASCII-lowercase, then
/// split on whitespace and ASCII punctuation. Punctuation is dropped.
/// Bytes >= 0x80 are treated as word characters so UTF-8 text survives.
std::vector<std::string> tokenize(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);

bool starts_with_ci(std::string_view s, std::string_view prefix);
bool contains_ci(std::string_view haystack, std::string_view needle);

void replace_all(std::string& s, std::string_view from, std::string_view to);

/// Hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data);

/// Current UTC time as `YYYY-MM-DDTHH:MM:SS.mmmZ`.
std::string utc_timestamp();

} // namespace retain::text
