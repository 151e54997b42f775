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

#include <string_view>

// Prompt templates compiled in from assets/prompts/*.txt. Each name carries
// its asset version suffix; changing a template means adding a new file.
namespace retain::assets {

std::string_view generator_prompt_v1();
std::string_view baseline_prompt_v1();
std::string_view selector_prompt_v1();
std::string_view judge_prompt_v1();
std::string_view relevance_judge_prompt_v1();
std::string_view writer_prompt_v1();

} // namespace retain::assets
