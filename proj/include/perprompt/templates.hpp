// Copyright 2026 The perprompt Authors.
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

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace perprompt {

namespace assets {
// Raw template texts, compiled in from assets/templates/.
std::string_view generator_system();
std::string_view generator_user();
std::string_view judge();
std::string_view base_prompts_json();
}  // namespace assets

// Replaces each `{name}` placeholder in one left-to-right pass. Substituted
// text is never re-scanned, so values may contain placeholder syntax.
// Unknown `{...}` sequences are copied through unchanged.
std::string substitute(std::string_view tmpl,
                       const std::vector<std::pair<std::string_view, std::string_view>>& values);

// Base prompt per benchmark key (e.g. "gsm8k", "subj").
const std::map<std::string, std::string>& base_prompts();

}  // namespace perprompt
