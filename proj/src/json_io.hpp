/*
 * Copyright 2026 The as2t Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Internal JSON helpers shared by the library sources.

#ifndef AS2T_SRC_JSON_IO_HPP
#define AS2T_SRC_JSON_IO_HPP

#include <json.hpp>

#include "as2t/srs.hpp"

namespace as2t::detail {

using json = nlohmann::json;

json spec_to_json(const EmbedderSpec& s);
/// Missing keys keep their defaults.
EmbedderSpec spec_from_json(const json& j);

}  // namespace as2t::detail

#endif  // AS2T_SRC_JSON_IO_HPP
