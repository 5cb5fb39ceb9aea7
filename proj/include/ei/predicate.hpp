/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ei/rows.hpp"

/// Row filter language for dataset scans.
///
///   expr    := and ( "||" and )*
///   and     := cmp ( "&&" cmp )*
///   cmp     := unary ( ("==" | "!=" | "<" | "<=" | ">" | ">=") unary )?
///   unary   := "!" unary | atom
///   atom    := "(" expr ")" | "has" "(" column "," string ")" | "true" | "false"
///            | column | number | string
///
/// Strings are single-quoted with backslash escapes. Columns are `run`, `event` and the
/// stored value columns. Comparisons need two values of one type (numeric or string); `!`,
/// `&&` and `||` need boolean operands. All checks happen at parse time.
namespace ei::query {

class Predicate {
public:
    /// Raises PredicateError; the message carries the source and a caret under the offending token.
    static Predicate parse(std::string_view text);

    bool operator()(const rows::RowView& row) const;
    /// Canonical text; parsing it yields the same predicate.
    std::string str() const;
    /// Column names referenced, in first-use order.
    const std::vector<std::string>& columns() const { return columns_; }

    struct Node;

private:
    std::shared_ptr<const Node> root_;
    std::vector<std::string> columns_;
};

/// Every column name a predicate or a projection may use.
const std::vector<std::string>& column_names();
/// Value of a named column as text ("run" and "event" come from the key). Raises InvalidArgument.
std::string column_text(const rows::RowView& row, std::string_view column);

}  // namespace ei::query
