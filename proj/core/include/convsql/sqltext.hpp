#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace convsql {

enum class TokenKind { keyword, identifier, literal, op, punct };

struct SqlToken {
    std::string lexeme;
    TokenKind kind;
    bool operator==(const SqlToken&) const = default;
};

struct SqlTokenStream {
    std::vector<SqlToken> tokens;
};

// Keyword set comparison via Jaccard works on this fixed vocabulary.
// GROUP BY and ORDER BY are single members.
const std::vector<std::string>& syntax_vocabulary();

using SyntaxSet = std::set<std::string>;

// Case-insensitive keyword recognition; string literals kept intact as one
// token; ORDER BY / GROUP BY merged into single keyword tokens.
// Throws TokenizeError on an unterminated literal or empty input.
SqlTokenStream tokenize_sql(std::string_view sql);

// Vocabulary members present in sql. A `*` counts only where it acts as a
// binary operator (previous token is an identifier, literal or `)`), so
// select-star and count(*) do not contribute the `*` member. `<>` counts
// as `!=`. include_identifiers additionally adds identifier lexemes
// (uppercased) to the set, for experimentation.
SyntaxSet syntax_set(std::string_view sql, bool include_identifiers = false);

// |a n b| / |a u b|; 1.0 when both sets are empty.
double jaccard(const SyntaxSet& a, const SyntaxSet& b);

// Pulls the first SQL statement out of a raw model response: prefers fenced
// code blocks, starts at the first SELECT or CTE-shaped WITH (a WITH in
// prose such as "with this" is skipped), cuts at the first semicolon outside
// string literals, and trims it. Idempotent.
// Throws ExtractError when nothing SQL-like is present.
std::string extract_sql(std::string_view raw_response);

// True iff ORDER BY occurs at parenthesis depth zero.
bool has_top_level_order_by(std::string_view sql);

}  // namespace convsql
