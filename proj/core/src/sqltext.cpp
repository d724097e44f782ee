#include "convsql/sqltext.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include "convsql/types.hpp"
#include "internal.hpp"

namespace convsql {

namespace {

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

bool is_word_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

const std::unordered_set<std::string>& sql_keywords() {
    static const std::unordered_set<std::string> kw = {
        "select", "from",   "where",     "group",  "order",  "by",     "having", "limit",
        "offset", "join",   "inner",     "left",   "right",  "full",   "outer",  "cross",
        "natural", "on",    "as",        "distinct", "and",  "or",     "not",    "in",
        "exists", "like",   "glob",      "between", "union", "intersect", "except", "all",
        "any",    "count",  "sum",       "avg",    "min",    "max",    "asc",    "desc",
        "is",     "null",   "case",      "when",   "then",   "else",   "end",    "cast",
        "with",   "values", "insert",    "into",   "update", "delete", "create", "table",
        "primary", "key",   "foreign",   "references"};
    return kw;
}

// Uppercase with internal whitespace collapsed, so "order   by" -> "ORDER BY".
std::string canonical_keyword(std::string_view lexeme) {
    std::string out;
    bool pending_space = false;
    for (char c : lexeme) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return out;
}

std::string strip_ident_quotes(std::string_view lexeme) {
    if (lexeme.size() >= 2) {
        const char a = lexeme.front(), b = lexeme.back();
        if ((a == '"' && b == '"') || (a == '`' && b == '`') || (a == '[' && b == ']'))
            return std::string(lexeme.substr(1, lexeme.size() - 2));
    }
    return std::string(lexeme);
}

}  // namespace

const std::vector<std::string>& syntax_vocabulary() {
    static const std::vector<std::string> vocab = {
        "SELECT", "FROM",    "WHERE",  "GROUP BY", "HAVING", "ORDER BY", "LIMIT", "JOIN",
        "ON",     "AS",      "DISTINCT", "AND",    "OR",     "NOT",      "IN",    "EXISTS",
        "LIKE",   "BETWEEN", "UNION",  "INTERSECT", "EXCEPT", "COUNT",   "SUM",   "AVG",
        "MIN",    "MAX",     "ASC",    "DESC",     "=",      "!=",       "<",     ">",
        "<=",     ">=",      "+",      "-",        "*",      "/"};
    return vocab;
}

SqlTokenStream tokenize_sql(std::string_view sql) {
    if (sql.empty()) throw TokenizeError("empty SQL input");

    SqlTokenStream stream;
    std::size_t i = 0;
    const std::size_t n = sql.size();

    while (i < n) {
        const char c = sql[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        // Comments.
        if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
            while (i < n && sql[i] != '\n') ++i;
            continue;
        }
        if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
            i += 2;
            while (i + 1 < n && !(sql[i] == '*' && sql[i + 1] == '/')) ++i;
            i = i + 1 < n ? i + 2 : n;
            continue;
        }
        // String literal, '' as embedded quote.
        if (c == '\'') {
            std::size_t start = i++;
            bool closed = false;
            while (i < n) {
                if (sql[i] == '\'') {
                    if (i + 1 < n && sql[i + 1] == '\'') {
                        i += 2;
                        continue;
                    }
                    ++i;
                    closed = true;
                    break;
                }
                ++i;
            }
            if (!closed) throw TokenizeError("unterminated string literal");
            stream.tokens.push_back({std::string(sql.substr(start, i - start)), TokenKind::literal});
            continue;
        }
        // Quoted identifiers: "x", `x`, [x].
        if (c == '"' || c == '`' || c == '[') {
            const char close = c == '[' ? ']' : c;
            std::size_t start = i++;
            bool closed = false;
            while (i < n) {
                if (sql[i] == close) {
                    if (close != ']' && i + 1 < n && sql[i + 1] == close) {
                        i += 2;
                        continue;
                    }
                    ++i;
                    closed = true;
                    break;
                }
                ++i;
            }
            if (!closed) throw TokenizeError("unterminated quoted identifier");
            stream.tokens.push_back(
                {std::string(sql.substr(start, i - start)), TokenKind::identifier});
            continue;
        }
        // Numbers.
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(sql[i + 1])))) {
            std::size_t start = i;
            while (i < n && (std::isdigit(static_cast<unsigned char>(sql[i])) || sql[i] == '.'))
                ++i;
            if (i < n && (sql[i] == 'e' || sql[i] == 'E')) {
                std::size_t j = i + 1;
                if (j < n && (sql[j] == '+' || sql[j] == '-')) ++j;
                if (j < n && std::isdigit(static_cast<unsigned char>(sql[j]))) {
                    i = j;
                    while (i < n && std::isdigit(static_cast<unsigned char>(sql[i]))) ++i;
                }
            }
            stream.tokens.push_back({std::string(sql.substr(start, i - start)), TokenKind::literal});
            continue;
        }
        // Words: keywords or identifiers.
        if (is_word_start(c)) {
            std::size_t start = i;
            while (i < n && is_word_char(sql[i])) ++i;
            std::string word(sql.substr(start, i - start));
            const std::string lower = detail::ascii_lower(word);
            if (sql_keywords().count(lower)) {
                // GROUP BY / ORDER BY become one token.
                if (lower == "by" && !stream.tokens.empty() &&
                    stream.tokens.back().kind == TokenKind::keyword) {
                    const std::string prev = detail::ascii_lower(stream.tokens.back().lexeme);
                    if (prev == "group" || prev == "order") {
                        stream.tokens.back().lexeme += " " + word;
                        continue;
                    }
                }
                stream.tokens.push_back({std::move(word), TokenKind::keyword});
            } else {
                stream.tokens.push_back({std::move(word), TokenKind::identifier});
            }
            continue;
        }
        // Multi-char operators first.
        if (i + 1 < n) {
            const std::string two{c, sql[i + 1]};
            if (two == "<=" || two == ">=" || two == "!=" || two == "<>" || two == "||") {
                stream.tokens.push_back({two, TokenKind::op});
                i += 2;
                continue;
            }
        }
        switch (c) {
            case '=': case '<': case '>': case '+': case '-': case '*': case '/': case '%':
                stream.tokens.push_back({std::string(1, c), TokenKind::op});
                break;
            default:
                stream.tokens.push_back({std::string(1, c), TokenKind::punct});
                break;
        }
        ++i;
    }

    if (stream.tokens.empty()) throw TokenizeError("no tokens in SQL input");
    return stream;
}

SyntaxSet syntax_set(std::string_view sql, bool include_identifiers) {
    static const std::unordered_set<std::string> vocab(syntax_vocabulary().begin(),
                                                       syntax_vocabulary().end());
    const SqlTokenStream stream = tokenize_sql(sql);
    SyntaxSet out;
    for (std::size_t i = 0; i < stream.tokens.size(); ++i) {
        const SqlToken& tok = stream.tokens[i];
        switch (tok.kind) {
            case TokenKind::keyword: {
                const std::string canon = canonical_keyword(tok.lexeme);
                if (vocab.count(canon)) out.insert(canon);
                break;
            }
            case TokenKind::op: {
                if (tok.lexeme == "<>") {
                    out.insert("!=");
                    break;
                }
                if (tok.lexeme == "*") {
                    // Only multiplication counts; select-star and count(*) do not.
                    if (i > 0) {
                        const SqlToken& prev = stream.tokens[i - 1];
                        const bool binary = prev.kind == TokenKind::identifier ||
                                            prev.kind == TokenKind::literal ||
                                            (prev.kind == TokenKind::punct && prev.lexeme == ")");
                        if (binary) out.insert("*");
                    }
                    break;
                }
                if (vocab.count(tok.lexeme)) out.insert(tok.lexeme);
                break;
            }
            case TokenKind::identifier:
                if (include_identifiers)
                    out.insert(detail::ascii_upper(strip_ident_quotes(tok.lexeme)));
                break;
            default:
                break;
        }
    }
    return out;
}

double jaccard(const SyntaxSet& a, const SyntaxSet& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& x : a) inter += b.count(x);
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

bool word_at(std::string_view text, std::size_t pos, std::string_view lower_word) {
    if (pos + lower_word.size() > text.size()) return false;
    for (std::size_t k = 0; k < lower_word.size(); ++k) {
        if (std::tolower(static_cast<unsigned char>(text[pos + k])) != lower_word[k]) return false;
    }
    if (pos > 0 && is_word_char(text[pos - 1])) return false;
    const std::size_t end = pos + lower_word.size();
    if (end < text.size() && is_word_char(text[end])) return false;
    return true;
}

std::size_t skip_ws(std::string_view text, std::size_t pos) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    return pos;
}

// A WITH only starts a statement when shaped like `WITH [RECURSIVE] name
// [(cols)] AS (`; prose such as "with this" is rejected.
bool cte_shaped(std::string_view text, std::size_t with_pos) {
    std::size_t p = skip_ws(text, with_pos + 4);
    if (word_at(text, p, "recursive")) p = skip_ws(text, p + 9);
    if (p >= text.size() || !is_word_start(text[p])) return false;
    while (p < text.size() && is_word_char(text[p])) ++p;
    p = skip_ws(text, p);
    if (p < text.size() && text[p] == '(') {
        int depth = 0;
        while (p < text.size()) {
            if (text[p] == '(') ++depth;
            else if (text[p] == ')' && --depth == 0) {
                ++p;
                break;
            }
            ++p;
        }
        p = skip_ws(text, p);
    }
    if (!word_at(text, p, "as")) return false;
    p = skip_ws(text, p + 2);
    return p < text.size() && text[p] == '(';
}

std::size_t find_sql_start(std::string_view text) {
    for (std::size_t pos = 0; pos < text.size(); ++pos) {
        if (word_at(text, pos, "select")) return pos;
        if (word_at(text, pos, "with") && cte_shaped(text, pos)) return pos;
    }
    return std::string_view::npos;
}

// Cut at the first ; or ``` outside single-quoted literals, then right-trim.
std::string cut_statement(std::string_view text) {
    bool in_literal = false;
    std::size_t end = text.size();
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\'') {
            in_literal = !in_literal;
            continue;
        }
        if (in_literal) continue;
        if (c == ';' || (c == '`' && text.compare(i, 3, "```") == 0)) {
            end = i;
            break;
        }
    }
    std::string_view cut = text.substr(0, end);
    while (!cut.empty() && std::isspace(static_cast<unsigned char>(cut.back())))
        cut.remove_suffix(1);
    return std::string(cut);
}

}  // namespace

std::string extract_sql(std::string_view raw_response) {
    // Fenced blocks first.
    std::size_t fence = raw_response.find("```");
    while (fence != std::string_view::npos) {
        std::size_t body_start = raw_response.find('\n', fence + 3);
        if (body_start == std::string_view::npos) body_start = fence + 3;
        else ++body_start;
        std::size_t close = raw_response.find("```", body_start);
        const std::string_view body = close == std::string_view::npos
                                          ? raw_response.substr(body_start)
                                          : raw_response.substr(body_start, close - body_start);
        const std::size_t start = find_sql_start(body);
        if (start != std::string_view::npos) {
            std::string sql = cut_statement(body.substr(start));
            if (!sql.empty()) return sql;
        }
        if (close == std::string_view::npos) break;
        fence = raw_response.find("```", close + 3);
    }

    const std::size_t start = find_sql_start(raw_response);
    if (start == std::string_view::npos)
        throw ExtractError("no SQL statement found in response");
    std::string sql = cut_statement(raw_response.substr(start));
    if (sql.empty()) throw ExtractError("no SQL statement found in response");
    return sql;
}

bool has_top_level_order_by(std::string_view sql) {
    const SqlTokenStream stream = tokenize_sql(sql);
    int depth = 0;
    for (const auto& tok : stream.tokens) {
        if (tok.kind == TokenKind::punct) {
            if (tok.lexeme == "(") ++depth;
            else if (tok.lexeme == ")") --depth;
            continue;
        }
        if (depth == 0 && tok.kind == TokenKind::keyword &&
            canonical_keyword(tok.lexeme) == "ORDER BY")
            return true;
    }
    return false;
}

}  // namespace convsql
