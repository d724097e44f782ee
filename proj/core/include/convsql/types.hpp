#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace convsql {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input files (datasets, schema catalogs, configs, scripts) that do not parse.
class ParseError : public Error {
public:
    using Error::Error;
};

class TokenizeError : public Error {
public:
    using Error::Error;
};

// Raw model output with no recognizable SQL statement.
class ExtractError : public Error {
public:
    using Error::Error;
};

class LlmError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// A prompt that cannot fit the token budget even with zero exemplars.
class BudgetError : public Error {
public:
    using Error::Error;
};

// One database cell. monostate encodes SQL NULL.
using Scalar = std::variant<std::monostate, std::int64_t, double, std::string>;
using Row = std::vector<Scalar>;

bool is_null(const Scalar& s);

// Renders a scalar the way it would appear in a SQL literal position:
// NULL, bare number, or single-quoted text with '' escaping.
std::string scalar_to_sql_literal(const Scalar& s);

}  // namespace convsql
