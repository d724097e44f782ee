#include "convsql/types.hpp"

#include <cmath>
#include <sstream>

namespace convsql {

bool is_null(const Scalar& s) { return std::holds_alternative<std::monostate>(s); }

namespace {

std::string quote_sql_text(const std::string& text) {
    std::string out;
    out.reserve(text.size() + 2);
    out.push_back('\'');
    for (char c : text) {
        out.push_back(c);
        if (c == '\'') out.push_back('\'');
    }
    out.push_back('\'');
    return out;
}

std::string format_double(double v) {
    if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 1e15) {
        // Keep integral reals readable: 2 rather than 2.000000.
        std::ostringstream os;
        os << static_cast<long long>(v);
        return os.str();
    }
    std::ostringstream os;
    os.precision(15);
    os << v;
    return os.str();
}

}  // namespace

std::string scalar_to_sql_literal(const Scalar& s) {
    struct Visitor {
        std::string operator()(std::monostate) const { return "NULL"; }
        std::string operator()(std::int64_t v) const { return std::to_string(v); }
        std::string operator()(double v) const { return format_double(v); }
        std::string operator()(const std::string& v) const { return quote_sql_text(v); }
    };
    return std::visit(Visitor{}, s);
}

}  // namespace convsql
