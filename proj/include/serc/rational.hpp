#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <optional>
#include <string>
#include <string_view>

namespace serc {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

// Exact evaluation of + - * / ^ over decimal literals with parentheses.
// Unary minus binds tighter than ^, and ^ is right-associative with
// integer exponents. Magnitudes above 1e300 raise OverflowError.
Rational eval_expression_exact(std::string_view expr);

// Integers render bare; anything else renders as the shortest decimal
// form of the nearest double.
std::string render_canonical(const Rational& value);

double rational_to_double(const Rational& value);

std::string eval_expression(std::string_view expr);

// Strict decimal literal with optional sign ("-12.50" -> -25/2).
std::optional<Rational> parse_decimal(std::string_view text);

}  // namespace serc
