#include "serc/rational.hpp"

#include <cctype>
#include <cstdlib>
#include <limits>

#include "serc/errors.hpp"
#include "serc/util.hpp"

namespace serc {

namespace {

namespace mp = boost::multiprecision;

const BigInt& magnitude_limit() {
  static const BigInt limit = mp::pow(BigInt(10), 300);
  return limit;
}

void check_magnitude(const Rational& v) {
  BigInt num = mp::abs(mp::numerator(v));
  if (num > mp::denominator(v) * magnitude_limit()) {
    throw OverflowError("magnitude exceeds 1e300");
  }
}

std::size_t bit_width(const BigInt& v) {
  if (v.is_zero()) {
    return 1;
  }
  return static_cast<std::size_t>(mp::msb(mp::abs(v))) + 1;
}

Rational pow_rational(const Rational& base, const Rational& exponent) {
  if (mp::denominator(exponent) != 1) {
    throw ExprParseError("exponent must be an integer");
  }
  BigInt exp_int = mp::numerator(exponent);
  if (mp::abs(exp_int) > 4096) {
    throw OverflowError("exponent out of range");
  }
  long e = exp_int.convert_to<long>();
  if (e == 0) {
    return Rational(1);
  }
  if (base.is_zero()) {
    if (e < 0) {
      throw DivisionByZeroError("zero raised to a negative power");
    }
    return Rational(0);
  }

  BigInt num = mp::numerator(base);
  BigInt den = mp::denominator(base);
  unsigned long mag = static_cast<unsigned long>(e < 0 ? -e : e);
  std::size_t widest = std::max(bit_width(num), bit_width(den));
  if (widest * mag > 2'000'000) {
    throw OverflowError("power result too large");
  }
  BigInt pn = mp::pow(num, static_cast<unsigned>(mag));
  BigInt pd = mp::pow(den, static_cast<unsigned>(mag));
  if (e < 0) {
    std::swap(pn, pd);
  }
  if (pd < 0) {
    pn = -pn;
    pd = -pd;
  }
  Rational out(pn, pd);
  check_magnitude(out);
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  Rational run() {
    Rational value = expr();
    skip_ws();
    if (pos_ != text_.size()) {
      throw ExprParseError("unexpected input at offset " + std::to_string(pos_));
    }
    return value;
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  bool eat(char c) {
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Rational expr() {
    Rational value = term();
    for (;;) {
      if (eat('+')) {
        value += term();
      } else if (eat('-')) {
        value -= term();
      } else {
        break;
      }
      check_magnitude(value);
    }
    return value;
  }

  Rational term() {
    Rational value = factor();
    for (;;) {
      if (eat('*')) {
        value *= factor();
      } else if (eat('/')) {
        Rational rhs = factor();
        if (rhs.is_zero()) {
          throw DivisionByZeroError("division by zero");
        }
        value /= rhs;
      } else {
        break;
      }
      check_magnitude(value);
    }
    return value;
  }

  Rational factor() {
    Rational base = unary();
    if (eat('^')) {
      return pow_rational(base, factor());
    }
    return base;
  }

  Rational unary() {
    if (eat('-')) {
      return -unary();
    }
    return primary();
  }

  Rational primary() {
    char c = peek();
    if (c == '(') {
      ++pos_;
      Rational value = expr();
      if (!eat(')')) {
        throw ExprParseError("missing closing parenthesis");
      }
      return value;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      return number();
    }
    if (c == '\0') {
      throw ExprParseError("unexpected end of expression");
    }
    throw ExprParseError(std::string("unexpected character '") + c + "'");
  }

  Rational number() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
    BigInt whole(std::string(text_.substr(start, pos_ - start)));
    Rational value(whole);
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      std::size_t frac_start = pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        ++pos_;
      }
      if (pos_ == frac_start) {
        throw ExprParseError("digits required after decimal point");
      }
      std::string frac(text_.substr(frac_start, pos_ - frac_start));
      BigInt scale = mp::pow(BigInt(10), static_cast<unsigned>(frac.size()));
      value += Rational(BigInt(frac), scale);
    }
    check_magnitude(value);
    return value;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

// Decimal digit string for strtod: exact when the reduced denominator has
// only factors 2 and 5, otherwise 64 significant digits rounded half-up.
std::string decimal_bridge(const Rational& v) {
  BigInt num = mp::abs(mp::numerator(v));
  BigInt den = mp::denominator(v);
  bool negative = v < 0;

  unsigned twos = 0;
  unsigned fives = 0;
  BigInt rest = den;
  while (rest % 2 == 0) {
    rest /= 2;
    ++twos;
  }
  while (rest % 5 == 0) {
    rest /= 5;
    ++fives;
  }

  std::string digits;
  long exp10;
  if (rest == 1) {
    unsigned k = std::max(twos, fives);
    BigInt scaled = num * mp::pow(BigInt(10), k) / den;
    digits = scaled.str();
    exp10 = -static_cast<long>(k);
  } else {
    BigInt scaled_num = num * mp::pow(BigInt(10), 64);
    BigInt q = scaled_num / den;
    BigInt r = scaled_num % den;
    if (r * 2 >= den) {
      ++q;
    }
    digits = q.str();
    exp10 = -64;
  }
  std::string out = negative ? "-" : "";
  out += digits;
  out += "e";
  out += std::to_string(exp10);
  return out;
}

}  // namespace

Rational eval_expression_exact(std::string_view expr) {
  return Parser(expr).run();
}

double rational_to_double(const Rational& value) {
  if (value.is_zero()) {
    return 0.0;
  }
  return std::strtod(decimal_bridge(value).c_str(), nullptr);
}

std::string render_canonical(const Rational& value) {
  if (boost::multiprecision::denominator(value) == 1) {
    return boost::multiprecision::numerator(value).str();
  }
  return format_double(rational_to_double(value));
}

std::string eval_expression(std::string_view expr) {
  return render_canonical(eval_expression_exact(expr));
}

std::optional<Rational> parse_decimal(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) {
    ++begin;
  }
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) {
    --end;
  }
  if (begin == end) {
    return std::nullopt;
  }

  bool negative = false;
  if (text[begin] == '+' || text[begin] == '-') {
    negative = text[begin] == '-';
    ++begin;
  }
  std::size_t int_start = begin;
  while (begin < end && std::isdigit(static_cast<unsigned char>(text[begin]))) {
    ++begin;
  }
  if (begin == int_start) {
    return std::nullopt;
  }
  Rational value{BigInt(std::string(text.substr(int_start, begin - int_start)))};
  if (begin < end && text[begin] == '.') {
    ++begin;
    std::size_t frac_start = begin;
    while (begin < end && std::isdigit(static_cast<unsigned char>(text[begin]))) {
      ++begin;
    }
    if (begin == frac_start) {
      return std::nullopt;
    }
    std::string frac(text.substr(frac_start, begin - frac_start));
    BigInt scale = boost::multiprecision::pow(BigInt(10), static_cast<unsigned>(frac.size()));
    value += Rational(BigInt(frac), scale);
  }
  if (begin != end) {
    return std::nullopt;
  }
  return negative ? -value : value;
}

}  // namespace serc
