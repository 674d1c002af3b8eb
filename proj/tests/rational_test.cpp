#include "serc/rational.hpp"

#include <random>
#include <string>

#include "doctest.h"
#include "serc/errors.hpp"
#include "support/expr_gen.hpp"
#include "support/rational_oracle.hpp"

using namespace serc;
using serc::testing::OracleStatus;

namespace {

struct Classified {
  OracleStatus status;
  std::string num;
  std::string den;
};

Classified classify_impl(const std::string& expr) {
  try {
    Rational v = eval_expression_exact(expr);
    return {OracleStatus::Value, boost::multiprecision::numerator(v).str(),
            boost::multiprecision::denominator(v).str()};
  } catch (const DivisionByZeroError&) {
    return {OracleStatus::DivisionByZero, "", ""};
  } catch (const OverflowError&) {
    return {OracleStatus::Overflow, "", ""};
  } catch (const ExprParseError&) {
    return {OracleStatus::ParseError, "", ""};
  }
}

}  // namespace

TEST_SUITE("rational") {
  TEST_CASE("basic arithmetic renders exactly") {
    CHECK(eval_expression("(3+4)*2") == "14");
    CHECK(eval_expression("10/4") == "2.5");
    CHECK(eval_expression("2^10") == "1024");
    CHECK(eval_expression(" 1 + 2 ") == "3");
    CHECK(eval_expression("1000000/1000") == "1000");
    CHECK(eval_expression("7/2") == "3.5");
    CHECK(eval_expression("-7/2") == "-3.5");
  }

  TEST_CASE("exactness where binary floating point fails") {
    CHECK(eval_expression("0.1+0.2") == "0.3");
    CHECK(eval_expression("0.1+0.2-0.3") == "0");
    CHECK(eval_expression("1/3") == "0.3333333333333333");
    CHECK(eval_expression("2/3") == "0.6666666666666666");
  }

  TEST_CASE("power semantics") {
    CHECK(eval_expression("2^-2") == "0.25");
    CHECK(eval_expression("(-2)^3") == "-8");
    CHECK(eval_expression("-2^2") == "4");  // unary minus binds tighter
    CHECK(eval_expression("2^3^2") == "512");
    CHECK(eval_expression("2^(4/2)") == "4");
    CHECK(eval_expression("0^0") == "1");
    CHECK(eval_expression("0^3") == "0");
    CHECK_THROWS_AS(eval_expression("2^2.5"), ExprParseError);
    CHECK_THROWS_AS(eval_expression("0^-1"), DivisionByZeroError);
  }

  TEST_CASE("large magnitudes and the overflow boundary") {
    std::string raised = eval_expression("10^300");
    CHECK(raised.size() == 301);
    CHECK(raised[0] == '1');
    CHECK_THROWS_AS(eval_expression("10^301"), OverflowError);
    CHECK_THROWS_AS(eval_expression("10^300*10"), OverflowError);
    CHECK_THROWS_AS(eval_expression("10^400"), OverflowError);
    CHECK_THROWS_AS(eval_expression("2^5000"), OverflowError);
    CHECK(eval_expression("10^300/10^300") == "1");
    // tiny values are fine; only magnitude above 1e300 trips the guard
    CHECK(eval_expression("1/10^300") == "1e-300");
  }

  TEST_CASE("parse failures") {
    CHECK_THROWS_AS(eval_expression(""), ExprParseError);
    CHECK_THROWS_AS(eval_expression("2*(3"), ExprParseError);
    CHECK_THROWS_AS(eval_expression("abc"), ExprParseError);
    CHECK_THROWS_AS(eval_expression("1."), ExprParseError);
    CHECK_THROWS_AS(eval_expression(".5"), ExprParseError);
    CHECK_THROWS_AS(eval_expression("1+"), ExprParseError);
    CHECK_THROWS_AS(eval_expression("1 2"), ExprParseError);
  }

  TEST_CASE("division by zero") {
    CHECK_THROWS_AS(eval_expression("1/0"), DivisionByZeroError);
    CHECK_THROWS_AS(eval_expression("5/(3-3)"), DivisionByZeroError);
    CHECK_THROWS_AS(eval_expression("(1/0)*0"), DivisionByZeroError);
  }

  TEST_CASE("parse_decimal") {
    CHECK(parse_decimal("21.0") == Rational(21));
    CHECK(parse_decimal("21") == Rational(21));
    CHECK(parse_decimal(" -12.50 ") == Rational(-25, 2));
    CHECK(parse_decimal("+3.5") == Rational(7, 2));
    CHECK(!parse_decimal("1e5").has_value());
    CHECK(!parse_decimal("").has_value());
    CHECK(!parse_decimal("1.2.3").has_value());
    CHECK(!parse_decimal("abc").has_value());
    CHECK(!parse_decimal("1.").has_value());
  }

  TEST_CASE("agreement with the GMP oracle on random expressions") {
    std::mt19937_64 rng(20260816);
    std::uniform_int_distribution<int> depth(1, 6);
    int value_count = 0;
    for (int i = 0; i < 10000; ++i) {
      std::string expr = serc::testing::random_expression(rng, depth(rng));
      Classified mine = classify_impl(expr);
      auto oracle = serc::testing::oracle_eval(expr);
      REQUIRE_MESSAGE(mine.status == oracle.status, "expr: ", expr);
      if (mine.status == OracleStatus::Value) {
        ++value_count;
        REQUIRE_MESSAGE(mine.num == oracle.numerator, "expr: ", expr);
        REQUIRE_MESSAGE(mine.den == oracle.denominator, "expr: ", expr);
      }
    }
    // the sweep must mostly exercise real values, not error paths
    CHECK(value_count > 5000);
  }
}
