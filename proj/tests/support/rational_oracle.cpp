#include "support/rational_oracle.hpp"

#include <gmp.h>

#include <cctype>
#include <cstdlib>
#include <stdexcept>
#include <vector>

namespace serc::testing {

namespace {

struct OracleError {
  OracleStatus status;
};

[[noreturn]] void fail(OracleStatus status) { throw OracleError{status}; }

class Mpq {
 public:
  Mpq() { mpq_init(q_); }
  Mpq(const Mpq& other) {
    mpq_init(q_);
    mpq_set(q_, other.q_);
  }
  Mpq& operator=(const Mpq& other) {
    mpq_set(q_, other.q_);
    return *this;
  }
  ~Mpq() { mpq_clear(q_); }

  mpq_t& raw() { return q_; }
  const mpq_t& raw() const { return q_; }

 private:
  mpq_t q_;
};

const Mpq& limit_1e300() {
  static const Mpq limit = [] {
    Mpq v;
    mpz_ui_pow_ui(mpq_numref(v.raw()), 10, 300);
    mpz_set_ui(mpq_denref(v.raw()), 1);
    return v;
  }();
  return limit;
}

void check_magnitude(const Mpq& v) {
  Mpq mag = v;
  mpq_abs(mag.raw(), mag.raw());
  if (mpq_cmp(mag.raw(), limit_1e300().raw()) > 0) {
    fail(OracleStatus::Overflow);
  }
}

enum class TokKind { Number, Plus, Minus, Mul, Div, Pow, UMinus, LParen, RParen };

struct Token {
  TokKind kind;
  std::string text;
};

bool follows_operand(const std::vector<Token>& toks) {
  if (toks.empty()) {
    return false;
  }
  TokKind k = toks.back().kind;
  return k == TokKind::Number || k == TokKind::RParen;
}

std::vector<Token> tokenize(const std::string& expr) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < expr.size()) {
    char c = expr[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t start = i;
      while (i < expr.size() && std::isdigit(static_cast<unsigned char>(expr[i]))) {
        ++i;
      }
      if (i < expr.size() && expr[i] == '.') {
        ++i;
        std::size_t frac = i;
        while (i < expr.size() && std::isdigit(static_cast<unsigned char>(expr[i]))) {
          ++i;
        }
        if (i == frac) {
          fail(OracleStatus::ParseError);
        }
      }
      out.push_back({TokKind::Number, expr.substr(start, i - start)});
      continue;
    }
    switch (c) {
      case '+':
        out.push_back({TokKind::Plus, "+"});
        break;
      case '-':
        out.push_back({follows_operand(out) ? TokKind::Minus : TokKind::UMinus, "-"});
        break;
      case '*':
        out.push_back({TokKind::Mul, "*"});
        break;
      case '/':
        out.push_back({TokKind::Div, "/"});
        break;
      case '^':
        out.push_back({TokKind::Pow, "^"});
        break;
      case '(':
        out.push_back({TokKind::LParen, "("});
        break;
      case ')':
        out.push_back({TokKind::RParen, ")"});
        break;
      default:
        fail(OracleStatus::ParseError);
    }
    ++i;
  }
  if (out.empty()) {
    fail(OracleStatus::ParseError);
  }
  return out;
}

int precedence(TokKind k) {
  switch (k) {
    case TokKind::UMinus:
      return 4;
    case TokKind::Pow:
      return 3;
    case TokKind::Mul:
    case TokKind::Div:
      return 2;
    default:
      return 1;
  }
}

bool left_assoc(TokKind k) { return k != TokKind::Pow && k != TokKind::UMinus; }

bool is_operator(TokKind k) {
  return k == TokKind::Plus || k == TokKind::Minus || k == TokKind::Mul ||
         k == TokKind::Div || k == TokKind::Pow || k == TokKind::UMinus;
}

std::vector<Token> to_rpn(const std::vector<Token>& toks) {
  std::vector<Token> output;
  std::vector<Token> ops;
  for (const Token& t : toks) {
    switch (t.kind) {
      case TokKind::Number:
        output.push_back(t);
        break;
      case TokKind::LParen:
        ops.push_back(t);
        break;
      case TokKind::RParen: {
        bool matched = false;
        while (!ops.empty()) {
          Token top = ops.back();
          ops.pop_back();
          if (top.kind == TokKind::LParen) {
            matched = true;
            break;
          }
          output.push_back(top);
        }
        if (!matched) {
          fail(OracleStatus::ParseError);
        }
        break;
      }
      default: {
        while (!ops.empty() && is_operator(ops.back().kind)) {
          int pt = precedence(ops.back().kind);
          int pc = precedence(t.kind);
          if (pt > pc || (pt == pc && left_assoc(t.kind))) {
            output.push_back(ops.back());
            ops.pop_back();
          } else {
            break;
          }
        }
        ops.push_back(t);
        break;
      }
    }
  }
  while (!ops.empty()) {
    if (ops.back().kind == TokKind::LParen) {
      fail(OracleStatus::ParseError);
    }
    output.push_back(ops.back());
    ops.pop_back();
  }
  return output;
}

Mpq number_from_text(const std::string& text) {
  Mpq value;
  auto dot = text.find('.');
  if (dot == std::string::npos) {
    if (mpq_set_str(value.raw(), text.c_str(), 10) != 0) {
      fail(OracleStatus::ParseError);
    }
  } else {
    std::string digits = text.substr(0, dot) + text.substr(dot + 1);
    std::size_t frac_len = text.size() - dot - 1;
    if (mpz_set_str(mpq_numref(value.raw()), digits.c_str(), 10) != 0) {
      fail(OracleStatus::ParseError);
    }
    mpz_ui_pow_ui(mpq_denref(value.raw()), 10, frac_len);
    mpq_canonicalize(value.raw());
  }
  check_magnitude(value);
  return value;
}

Mpq pow_mpq(const Mpq& base, const Mpq& exponent) {
  if (mpz_cmp_ui(mpq_denref(exponent.raw()), 1) != 0) {
    fail(OracleStatus::ParseError);
  }
  mpz_t abs_exp;
  mpz_init(abs_exp);
  mpz_abs(abs_exp, mpq_numref(exponent.raw()));
  bool too_big = mpz_cmp_ui(abs_exp, 4096) > 0;
  unsigned long mag = too_big ? 0 : mpz_get_ui(abs_exp);
  mpz_clear(abs_exp);
  if (too_big) {
    fail(OracleStatus::Overflow);
  }

  int exp_sign = mpq_sgn(exponent.raw());
  Mpq result;
  if (exp_sign == 0) {
    mpq_set_ui(result.raw(), 1, 1);
    return result;
  }
  if (mpq_sgn(base.raw()) == 0) {
    if (exp_sign < 0) {
      fail(OracleStatus::DivisionByZero);
    }
    mpq_set_ui(result.raw(), 0, 1);
    return result;
  }

  std::size_t num_bits = mpz_sizeinbase(mpq_numref(base.raw()), 2);
  std::size_t den_bits = mpz_sizeinbase(mpq_denref(base.raw()), 2);
  if (std::max(num_bits, den_bits) * mag > 2'000'000) {
    fail(OracleStatus::Overflow);
  }

  mpz_pow_ui(mpq_numref(result.raw()), mpq_numref(base.raw()), mag);
  mpz_pow_ui(mpq_denref(result.raw()), mpq_denref(base.raw()), mag);
  if (exp_sign < 0) {
    mpq_inv(result.raw(), result.raw());
  }
  mpq_canonicalize(result.raw());
  check_magnitude(result);
  return result;
}

Mpq eval_rpn(const std::vector<Token>& rpn) {
  std::vector<Mpq> stack;
  for (const Token& t : rpn) {
    if (t.kind == TokKind::Number) {
      stack.push_back(number_from_text(t.text));
      continue;
    }
    if (t.kind == TokKind::UMinus) {
      if (stack.empty()) {
        fail(OracleStatus::ParseError);
      }
      mpq_neg(stack.back().raw(), stack.back().raw());
      continue;
    }
    if (stack.size() < 2) {
      fail(OracleStatus::ParseError);
    }
    Mpq rhs = stack.back();
    stack.pop_back();
    Mpq lhs = stack.back();
    stack.pop_back();
    Mpq result;
    switch (t.kind) {
      case TokKind::Plus:
        mpq_add(result.raw(), lhs.raw(), rhs.raw());
        break;
      case TokKind::Minus:
        mpq_sub(result.raw(), lhs.raw(), rhs.raw());
        break;
      case TokKind::Mul:
        mpq_mul(result.raw(), lhs.raw(), rhs.raw());
        break;
      case TokKind::Div:
        if (mpq_sgn(rhs.raw()) == 0) {
          fail(OracleStatus::DivisionByZero);
        }
        mpq_div(result.raw(), lhs.raw(), rhs.raw());
        break;
      case TokKind::Pow:
        result = pow_mpq(lhs, rhs);
        break;
      default:
        fail(OracleStatus::ParseError);
    }
    if (t.kind != TokKind::Pow) {
      check_magnitude(result);
    }
    stack.push_back(result);
  }
  if (stack.size() != 1) {
    fail(OracleStatus::ParseError);
  }
  return stack.back();
}

std::string mpz_to_string(const mpz_t z) {
  char* raw = mpz_get_str(nullptr, 10, z);
  std::string out(raw);
  std::free(raw);
  return out;
}

}  // namespace

OracleResult oracle_eval(const std::string& expr) {
  try {
    Mpq value = eval_rpn(to_rpn(tokenize(expr)));
    OracleResult result;
    result.status = OracleStatus::Value;
    result.numerator = mpz_to_string(mpq_numref(value.raw()));
    result.denominator = mpz_to_string(mpq_denref(value.raw()));
    return result;
  } catch (const OracleError& e) {
    return OracleResult{e.status, "", ""};
  }
}

}  // namespace serc::testing
