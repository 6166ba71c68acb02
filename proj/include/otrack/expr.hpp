#pragma once

#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "otrack/errors.hpp"

namespace otrack {

/// Tiny expression language over the two state variables x and y:
/// literals, + - * /, unary minus, ^ with a numeric-literal exponent, and
/// sin/cos/exp. Expressions carry analytic partial derivatives, which is all
/// the model zoo needs from user-supplied drift and gain formulas.
class Expr {
 public:
  using Ptr = std::shared_ptr<const Expr>;

  enum class Op { Const, Var, Add, Sub, Mul, Div, Neg, Pow, Sin, Cos, Exp };

  static Ptr constant(double v) { return make(Op::Const, v); }
  static Ptr var(int index) { return make(Op::Var, static_cast<double>(index)); }
  static Ptr add(Ptr a, Ptr b) { return simplify2(Op::Add, std::move(a), std::move(b)); }
  static Ptr sub(Ptr a, Ptr b) { return simplify2(Op::Sub, std::move(a), std::move(b)); }
  static Ptr mul(Ptr a, Ptr b) { return simplify2(Op::Mul, std::move(a), std::move(b)); }
  static Ptr div(Ptr a, Ptr b) { return simplify2(Op::Div, std::move(a), std::move(b)); }
  static Ptr neg(Ptr a) { return make(Op::Neg, 0.0, std::move(a)); }
  static Ptr pow(Ptr a, double e) { return make(Op::Pow, e, std::move(a)); }
  static Ptr sin(Ptr a) { return make(Op::Sin, 0.0, std::move(a)); }
  static Ptr cos(Ptr a) { return make(Op::Cos, 0.0, std::move(a)); }
  static Ptr exp(Ptr a) { return make(Op::Exp, 0.0, std::move(a)); }

  double eval(double x, double y) const {
    switch (op_) {
      case Op::Const: return value_;
      case Op::Var: return value_ == 0.0 ? x : y;
      case Op::Add: return lhs_->eval(x, y) + rhs_->eval(x, y);
      case Op::Sub: return lhs_->eval(x, y) - rhs_->eval(x, y);
      case Op::Mul: return lhs_->eval(x, y) * rhs_->eval(x, y);
      case Op::Div: return lhs_->eval(x, y) / rhs_->eval(x, y);
      case Op::Neg: return -lhs_->eval(x, y);
      case Op::Pow: return std::pow(lhs_->eval(x, y), value_);
      case Op::Sin: return std::sin(lhs_->eval(x, y));
      case Op::Cos: return std::cos(lhs_->eval(x, y));
      case Op::Exp: return std::exp(lhs_->eval(x, y));
    }
    return 0.0;
  }

  /// Partial derivative with respect to variable 0 (x) or 1 (y).
  Ptr diff(int var) const {
    switch (op_) {
      case Op::Const: return constant(0.0);
      case Op::Var: return constant(value_ == static_cast<double>(var) ? 1.0 : 0.0);
      case Op::Add: return add(lhs_->diff(var), rhs_->diff(var));
      case Op::Sub: return sub(lhs_->diff(var), rhs_->diff(var));
      case Op::Mul:
        return add(mul(lhs_->diff(var), rhs_), mul(lhs_, rhs_->diff(var)));
      case Op::Div:
        return div(sub(mul(lhs_->diff(var), rhs_), mul(lhs_, rhs_->diff(var))),
                   mul(rhs_, rhs_));
      case Op::Neg: return neg(lhs_->diff(var));
      case Op::Pow:
        return mul(mul(constant(value_), pow(lhs_, value_ - 1.0)), lhs_->diff(var));
      case Op::Sin: return mul(cos(lhs_), lhs_->diff(var));
      case Op::Cos: return neg(mul(sin(lhs_), lhs_->diff(var)));
      case Op::Exp: return mul(exp(lhs_), lhs_->diff(var));
    }
    return constant(0.0);
  }

  Expr(Op op, double value, Ptr lhs, Ptr rhs)
      : op_(op), value_(value), lhs_(std::move(lhs)), rhs_(std::move(rhs)) {}

 private:
  static Ptr make(Op op, double value, Ptr lhs = nullptr, Ptr rhs = nullptr) {
    return std::make_shared<const Expr>(op, value, std::move(lhs), std::move(rhs));
  }

  static bool is_const(const Ptr& e, double v) {
    return e->op_ == Op::Const && e->value_ == v;
  }

  // constant folding keeps derivative trees small
  static Ptr simplify2(Op op, Ptr a, Ptr b) {
    if (a->op_ == Op::Const && b->op_ == Op::Const) {
      switch (op) {
        case Op::Add: return constant(a->value_ + b->value_);
        case Op::Sub: return constant(a->value_ - b->value_);
        case Op::Mul: return constant(a->value_ * b->value_);
        case Op::Div: return constant(a->value_ / b->value_);
        default: break;
      }
    }
    if (op == Op::Add && is_const(a, 0.0)) return b;
    if ((op == Op::Add || op == Op::Sub) && is_const(b, 0.0)) return a;
    if (op == Op::Mul && (is_const(a, 0.0) || is_const(b, 0.0))) return constant(0.0);
    if (op == Op::Mul && is_const(a, 1.0)) return b;
    if ((op == Op::Mul || op == Op::Div) && is_const(b, 1.0)) return a;
    return make(op, 0.0, std::move(a), std::move(b));
  }

  Op op_;
  double value_;  // Const: value, Var: index, Pow: exponent
  Ptr lhs_, rhs_;
};

namespace detail {

class ExprParser {
 public:
  ExprParser(std::string text) : text_(std::move(text)) {}

  Expr::Ptr parse() {
    auto e = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::ExpressionParseError,
                msg + " at position " + std::to_string(pos_) + " in '" + text_ + "'");
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool consume(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  Expr::Ptr parse_expr() {
    auto e = parse_term();
    while (true) {
      if (consume('+'))
        e = Expr::add(e, parse_term());
      else if (consume('-'))
        e = Expr::sub(e, parse_term());
      else
        return e;
    }
  }

  Expr::Ptr parse_term() {
    auto e = parse_factor();
    while (true) {
      if (consume('*'))
        e = Expr::mul(e, parse_factor());
      else if (consume('/'))
        e = Expr::div(e, parse_factor());
      else
        return e;
    }
  }

  Expr::Ptr parse_factor() {
    if (consume('-')) return Expr::neg(parse_factor());
    if (consume('+')) return parse_factor();
    auto base = parse_atom();
    if (consume('^')) {
      const bool negexp = consume('-');
      const double e = parse_number();
      return Expr::pow(base, negexp ? -e : e);
    }
    return base;
  }

  double parse_number() {
    skip_ws();
    std::size_t consumed = 0;
    double v = 0.0;
    try {
      v = std::stod(text_.substr(pos_), &consumed);
    } catch (const std::exception&) {
      fail("expected a number");
    }
    pos_ += consumed;
    return v;
  }

  Expr::Ptr parse_atom() {
    const char c = peek();
    if (c == '(') {
      consume('(');
      auto e = parse_expr();
      if (!consume(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return Expr::constant(parse_number());
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::string name;
      while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_])))
        name += text_[pos_++];
      if (name == "x") return Expr::var(0);
      if (name == "y") return Expr::var(1);
      if (name == "pi") return Expr::constant(3.14159265358979323846);
      if (!consume('(')) fail("expected '(' after function name '" + name + "'");
      auto arg = parse_expr();
      if (!consume(')')) fail("expected ')'");
      if (name == "sin") return Expr::sin(arg);
      if (name == "cos") return Expr::cos(arg);
      if (name == "exp") return Expr::exp(arg);
      fail("unknown function '" + name + "'");
    }
    fail("unexpected character");
  }

  std::string text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Expr::Ptr parse_expression(const std::string& text) {
  return detail::ExprParser(text).parse();
}

}  // namespace otrack
