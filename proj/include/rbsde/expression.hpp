#pragma once

// Arithmetic expressions over named variables, compiled to a small stack
// program. Grammar:
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | primary
//   primary := number | variable | func '(' expr (',' expr)* ')' | '(' expr ')'
//   func    := max | min | abs | exp

#include <cctype>
#include <cmath>
#include <algorithm>
#include <cstdlib>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "rbsde/errors.hpp"

namespace rbsde {

class Expression {
 public:
  Expression() = default;

  static Expression parse(const std::string& text, std::vector<std::string> variables) {
    Expression e;
    e.text_ = text;
    e.variables_ = std::move(variables);
    Parser parser{text, e.variables_, e.program_};
    parser.parse();
    e.stack_depth_ = parser.max_depth;
    return e;
  }

  const std::string& text() const { return text_; }
  const std::vector<std::string>& variables() const { return variables_; }

  double operator()(std::span<const double> values) const {
    double stack[kMaxDepth];
    int top = -1;
    for (const Instr& in : program_) {
      switch (in.op) {
        case Op::Const: stack[++top] = in.value; break;
        case Op::Var: stack[++top] = values[in.index]; break;
        case Op::Neg: stack[top] = -stack[top]; break;
        case Op::Abs: stack[top] = std::abs(stack[top]); break;
        case Op::Exp: stack[top] = std::exp(stack[top]); break;
        case Op::Add: stack[top - 1] += stack[top]; --top; break;
        case Op::Sub: stack[top - 1] -= stack[top]; --top; break;
        case Op::Mul: stack[top - 1] *= stack[top]; --top; break;
        case Op::Div: stack[top - 1] /= stack[top]; --top; break;
        case Op::Max: stack[top - 1] = std::max(stack[top - 1], stack[top]); --top; break;
        case Op::Min: stack[top - 1] = std::min(stack[top - 1], stack[top]); --top; break;
      }
    }
    return stack[0];
  }

  double operator()(std::initializer_list<double> values) const {
    return (*this)(std::span<const double>(values.begin(), values.size()));
  }

 private:
  static constexpr int kMaxDepth = 64;

  enum class Op { Const, Var, Neg, Abs, Exp, Add, Sub, Mul, Div, Max, Min };
  struct Instr {
    Op op;
    double value = 0.0;
    std::size_t index = 0;
  };

  struct Parser {
    const std::string& src;
    const std::vector<std::string>& vars;
    std::vector<Instr>& out;
    std::size_t pos = 0;
    int depth = 0;
    int max_depth = 0;

    [[noreturn]] void fail(const std::string& what) const {
      throw Error(ErrorCode::ParseError, what + " at offset " + std::to_string(pos) + " in '" + src + "'");
    }

    void emit(Op op, int delta, double value = 0.0, std::size_t index = 0) {
      out.push_back({op, value, index});
      depth += delta;
      max_depth = std::max(max_depth, depth);
      if (max_depth >= kMaxDepth) fail("expression too deeply nested");
    }

    void skip() {
      while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }

    bool accept(char c) {
      skip();
      if (pos < src.size() && src[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    void expect(char c) {
      if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    void parse() {
      expr();
      skip();
      if (pos != src.size()) fail("unexpected trailing input");
      if (out.empty()) fail("empty expression");
    }

    void expr() {
      term();
      for (;;) {
        if (accept('+')) {
          term();
          emit(Op::Add, -1);
        } else if (accept('-')) {
          term();
          emit(Op::Sub, -1);
        } else {
          return;
        }
      }
    }

    void term() {
      unary();
      for (;;) {
        if (accept('*')) {
          unary();
          emit(Op::Mul, -1);
        } else if (accept('/')) {
          unary();
          emit(Op::Div, -1);
        } else {
          return;
        }
      }
    }

    void unary() {
      if (accept('-')) {
        unary();
        emit(Op::Neg, 0);
      } else if (accept('+')) {
        unary();
      } else {
        primary();
      }
    }

    void primary() {
      skip();
      if (pos >= src.size()) fail("unexpected end of input");
      const char c = src[pos];
      if (accept('(')) {
        expr();
        expect(')');
        return;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        const char* begin = src.c_str() + pos;
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        if (end == begin) fail("bad number");
        pos += static_cast<std::size_t>(end - begin);
        emit(Op::Const, 1, v);
        return;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const std::size_t start = pos;
        while (pos < src.size() && (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_')) ++pos;
        const std::string name = src.substr(start, pos - start);
        if (name == "max" || name == "min") {
          expect('(');
          expr();
          int args = 1;
          while (accept(',')) {
            expr();
            emit(name == "max" ? Op::Max : Op::Min, -1);
            ++args;
          }
          expect(')');
          if (args < 2) fail(name + " needs at least two arguments");
          return;
        }
        if (name == "abs" || name == "exp") {
          expect('(');
          expr();
          expect(')');
          emit(name == "abs" ? Op::Abs : Op::Exp, 0);
          return;
        }
        for (std::size_t i = 0; i < vars.size(); ++i) {
          if (vars[i] == name) {
            emit(Op::Var, 1, 0.0, i);
            return;
          }
        }
        pos = start;
        fail("unknown identifier '" + name + "'");
      }
      fail(std::string("unexpected character '") + c + "'");
    }
  };

  std::string text_;
  std::vector<std::string> variables_;
  std::vector<Instr> program_;
  int stack_depth_ = 0;
};

}  // namespace rbsde
