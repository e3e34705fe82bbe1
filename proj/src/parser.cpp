#include "scatfit/parser.hpp"

#include <cctype>
#include <charconv>
#include <numbers>
#include <sstream>
#include <vector>

namespace scatfit {

namespace {

class Parser {
 public:
  Parser(std::string_view text, const Environment& env) : text_(text), env_(env) {}

  Expr parse_all() {
    Expr e = expression();
    skip_space();
    if (pos_ != text_.size())
      throw ParseError("syntax error: unexpected '" + std::string(1, text_[pos_]) + "'", pos_);
    return e;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) throw ParseError(std::string("syntax error: expected '") + c + "'", pos_);
  }

  Expr expression() {
    Expr lhs = term();
    for (;;) {
      if (accept('+'))
        lhs = lhs + term();
      else if (accept('-'))
        lhs = lhs - term();
      else
        return lhs;
    }
  }

  Expr term() {
    Expr lhs = unary();
    for (;;) {
      if (accept('*'))
        lhs = lhs * unary();
      else if (accept('/'))
        lhs = lhs / unary();
      else
        return lhs;
    }
  }

  Expr unary() {
    if (accept('-')) return -unary();
    if (accept('+')) return unary();
    return power();
  }

  Expr power() {
    Expr base = primary();
    if (accept('^')) return pow(base, unary());
    return base;
  }

  Expr primary() {
    skip_space();
    if (pos_ >= text_.size()) throw ParseError("syntax error: unexpected end of input", pos_);
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Expr e = expression();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return name();
    throw ParseError("syntax error: unexpected '" + std::string(1, c) + "'", pos_);
  }

  Expr number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
      ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
      if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) {
        while (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) ++p;
        pos_ = p;
      }
    }
    double value = 0.0;
    const char* first = text_.data() + start;
    const char* last = text_.data() + pos_;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) throw ParseError("syntax error: malformed number", start);
    return Expr(value);
  }

  Expr name() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    const std::string_view id = text_.substr(start, pos_ - start);
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == '(') {
      ++pos_;
      return call(id, start);
    }
    if (auto it = env_.find(id); it != env_.end()) return it->second;
    if (id == "pi") return Expr(std::numbers::pi);
    if (id == "e") return Expr(std::numbers::e);
    throw ParseError("unknown identifier '" + std::string(id) + "'", start);
  }

  Expr call(std::string_view fn, std::size_t fn_pos) {
    std::vector<Expr> args;
    if (!accept(')')) {
      do {
        args.push_back(expression());
      } while (accept(','));
      expect(')');
    }
    auto arity_check = [&](std::size_t n) {
      if (args.size() != n)
        throw ParseError("function '" + std::string(fn) + "' expects " + std::to_string(n) +
                             " argument(s), got " + std::to_string(args.size()),
                         fn_pos);
    };
    if (fn == "pow") {
      arity_check(2);
      return pow(args[0], args[1]);
    }
    if (fn == "complex") {
      arity_check(2);
      try {
        return make_complex(args[0], args[1]);
      } catch (const ValueError& e) {
        throw ParseError(e.what(), fn_pos);
      }
    }
    if (auto op = unary_op_from_name(fn)) {
      arity_check(1);
      try {
        return compose(*op, args[0]);
      } catch (const ValueError& e) {
        throw ParseError(e.what(), fn_pos);
      }
    }
    throw ParseError("unknown function '" + std::string(fn) + "'", fn_pos);
  }

  std::string_view text_;
  const Environment& env_;
  std::size_t pos_ = 0;
};

}  // namespace

Expr parse(std::string_view text, const Environment& env) {
  return Parser(text, env).parse_all();
}

std::string to_string(const Expr& e) {
  std::ostringstream os;
  e.node()->print(os);
  return os.str();
}

}  // namespace scatfit
