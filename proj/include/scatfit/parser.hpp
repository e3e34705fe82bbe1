#pragma once

// Text form of expressions.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?           right-associative
//   primary := number | name | name '(' args ')' | '(' expr ')'
//
// Names resolve through the environment first, then the built-in constants
// `pi` and `e`. Functions: every unary op name (sin, cos, exp, log, sqrt,
// abs, conj, re, im, norm, ...) plus pow(a, b) and complex(re, im).

#include <map>
#include <string>
#include <string_view>

#include "scatfit/expr.hpp"

namespace scatfit {

using Environment = std::map<std::string, Expr, std::less<>>;

// Throws ParseError carrying the byte offset of the problem.
Expr parse(std::string_view text, const Environment& env = {});

// Fully parenthesized text that parse() maps back to an equivalent graph.
// Parameters and variables print by name.
std::string to_string(const Expr& e);

}  // namespace scatfit
