#pragma once

// Expression language for the entries of J(x), R(x) and G(x).
//
//   expr   := term (('+' | '-') term)*
//   term   := factor (('*' | '/') factor)*
//   factor := '-' factor | atom ('^' INT)?
//   atom   := NUMBER | IDENT | 'abs' '(' expr ')' | '(' expr ')'
//
// IDENTs of the form x<digits> are 1-based state references, every other
// identifier names a parameter. Only polynomials, quotients and |.| are
// expressible; transcendental functions would slot in as further atoms.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gpphs/errors.hpp"

namespace gpphs::expr {

enum class Op : std::uint8_t { constant, state, param, neg, abs, add, sub, mul, div, pow };

struct Node {
  Op op = Op::constant;
  double value = 0.0;        // constant
  int index = 0;             // state index (1-based) or integer exponent
  std::string name;          // parameter name
  std::shared_ptr<const Node> lhs;
  std::shared_ptr<const Node> rhs;
  std::size_t offset = 0;    // byte offset into the source, 0 for built nodes
};

using NodePtr = std::shared_ptr<const Node>;
using ParamMap = std::map<std::string, double, std::less<>>;

/// Immutable expression tree. Copies share nodes, so Expr values are cheap to
/// pass around and safe to evaluate from several threads.
class Expr {
 public:
  Expr() : root_(make_constant(0.0)) {}
  explicit Expr(NodePtr root) : root_(std::move(root)) {}

  const Node& root() const { return *root_; }
  const NodePtr& ptr() const { return root_; }

  double eval(std::span<const double> state, const ParamMap& params) const {
    return eval_node(*root_, state, params);
  }

  static NodePtr make_constant(double v, std::size_t offset = 0) {
    auto n = std::make_shared<Node>();
    n->op = Op::constant;
    n->value = v;
    n->offset = offset;
    return n;
  }

 private:
  static double eval_node(const Node& n, std::span<const double> state, const ParamMap& params) {
    switch (n.op) {
      case Op::constant:
        return n.value;
      case Op::state:
        if (n.index < 1 || static_cast<std::size_t>(n.index) > state.size()) {
          throw BindError("state reference x" + std::to_string(n.index) + " out of range 1.." +
                          std::to_string(state.size()));
        }
        return state[static_cast<std::size_t>(n.index - 1)];
      case Op::param: {
        auto it = params.find(n.name);
        if (it == params.end()) throw BindError("unbound parameter '" + n.name + "'");
        return it->second;
      }
      case Op::neg:
        return -eval_node(*n.lhs, state, params);
      case Op::abs:
        return std::fabs(eval_node(*n.lhs, state, params));
      case Op::add:
        return eval_node(*n.lhs, state, params) + eval_node(*n.rhs, state, params);
      case Op::sub:
        return eval_node(*n.lhs, state, params) - eval_node(*n.rhs, state, params);
      case Op::mul:
        return eval_node(*n.lhs, state, params) * eval_node(*n.rhs, state, params);
      case Op::div: {
        const double den = eval_node(*n.rhs, state, params);
        if (den == 0.0) {
          throw EvalError(n.offset, "division by zero at offset " + std::to_string(n.offset));
        }
        return eval_node(*n.lhs, state, params) / den;
      }
      case Op::pow:
        return ipow(eval_node(*n.lhs, state, params), n.index);
    }
    return 0.0;
  }

 public:
  /// Repeated multiplication; exponents are non-negative by grammar.
  static double ipow(double base, int exponent) {
    double r = 1.0;
    for (int i = 0; i < exponent; ++i) r *= base;
    return r;
  }

 private:
  NodePtr root_;
};

// -- builders ----------------------------------------------------------------

inline Expr constant(double v) { return Expr(Expr::make_constant(v)); }

inline Expr state(int index) {
  auto n = std::make_shared<Node>();
  n->op = Op::state;
  n->index = index;
  return Expr(n);
}

inline Expr param(std::string name) {
  auto n = std::make_shared<Node>();
  n->op = Op::param;
  n->name = std::move(name);
  return Expr(n);
}

namespace detail {
inline Expr unary(Op op, const Expr& a, std::size_t offset = 0) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->lhs = a.ptr();
  n->offset = offset;
  return Expr(n);
}
inline Expr binary(Op op, const Expr& a, const Expr& b, std::size_t offset = 0) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->lhs = a.ptr();
  n->rhs = b.ptr();
  n->offset = offset;
  return Expr(n);
}
}  // namespace detail

inline Expr neg(const Expr& a) { return detail::unary(Op::neg, a); }
inline Expr abs(const Expr& a) { return detail::unary(Op::abs, a); }
inline Expr add(const Expr& a, const Expr& b) { return detail::binary(Op::add, a, b); }
inline Expr sub(const Expr& a, const Expr& b) { return detail::binary(Op::sub, a, b); }
inline Expr mul(const Expr& a, const Expr& b) { return detail::binary(Op::mul, a, b); }
inline Expr div(const Expr& a, const Expr& b) { return detail::binary(Op::div, a, b); }
inline Expr pow(const Expr& a, int exponent) {
  auto n = std::make_shared<Node>();
  n->op = Op::pow;
  n->lhs = a.ptr();
  n->index = exponent;
  return Expr(n);
}

// -- structural queries ------------------------------------------------------

/// Structural equality; source offsets are ignored.
inline bool same_tree(const Node& a, const Node& b) {
  if (a.op != b.op) return false;
  switch (a.op) {
    case Op::constant:
      return a.value == b.value;
    case Op::state:
      return a.index == b.index;
    case Op::param:
      return a.name == b.name;
    case Op::neg:
    case Op::abs:
      return same_tree(*a.lhs, *b.lhs);
    case Op::pow:
      return a.index == b.index && same_tree(*a.lhs, *b.lhs);
    default:
      return same_tree(*a.lhs, *b.lhs) && same_tree(*a.rhs, *b.rhs);
  }
}

inline bool operator==(const Expr& a, const Expr& b) { return same_tree(a.root(), b.root()); }

inline void collect_params(const Node& n, std::set<std::string>& out) {
  if (n.op == Op::param) out.insert(n.name);
  if (n.lhs) collect_params(*n.lhs, out);
  if (n.rhs) collect_params(*n.rhs, out);
}

inline int max_state_index(const Node& n) {
  int m = n.op == Op::state ? n.index : 0;
  if (n.lhs) m = std::max(m, max_state_index(*n.lhs));
  if (n.rhs) m = std::max(m, max_state_index(*n.rhs));
  return m;
}

inline bool is_constant(const Expr& e, double v) {
  return e.root().op == Op::constant && e.root().value == v;
}

// -- rewriting ---------------------------------------------------------------

namespace detail {
template <class Fn>
NodePtr rewrite(const NodePtr& n, const Fn& leaf) {
  if (n->op == Op::state || n->op == Op::param) return leaf(n);
  if (!n->lhs) return n;
  auto copy = std::make_shared<Node>(*n);
  copy->lhs = rewrite(n->lhs, leaf);
  if (n->rhs) copy->rhs = rewrite(n->rhs, leaf);
  return copy;
}
}  // namespace detail

/// Adds `offset` to every state index (x1 -> x{1+offset}).
inline Expr shift_states(const Expr& e, int offset) {
  return Expr(detail::rewrite(e.ptr(), [offset](const NodePtr& n) -> NodePtr {
    if (n->op != Op::state) return n;
    auto copy = std::make_shared<Node>(*n);
    copy->index += offset;
    return copy;
  }));
}

inline Expr rename_params(const Expr& e, const std::map<std::string, std::string>& renames) {
  return Expr(detail::rewrite(e.ptr(), [&renames](const NodePtr& n) -> NodePtr {
    if (n->op != Op::param) return n;
    auto it = renames.find(n->name);
    if (it == renames.end()) return n;
    auto copy = std::make_shared<Node>(*n);
    copy->name = it->second;
    return copy;
  }));
}

// -- parser ------------------------------------------------------------------

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  Expr parse() {
    skip_ws();
    if (pos_ >= src_.size()) fail("number, identifier, '-', 'abs' or '('");
    Expr e = parse_expr();
    skip_ws();
    if (pos_ < src_.size()) fail("operator or end of input");
    return e;
  }

 private:
  Expr parse_expr() {
    Expr lhs = parse_term();
    for (;;) {
      skip_ws();
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) {
        const std::size_t at = pos_;
        const Op op = src_[pos_] == '+' ? Op::add : Op::sub;
        ++pos_;
        Expr rhs = parse_term();
        lhs = binary(op, lhs, rhs, at);
      } else {
        return lhs;
      }
    }
  }

  Expr parse_term() {
    Expr lhs = parse_factor();
    for (;;) {
      skip_ws();
      if (pos_ < src_.size() && (src_[pos_] == '*' || src_[pos_] == '/')) {
        const std::size_t at = pos_;
        const Op op = src_[pos_] == '*' ? Op::mul : Op::div;
        ++pos_;
        Expr rhs = parse_factor();
        lhs = binary(op, lhs, rhs, at);
      } else {
        return lhs;
      }
    }
  }

  Expr parse_factor() {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == '-') {
      const std::size_t at = pos_++;
      return unary(Op::neg, parse_factor(), at);
    }
    Expr base = parse_atom();
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == '^') {
      const std::size_t at = pos_++;
      skip_ws();
      const std::size_t start = pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      if (start == pos_) fail("integer exponent");
      int exponent = 0;
      auto [ptr, ec] = std::from_chars(src_.data() + start, src_.data() + pos_, exponent);
      if (ec != std::errc()) {
        pos_ = start;
        fail("integer exponent that fits in int");
      }
      auto n = std::make_shared<Node>();
      n->op = Op::pow;
      n->lhs = base.ptr();
      n->index = exponent;
      n->offset = at;
      return Expr(n);
    }
    return base;
  }

  Expr parse_atom() {
    skip_ws();
    if (pos_ >= src_.size()) fail("number, identifier, 'abs' or '('");
    const char c = src_[pos_];
    const std::size_t at = pos_;
    if (c == '(') {
      ++pos_;
      Expr inner = parse_expr();
      expect(')');
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                                    src_[pos_] == '_')) {
        ++pos_;
      }
      const std::string_view ident = src_.substr(at, pos_ - at);
      if (ident == "abs") {
        expect('(');
        Expr inner = parse_expr();
        expect(')');
        return unary(Op::abs, inner, at);
      }
      auto n = std::make_shared<Node>();
      n->offset = at;
      if (ident.size() > 1 && ident[0] == 'x' && all_digits(ident.substr(1))) {
        n->op = Op::state;
        auto [ptr, ec] = std::from_chars(ident.data() + 1, ident.data() + ident.size(), n->index);
        if (ec != std::errc()) {
          pos_ = at;
          fail("state index that fits in int");
        }
      } else {
        n->op = Op::param;
        n->name = std::string(ident);
      }
      return Expr(n);
    }
    fail("number, identifier, '-', 'abs' or '('");
  }

  Expr parse_number() {
    const std::size_t start = pos_;
    auto digits = [this] {
      std::size_t k = 0;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        ++pos_;
        ++k;
      }
      return k;
    };
    std::size_t mantissa = digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      ++pos_;
      mantissa += digits();
    }
    if (mantissa == 0) {
      pos_ = start;
      fail("digit");
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      ++pos_;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (digits() == 0) fail("exponent digits");
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(src_.data() + start, src_.data() + pos_, v);
    if (ec != std::errc() || ptr != src_.data() + pos_) {
      pos_ = start;
      fail("finite decimal number");
    }
    return Expr(Expr::make_constant(v, start));
  }

  static bool all_digits(std::string_view s) {
    for (char ch : s) {
      if (!std::isdigit(static_cast<unsigned char>(ch))) return false;
    }
    return !s.empty();
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= src_.size() || src_[pos_] != c) fail(std::string("'") + c + "'");
    ++pos_;
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& expected) const {
    std::string found = pos_ < src_.size() ? "'" + std::string(1, src_[pos_]) + "'" : "end of input";
    throw SyntaxError(pos_, expected,
                      "syntax error at offset " + std::to_string(pos_) + ": expected " + expected +
                          ", found " + found + " in \"" + std::string(src_) + "\"");
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses `source`; unknown identifiers are accepted here and rejected at bind time.
inline Expr parse_expr(std::string_view source) { return detail::Parser(source).parse(); }

// -- printing ----------------------------------------------------------------

namespace detail {

inline int precedence(Op op) {
  switch (op) {
    case Op::add:
    case Op::sub:
      return 1;
    case Op::mul:
    case Op::div:
      return 2;
    case Op::neg:
      return 3;
    case Op::pow:
      return 4;
    default:
      return 5;
  }
}

/// Shortest spelling that reads back to the same double.
inline std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline void print(const Node& n, std::string& out);

inline void print_child(const Node& child, bool parens, std::string& out) {
  if (parens) out += '(';
  print(child, out);
  if (parens) out += ')';
}

inline void print(const Node& n, std::string& out) {
  switch (n.op) {
    case Op::constant:
      if (n.value < 0 || std::signbit(n.value)) {
        // Literals are non-negative; spell negatives as a negation.
        out += "(-" + format_number(-n.value) + ")";
      } else {
        out += format_number(n.value);
      }
      return;
    case Op::state:
      out += "x" + std::to_string(n.index);
      return;
    case Op::param:
      out += n.name;
      return;
    case Op::abs:
      out += "abs(";
      print(*n.lhs, out);
      out += ')';
      return;
    case Op::neg:
      out += '-';
      print_child(*n.lhs, precedence(n.lhs->op) < 3, out);
      return;
    case Op::pow:
      print_child(*n.lhs, precedence(n.lhs->op) < 5, out);
      out += "^" + std::to_string(n.index);
      return;
    default: {
      const int p = precedence(n.op);
      print_child(*n.lhs, precedence(n.lhs->op) < p, out);
      switch (n.op) {
        case Op::add: out += " + "; break;
        case Op::sub: out += " - "; break;
        case Op::mul: out += "*"; break;
        default: out += "/"; break;
      }
      print_child(*n.rhs, precedence(n.rhs->op) <= p, out);
      return;
    }
  }
}

}  // namespace detail

/// Pretty-prints with the minimal parentheses needed to reparse to the same tree.
inline std::string to_string(const Expr& e) {
  std::string out;
  detail::print(e.root(), out);
  return out;
}

// -- bound (compiled) form ---------------------------------------------------

/// Postfix program with parameters resolved to positions in a value vector.
class BoundExpr {
 public:
  BoundExpr() = default;

  /// Resolves `e` against a state dimension and an ordered parameter list.
  BoundExpr(const Expr& e, int state_dim, std::span<const std::string> param_names) {
    emit(e.root(), state_dim, param_names);
    int depth = 0;
    for (const auto& ins : code_) {
      switch (ins.op) {
        case Op::constant:
        case Op::state:
        case Op::param:
          ++depth;
          break;
        case Op::add:
        case Op::sub:
        case Op::mul:
        case Op::div:
          --depth;
          break;
        default:
          break;
      }
      max_depth_ = std::max(max_depth_, depth);
    }
    constant_ = code_.size() == 1 && code_[0].op == Op::constant;
  }

  bool is_constant() const { return constant_; }

  double eval(const double* state, const double* params) const {
    if (constant_) return code_[0].value;
    double small[32] = {};
    std::vector<double> big;
    double* stack = small;
    if (max_depth_ > 32) {
      big.resize(static_cast<std::size_t>(max_depth_));
      stack = big.data();
    }
    int top = -1;
    for (const auto& ins : code_) {
      switch (ins.op) {
        case Op::constant: stack[++top] = ins.value; break;
        case Op::state: stack[++top] = state[ins.index]; break;
        case Op::param: stack[++top] = params[ins.index]; break;
        case Op::neg: stack[top] = -stack[top]; break;
        case Op::abs: stack[top] = std::fabs(stack[top]); break;
        case Op::pow: stack[top] = Expr::ipow(stack[top], ins.index); break;
        case Op::add: stack[top - 1] += stack[top]; --top; break;
        case Op::sub: stack[top - 1] -= stack[top]; --top; break;
        case Op::mul: stack[top - 1] *= stack[top]; --top; break;
        case Op::div:
          if (stack[top] == 0.0) {
            throw EvalError(ins.offset, "division by zero at offset " + std::to_string(ins.offset));
          }
          stack[top - 1] /= stack[top];
          --top;
          break;
      }
    }
    return stack[0];
  }

 private:
  struct Instr {
    Op op;
    int index;
    double value;
    std::size_t offset;
  };

  void emit(const Node& n, int state_dim, std::span<const std::string> names) {
    if (n.lhs) emit(*n.lhs, state_dim, names);
    if (n.rhs) emit(*n.rhs, state_dim, names);
    Instr ins{n.op, n.index, n.value, n.offset};
    if (n.op == Op::state) {
      if (n.index < 1 || n.index > state_dim) {
        throw BindError("state reference x" + std::to_string(n.index) + " outside 1.." +
                        std::to_string(state_dim));
      }
      ins.index = n.index - 1;
    } else if (n.op == Op::param) {
      auto it = std::find(names.begin(), names.end(), n.name);
      if (it == names.end()) throw BindError("undeclared parameter '" + n.name + "'");
      ins.index = static_cast<int>(it - names.begin());
    }
    code_.push_back(ins);
  }

  std::vector<Instr> code_;
  int max_depth_ = 0;
  bool constant_ = false;
};

}  // namespace gpphs::expr
