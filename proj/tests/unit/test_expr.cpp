#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "gpphs/expr.hpp"

using namespace gpphs;
using namespace gpphs::expr;

namespace {

double eval_at(const std::string& src, std::vector<double> x, ParamMap p = {}) {
  return parse_expr(src).eval(x, p);
}

/// Random trees over x1..x3 and parameters a, b with non-negative literals.
Expr random_tree(std::mt19937& rng, int depth) {
  std::uniform_int_distribution<int> pick(0, depth <= 0 ? 2 : 9);
  switch (pick(rng)) {
    case 0: return constant(std::uniform_int_distribution<int>(0, 40)(rng) / 8.0);
    case 1: return state(std::uniform_int_distribution<int>(1, 3)(rng));
    case 2: return param(std::uniform_int_distribution<int>(0, 1)(rng) ? "a" : "b");
    case 3: return neg(random_tree(rng, depth - 1));
    case 4: return expr::abs(random_tree(rng, depth - 1));
    case 5: return add(random_tree(rng, depth - 1), random_tree(rng, depth - 1));
    case 6: return sub(random_tree(rng, depth - 1), random_tree(rng, depth - 1));
    case 7: return mul(random_tree(rng, depth - 1), random_tree(rng, depth - 1));
    case 8: return div(random_tree(rng, depth - 1), add(constant(3.0), expr::abs(random_tree(rng, depth - 1))));
    default: return expr::pow(random_tree(rng, depth - 1), std::uniform_int_distribution<int>(0, 3)(rng));
  }
}

}  // namespace

TEST(Expr, EvaluatesArithmeticWithPrecedence) {
  EXPECT_DOUBLE_EQ(eval_at("1 + 2*3", {}), 7.0);
  EXPECT_DOUBLE_EQ(eval_at("(1 + 2)*3", {}), 9.0);
  EXPECT_DOUBLE_EQ(eval_at("8/4/2", {}), 1.0);
  EXPECT_DOUBLE_EQ(eval_at("5 - 3 - 1", {}), 1.0);
  EXPECT_DOUBLE_EQ(eval_at("-x1^2", {3.0}), -9.0);
  EXPECT_DOUBLE_EQ(eval_at("(-x1)^3", {2.0}), -8.0);
  EXPECT_DOUBLE_EQ(eval_at("2*-x1", {2.0}), -4.0);
  EXPECT_DOUBLE_EQ(eval_at("x1^0", {0.0}), 1.0);
  EXPECT_DOUBLE_EQ(eval_at("1.5e1 + .5", {}), 15.5);
}

TEST(Expr, StatesParametersAndAbs) {
  EXPECT_DOUBLE_EQ(eval_at("c*abs(x2)", {1.0, -2.5}, {{"c", 2.0}}), 5.0);
  EXPECT_DOUBLE_EQ(eval_at("x3^2*(0.1 + x1^2)", {1.0, 0.0, 2.0}), 4.4);
}

TEST(Expr, SyntaxErrorReportsOffset) {
  try {
    parse_expr("x1 + * 2");
    FAIL();
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.offset(), 5u);
    EXPECT_FALSE(e.expected().empty());
  }
  EXPECT_THROW(parse_expr(""), SyntaxError);
  EXPECT_THROW(parse_expr("(x1"), SyntaxError);
  EXPECT_THROW(parse_expr("x1 x2"), SyntaxError);
  EXPECT_THROW(parse_expr("x1^-1"), SyntaxError);
  EXPECT_THROW(parse_expr("abs x1"), SyntaxError);
}

TEST(Expr, DivisionByZeroIsEvalErrorWithOffset) {
  try {
    eval_at("1 + x1/x2", {1.0, 0.0});
    FAIL();
  } catch (const EvalError& e) {
    EXPECT_EQ(e.offset(), 6u);
  }
  const std::vector<std::string> names;
  const BoundExpr b(parse_expr("1/x1"), 1, names);
  const double zero = 0.0;
  EXPECT_THROW(b.eval(&zero, nullptr), EvalError);
}

TEST(Expr, UnboundNamesAreBindErrors) {
  EXPECT_THROW(eval_at("k*x1", {1.0}), BindError);
  const std::vector<std::string> names{"c"};
  EXPECT_THROW(BoundExpr(parse_expr("k"), 2, names), BindError);
  EXPECT_THROW(BoundExpr(parse_expr("x3"), 2, names), BindError);
  EXPECT_THROW(BoundExpr(parse_expr("x0"), 2, names), BindError);
}

TEST(Expr, BoundMatchesTreeEvaluation) {
  std::mt19937 rng(11);
  const std::vector<std::string> names{"a", "b"};
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 300; ++trial) {
    const Expr e = random_tree(rng, 4);
    const std::vector<double> x{u(rng), u(rng), u(rng)};
    const double p[2] = {u(rng), u(rng)};
    const BoundExpr b(e, 3, names);
    const double tree = e.eval(x, {{"a", p[0]}, {"b", p[1]}});
    EXPECT_DOUBLE_EQ(b.eval(x.data(), p), tree);
  }
}

TEST(Expr, PrintParseRoundTripIsIdentity) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const Expr e = random_tree(rng, 5);
    const std::string s = to_string(e);
    const Expr back = parse_expr(s);
    EXPECT_TRUE(back == e) << s << " reparsed as " << to_string(back);
  }
}

TEST(Expr, PrintingUsesMinimalParentheses) {
  EXPECT_EQ(to_string(parse_expr("(a*b) + c")), "a*b + c");
  EXPECT_EQ(to_string(parse_expr("a - (b - c)")), "a - (b - c)");
  EXPECT_EQ(to_string(parse_expr("(a - b) - c")), "a - b - c");
  EXPECT_EQ(to_string(parse_expr("a/(b*c)")), "a/(b*c)");
  EXPECT_EQ(to_string(parse_expr("(x1 + 1)^2")), "(x1 + 1)^2");
  EXPECT_EQ(to_string(parse_expr("0.1")), "0.1");
}

TEST(Expr, NegativeConstantsPrintAsNegation) {
  const Expr e = mul(constant(-2.0), state(1));
  const std::string s = to_string(e);
  EXPECT_EQ(s, "(-2)*x1");
  EXPECT_DOUBLE_EQ(parse_expr(s).eval(std::vector<double>{3.0}, {}), -6.0);
}

TEST(Expr, RewritesShiftStatesAndRenameParams) {
  const Expr e = parse_expr("c*x1 + x2");
  const Expr shifted = shift_states(e, 3);
  EXPECT_EQ(to_string(shifted), "c*x4 + x5");
  const Expr renamed = rename_params(e, {{"c", "c_2"}});
  EXPECT_EQ(to_string(renamed), "c_2*x1 + x2");
  std::set<std::string> ps;
  collect_params(renamed.root(), ps);
  EXPECT_EQ(ps, std::set<std::string>{"c_2"});
  EXPECT_EQ(max_state_index(shifted.root()), 5);
}
