#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <set>

#include "scdm/exprtree.hpp"

using namespace scdm;
using namespace scdm::build;

namespace {

ExprTree f_init_tree() { return mul(inner(rele(), sub(P(), diff())), disc()); }

bool has_code(const std::vector<Violation>& v, ViolationCode c) {
  for (const auto& x : v) {
    if (x.code == c) return true;
  }
  return false;
}

Bindings random_bindings(std::mt19937_64& rng, std::size_t L) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Bindings b{std::vector<double>(L), std::vector<double>(L), std::vector<double>(L), 0.0};
  for (std::size_t k = 0; k < L; ++k) {
    b.p[k] = u(rng);
    b.rele[k] = u(rng) < 0.5 ? 1.0 : 0.0;
    b.diff[k] = u(rng);
  }
  b.disc = 10.0 * u(rng);
  return b;
}

/// All valid trees of height <= 2, by exhaustive enumeration of shapes.
std::set<std::string> enumerate_valid_depth2() {
  std::vector<ExprTree> level0;
  for (Symbol t : kTerminals) level0.push_back(leaf(t));
  std::vector<ExprTree> level1 = level0;
  for (Symbol op : kOperators) {
    if (arity(op) == 1) {
      for (const auto& a : level0) level1.push_back(unary(op, a));
    } else {
      for (const auto& a : level0) {
        for (const auto& b : level0) level1.push_back(binary(op, a, b));
      }
    }
  }
  std::set<std::string> valid;
  for (Symbol op : kOperators) {
    if (arity(op) == 1) {
      for (const auto& a : level1) {
        auto t = unary(op, a);
        if (is_valid(t)) valid.insert(serialize(t));
      }
    } else {
      for (const auto& a : level1) {
        for (const auto& b : level1) {
          auto t = binary(op, a, b);
          if (is_valid(t)) valid.insert(serialize(t));
        }
      }
    }
  }
  for (const auto& a : level1) {
    if (is_valid(a)) valid.insert(serialize(a));
  }
  return valid;
}

}  // namespace

TEST(ExprTree, RejectsMalformedPrefix) {
  EXPECT_THROW(ExprTree({}), std::invalid_argument);
  EXPECT_THROW(ExprTree({Symbol::add, Symbol::proficiency}), std::invalid_argument);
  EXPECT_THROW(ExprTree({Symbol::proficiency, Symbol::relevance}), std::invalid_argument);
}

TEST(ExprTree, CountAndHeight) {
  const auto t = P();
  EXPECT_EQ(count_nodes(t), 1u);
  EXPECT_EQ(height(t), 0);
  // Mul, Inner, rele, Sub, P, diff, disc
  EXPECT_EQ(count_nodes(f_init_tree()), 7u);
  EXPECT_EQ(height(f_init_tree()), 3);
  const auto s = build::sigmoid(f_init_tree());
  EXPECT_EQ(count_nodes(s), 8u);
  EXPECT_EQ(height(s), 4);
}

TEST(ExprTree, SubtreeNavigation) {
  const auto t = f_init_tree();
  const auto ch = t.children(0);
  EXPECT_EQ(t.subtree(ch[0]), inner(rele(), sub(P(), diff())));
  EXPECT_EQ(t.subtree(ch[1]), disc());
  EXPECT_EQ(t.subtree_end(0), t.size());
  EXPECT_EQ(t.replace_subtree(ch[1], P()), mul(inner(rele(), sub(P(), diff())), P()));
  EXPECT_EQ(t.replace_subtree(0, rele()), rele());
}

TEST(KindCheck, Examples) {
  const auto a = kind_check(inner(rele(), sub(P(), diff())));
  ASSERT_TRUE(a.ok());
  EXPECT_EQ(*a.kind, ValueKind::scalar);

  const auto b = kind_check(inner(disc(), P()));
  EXPECT_FALSE(b.ok());
  EXPECT_FALSE(b.kind.has_value());
  ASSERT_EQ(b.violations.size(), 1u);
  EXPECT_EQ(b.violations[0].code, ViolationCode::kind_mismatch);
  EXPECT_EQ(b.violations[0].node, 0u);

  const auto c = kind_check(mul(inner(rele(), P()), disc()));
  ASSERT_TRUE(c.ok());
  EXPECT_EQ(*c.kind, ValueKind::scalar);
}

TEST(KindCheck, BroadcastRules) {
  EXPECT_EQ(*kind_check(mul(P(), disc())).kind, ValueKind::vector);
  EXPECT_EQ(*kind_check(add(disc(), diff())).kind, ValueKind::vector);
  EXPECT_EQ(*kind_check(build::tanh(P())).kind, ValueKind::vector);
  EXPECT_EQ(*kind_check(build::sigmoid(disc())).kind, ValueKind::scalar);
  const auto strict = kind_check(mul(P(), disc()), KindRules{false});
  EXPECT_FALSE(strict.ok());
}

TEST(KindCheck, ReportsAllViolations) {
  const auto t = add(inner(disc(), P()), inner(P(), disc()));
  EXPECT_EQ(kind_check(t).violations.size(), 2u);
}

TEST(Validate, Examples) {
  EXPECT_TRUE(validate(f_init_tree()).empty());

  const auto v = validate(build::sigmoid(disc()));
  EXPECT_TRUE(has_code(v, ViolationCode::missing_proficiency));
  EXPECT_TRUE(has_code(v, ViolationCode::missing_relevance));
  EXPECT_EQ(v.size(), 2u);

  const auto w = validate(sub(P(), rele()));
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].code, ViolationCode::non_scalar_output);
}

TEST(Eval, Examples) {
  const auto t = f_init_tree();
  EXPECT_DOUBLE_EQ(eval(t, Bindings{{0.5, 0.5}, {1, 0}, {0.5, 0.5}, 2.0}), 0.0);
  EXPECT_DOUBLE_EQ(eval(t, Bindings{{1, 0}, {1, 1}, {0, 0}, 1.0}), 1.0);
  const auto s = build::sigmoid(inner(rele(), sub(P(), P())));
  EXPECT_DOUBLE_EQ(eval(s, Bindings{{0.3, 0.9}, {1, 1}, {0, 0}, 1.0}), 0.5);
}

TEST(Eval, LengthMismatch) {
  EXPECT_THROW(eval(f_init_tree(), Bindings{{0.5, 0.5}, {1}, {0.5, 0.5}, 2.0}), std::invalid_argument);
}

TEST(Eval, PureAndFinite) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 300; ++i) {
    const auto t = random_tree(6, rng);
    const auto b = random_bindings(rng, 5);
    const double a = eval(t, b);
    const double c = eval(t, b);
    EXPECT_EQ(std::memcmp(&a, &c, sizeof a), 0);
    EXPECT_FALSE(std::isnan(a)) << to_infix(t);
  }
}

TEST(Eval, MonotoneInitialFunction) {
  std::mt19937_64 rng(8);
  const auto t = f_init_tree();
  std::uniform_real_distribution<double> u(0.0, 0.1);
  for (int i = 0; i < 2000; ++i) {
    auto b = random_bindings(rng, 6);
    const double before = eval(t, b);
    for (std::size_t k = 0; k < 6; ++k) {
      if (b.rele[k] != 1.0) continue;
      auto c = b;
      c.p[k] += u(rng);
      EXPECT_GE(eval(t, c), before);
    }
  }
}

TEST(RandomTree, AlwaysValidWithinDepth) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto t = random_tree(5, rng);
    EXPECT_TRUE(is_valid(t)) << to_infix(t);
    EXPECT_LE(t.height(), 5);
  }
}

TEST(RandomTree, DepthTwoMatchesEnumeration) {
  const auto valid = enumerate_valid_depth2();
  ASSERT_FALSE(valid.empty());
  EXPECT_TRUE(valid.count(serialize(inner(P(), rele()))));
  std::mt19937_64 rng(2);
  std::set<std::string> drawn;
  for (int i = 0; i < 3000; ++i) {
    const auto t = random_tree(2, rng);
    EXPECT_TRUE(valid.count(serialize(t))) << to_infix(t);
    drawn.insert(serialize(t));
  }
  EXPECT_GT(drawn.size(), 1u);
}

TEST(RandomTree, DeterministicForSeed) {
  std::mt19937_64 a(77), b(77);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(random_tree(5, a), random_tree(5, b));
}

TEST(RandomTree, Preconditions) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(random_tree(1, rng), std::invalid_argument);
  EXPECT_THROW(random_tree(5, rng, RandomTreeOptions{0, {}}), GenerationError);
}

TEST(KindSoundness, ScalarTreesNeverMismatchShapes) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> depth(2, 7);
  for (int i = 0; i < 2000; ++i) {
    const auto t = grow(rng, depth(rng));
    const auto kc = kind_check(t);
    if (!kc.ok() || *kc.kind != ValueKind::scalar) continue;
    EXPECT_NO_THROW(eval(t, random_bindings(rng, 4))) << to_infix(t);
  }
}

TEST(Printing, Infix) {
  EXPECT_EQ(to_infix(f_init_tree()), "((rele ∘ (P − diff)) × disc)");
  EXPECT_EQ(to_infix(build::tanh(add(P(), disc()))), "tanh((P + disc))");
  EXPECT_EQ(to_infix(build::sigmoid(disc())), "sigmoid(disc)");
}

TEST(Printing, StructuredRoundTrip) {
  EXPECT_EQ(serialize(f_init_tree()), "(mul (inner rele (sub P diff)) disc)");
  EXPECT_EQ(parse("(mul (inner rele (sub P diff)) disc)"), f_init_tree());
  EXPECT_EQ(parse("  (mul\n (inner rele (sub P diff))\tdisc)\n"), f_init_tree());
  EXPECT_EQ(parse("P"), P());
  std::mt19937_64 rng(4);
  for (int i = 0; i < 500; ++i) {
    const auto t = random_tree(6, rng);
    EXPECT_EQ(parse(serialize(t)), t);
  }
}

TEST(Printing, ParseErrors) {
  EXPECT_THROW(parse("(P ∘"), ParseError);
  EXPECT_THROW(parse("(mul P"), ParseError);
  EXPECT_THROW(parse("(mul P rele disc)"), ParseError);
  EXPECT_THROW(parse("(frob P rele)"), ParseError);
  EXPECT_THROW(parse("P rele"), ParseError);
  EXPECT_THROW(parse(""), ParseError);
  try {
    parse("(mul P)");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 6u);
  }
}

TEST(Printing, DotHasOneNodePerTreeNode) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto t = random_tree(5, rng);
    const auto dot = to_dot(t);
    std::size_t labels = 0;
    for (std::size_t pos = dot.find("[label"); pos != std::string::npos; pos = dot.find("[label", pos + 1)) ++labels;
    EXPECT_EQ(labels, t.size());
    EXPECT_EQ(dot.rfind("digraph", 0), 0u);
  }
}
