#include <doctest.h>

#include <functional>
#include <string>

#include "oracles.hpp"
#include "stare/error.hpp"
#include "stare/parse_tree.hpp"

using namespace stare;

namespace {

ParseTree leaf(const std::string& label) { return ParseTree(label); }
ParseTree node(const std::string& label, std::vector<ParseTree> children) {
  return ParseTree(label, std::move(children));
}

std::size_t count_nodes(const ParseTree& t) {
  std::size_t n = 1;
  for (const auto& c : t.children()) n += count_nodes(c);
  return n;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::Format;
}

}  // namespace

TEST_SUITE("parse_trees") {
  TEST_CASE("bracketed weather example") {
    const auto t = parse_bracketed("[IN:GET_WEATHER [SL:DATE_TIME for tomorrow ] ]");
    CHECK(t == node("IN:GET_WEATHER", {node("SL:DATE_TIME", {leaf("for tomorrow")})}));
    CHECK(t.size() == 3);
  }

  TEST_CASE("bracketed smallest input") {
    const auto t = parse_bracketed("[A ]");
    CHECK(t == leaf("A"));
    CHECK(t.size() == 1);
  }

  TEST_CASE("bracketed spans between children become one leaf each") {
    const auto t = parse_bracketed("[IN:X [SL:A me ] tell Angie [SL:B Friday ] ]");
    CHECK(t == node("IN:X", {node("SL:A", {leaf("me")}), leaf("tell angie"), node("SL:B", {leaf("friday")})}));
  }

  TEST_CASE("bracketed errors") {
    CHECK(code_of([] { parse_bracketed(""); }) == ErrorCode::EmptyInput);
    CHECK(code_of([] { parse_bracketed("   "); }) == ErrorCode::EmptyInput);
    CHECK(code_of([] { parse_bracketed("[IN:A [SL:B x ]"); }) == ErrorCode::UnbalancedBrackets);
    CHECK(code_of([] { parse_bracketed("[IN:A ] ]"); }) == ErrorCode::UnbalancedBrackets);
  }

  TEST_CASE("unbalanced bracket error reports a position") {
    try {
      parse_bracketed("[IN:A [SL:B x ]");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.position().has_value());
    }
  }

  TEST_CASE("sexpr examples") {
    CHECK(parse_sexpr("(Yield (Thursday))") == node("Yield", {leaf("Thursday")}));
    const auto westin = parse_sexpr("(plan (Find :object (?= \"Westin\")))");
    CHECK(westin.size() == 5);
    CHECK(westin.label() == "plan");
    CHECK(westin.children()[0].label() == "Find");
    CHECK(westin.children()[0].children()[1].children()[0].label() == "westin");
    const auto abcd = parse_sexpr("(A (B C) D)");
    CHECK(abcd.size() == 4);
    CHECK(abcd.children()[0].label() == "B");
    CHECK(abcd.children()[0].children().size() == 1);
    CHECK(abcd.children()[1].is_leaf());
  }

  TEST_CASE("sexpr errors") {
    CHECK(code_of([] { parse_sexpr("(A (B C)"); }) == ErrorCode::UnbalancedParens);
    CHECK(code_of([] { parse_sexpr("(A B))"); }) == ErrorCode::UnbalancedParens);
    CHECK(code_of([] { parse_sexpr("(A \"open)"); }) == ErrorCode::UnterminatedStringLiteral);
    CHECK(code_of([] { parse_sexpr("(A ())"); }) == ErrorCode::EmptyList);
    CHECK(code_of([] { parse_sexpr(""); }) == ErrorCode::EmptyInput);
  }

  TEST_CASE("sql skeleton examples") {
    const auto count = parse_sql_skeleton("SELECT count(*) FROM Other_Available_Features");
    CHECK(count == node("SELECT_STMT", {node("SELECT", {node("count", {leaf("*")})}),
                                        node("FROM", {leaf("other_available_features")})}));
    CHECK(count.size() == 6);
    const auto simple = parse_sql_skeleton("SELECT a FROM t");
    CHECK(simple == node("SELECT_STMT", {node("SELECT", {leaf("a")}), node("FROM", {leaf("t")})}));
    const auto where = parse_sql_skeleton("SELECT a FROM t WHERE x = 3");
    REQUIRE(where.children().size() == 3);
    CHECK(where.children()[2] == node("WHERE", {node("=", {leaf("x"), leaf("<NUM>")})}));
  }

  TEST_CASE("sql string literals become placeholders") {
    const auto t = parse_sql_skeleton("SELECT name FROM singer WHERE country = 'France'");
    CHECK(t.children()[2] == node("WHERE", {node("=", {leaf("country"), leaf("<STR>")})}));
  }

  TEST_CASE("sql subqueries recurse") {
    const auto t = parse_sql_skeleton("SELECT a FROM t WHERE b IN (SELECT b FROM u)");
    bool found = false;
    std::function<void(const ParseTree&, bool)> walk = [&](const ParseTree& n, bool root) {
      if (!root && n.label() == "SELECT_STMT") found = true;
      for (const auto& c : n.children()) walk(c, false);
    };
    walk(t, true);
    CHECK(found);
  }

  TEST_CASE("sql errors") {
    CHECK(code_of([] { parse_sql_skeleton("DROP TABLE t"); }) == ErrorCode::UnsupportedSyntax);
    CHECK(code_of([] { parse_sql_skeleton(""); }) == ErrorCode::EmptyInput);
  }

  TEST_CASE("anonymize leaves") {
    CHECK(anonymize_leaves(node("IN:X", {leaf("for tomorrow")})) == node("IN:X", {leaf("<TXT>")}));
    CHECK(anonymize_leaves(leaf("hello")) == leaf("<TXT>"));
    const auto t = parse_bracketed("[IN:X [SL:A me ] tell Angie [SL:B Friday ] ]");
    const auto once = anonymize_leaves(t);
    CHECK(anonymize_leaves(once) == once);
    CHECK(once.size() == t.size());
  }

  TEST_CASE("dispatch and dialect names") {
    CHECK(parse_dialect_name("Bracketed") == ParseDialect::Bracketed);
    CHECK(parse_dialect_name("SEXPR") == ParseDialect::SExpr);
    CHECK(parse_dialect_name("sql") == ParseDialect::SqlSkeleton);
    CHECK(code_of([] { parse_dialect_name("xml"); }) == ErrorCode::InvalidArgument);
    CHECK(parse("(A B)", ParseDialect::SExpr) == parse_sexpr("(A B)"));
  }

  TEST_CASE("sizes match an independent traversal and parsing is deterministic") {
    Rng rng(3);
    const std::vector<std::string> alphabet{"IN:A", "SL:B", "x", "y z"};
    for (int i = 0; i < 200; ++i) {
      const auto t = stare::testing::random_tree(rng, 1 + rng.below(20), alphabet);
      CHECK(t.size() == count_nodes(t));
    }
    const std::string text = "[IN:CREATE_REMINDER [SL:PERSON_REMINDED me ] [SL:TODO shop ] ]";
    CHECK(parse_bracketed(text) == parse_bracketed(text));
    CHECK(parse_bracketed(text).size() == count_nodes(parse_bracketed(text)));
  }

  TEST_CASE("corrupted delimiters are rejected") {
    const std::string bracketed = "[IN:A [SL:B x ] [SL:C [IN:D [SL:E y ] ] ] ]";
    const std::string sexpr = "(A (B (C D) E) (F \"g h\"))";
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
      auto corrupt = [&](std::string s, char open, char close) {
        std::vector<std::size_t> spots;
        for (std::size_t p = 0; p < s.size(); ++p) {
          if (s[p] == open || s[p] == close) spots.push_back(p);
        }
        s.erase(spots[rng.below(spots.size())], 1);
        return s;
      };
      CHECK_THROWS_AS(parse_bracketed(corrupt(bracketed, '[', ']')), Error);
      CHECK_THROWS_AS(parse_sexpr(corrupt(sexpr, '(', ')')), Error);
    }
  }
}
