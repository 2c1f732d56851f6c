// Recursive-descent parser for the SQL subset used by text-to-SQL corpora.
// Produces a clause-level skeleton: one child per clause, identifiers as
// lowercased leaves, operators and functions as parents of their operands,
// literals replaced by <NUM>/<STR>.

#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "parse_internal.hpp"
#include "stare/error.hpp"
#include "stare/parse_tree.hpp"

namespace stare::detail {
namespace {

enum class Tok { Ident, Keyword, Number, String, Op, LParen, RParen, Comma, Semicolon, End };

struct Token {
  Tok kind;
  std::string text;  // keywords uppercased, identifiers lowercased
  std::size_t pos;
};

constexpr std::array<std::string_view, 37> kKeywords = {
    "SELECT", "FROM",   "WHERE",     "GROUP",  "BY",    "HAVING",   "ORDER", "LIMIT",
    "OFFSET", "JOIN",   "ON",        "AS",     "AND",   "OR",       "NOT",   "IN",
    "LIKE",   "BETWEEN", "IS",       "NULL",   "DISTINCT", "UNION", "INTERSECT", "EXCEPT",
    "ALL",    "ASC",    "DESC",      "INNER",  "LEFT",  "RIGHT",    "OUTER", "CROSS",
    "FULL",   "NATURAL", "EXISTS",   "USING",  "GLOB"};

constexpr std::array<std::string_view, 18> kUnsupported = {
    "CASE",   "WHEN",   "THEN",  "ELSE",   "END",   "WITH",  "INSERT", "UPDATE", "DELETE",
    "CREATE", "DROP",   "ALTER", "OVER",   "PARTITION", "WINDOW", "VALUES", "CAST", "RECURSIVE"};

template <std::size_t N>
bool contains(const std::array<std::string_view, N>& set, std::string_view word) {
  for (auto w : set) {
    if (w == word) return true;
  }
  return false;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = ascii_upper(c);
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = ascii_lower(c);
  return out;
}

bool ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' ||
         static_cast<unsigned char>(c) >= 0x80;
}

bool ident_char(char c) {
  return ident_start(c) || std::isdigit(static_cast<unsigned char>(c)) || c == '$';
}

std::vector<Token> lex(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (ident_start(c)) {
      // Qualified names (t1.col, t1.*) lex as a single identifier.
      while (i < text.size()) {
        while (i < text.size() && ident_char(text[i])) ++i;
        if (i + 1 < text.size() && text[i] == '.' &&
            (ident_start(text[i + 1]) || text[i + 1] == '*')) {
          ++i;
          if (text[i] == '*') {
            ++i;
            break;
          }
          continue;
        }
        break;
      }
      const std::string_view word = text.substr(start, i - start);
      const std::string up = upper(word);
      if (contains(kUnsupported, up)) {
        throw Error(ErrorCode::UnsupportedSyntax, "unsupported SQL construct '" + up + "'", start);
      }
      if (contains(kKeywords, up)) {
        out.push_back({Tok::Keyword, up, start});
      } else {
        out.push_back({Tok::Ident, lower(word), start});
      }
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1])))) {
      while (i < text.size() &&
             (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.')) {
        ++i;
      }
      if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
        ++i;
        if (i < text.size() && (text[i] == '+' || text[i] == '-')) ++i;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      }
      out.push_back({Tok::Number, std::string(text.substr(start, i - start)), start});
      continue;
    }
    if (c == '\'' || c == '"') {
      ++i;
      bool closed = false;
      while (i < text.size()) {
        if (text[i] == c) {
          if (i + 1 < text.size() && text[i + 1] == c) {
            i += 2;
            continue;
          }
          ++i;
          closed = true;
          break;
        }
        ++i;
      }
      if (!closed) {
        throw Error(ErrorCode::ParseError, "unterminated string literal", start);
      }
      out.push_back({Tok::String, std::string(text.substr(start, i - start)), start});
      continue;
    }
    if (c == '`' || c == '[') {
      const char close = c == '`' ? '`' : ']';
      const std::size_t end = text.find(close, i + 1);
      if (end == std::string_view::npos) {
        throw Error(ErrorCode::ParseError, "unterminated quoted identifier", start);
      }
      out.push_back({Tok::Ident, lower(text.substr(i + 1, end - i - 1)), start});
      i = end + 1;
      continue;
    }
    switch (c) {
      case '(': out.push_back({Tok::LParen, "(", start}); ++i; continue;
      case ')': out.push_back({Tok::RParen, ")", start}); ++i; continue;
      case ',': out.push_back({Tok::Comma, ",", start}); ++i; continue;
      case ';': out.push_back({Tok::Semicolon, ";", start}); ++i; continue;
      default: break;
    }
    auto two = text.substr(i, 2);
    if (two == "<=" || two == ">=" || two == "!=" || two == "<>" || two == "==" || two == "||") {
      std::string op(two);
      if (op == "<>") op = "!=";
      if (op == "==") op = "=";
      out.push_back({Tok::Op, op, start});
      i += 2;
      continue;
    }
    if (c == '=' || c == '<' || c == '>' || c == '+' || c == '-' || c == '*' || c == '/' ||
        c == '%') {
      out.push_back({Tok::Op, std::string(1, c), start});
      ++i;
      continue;
    }
    throw Error(ErrorCode::ParseError, std::string("unexpected character '") + c + "'", start);
  }
  out.push_back({Tok::End, "", text.size()});
  return out;
}

class SqlParser {
 public:
  SqlParser(std::vector<Token> tokens, const FeatureSink& sink)
      : toks_(std::move(tokens)), sink_(sink) {}

  ParseTree run() {
    ParseTree root = statement();
    while (peek().kind == Tok::Semicolon) ++pos_;
    if (peek().kind != Tok::End) fail("unexpected token after statement");
    return root;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }

  [[noreturn]] void fail(const std::string& what) const {
    const Token& t = peek();
    const std::string shown = t.kind == Tok::End ? "end of input" : "'" + t.text + "'";
    throw Error(ErrorCode::ParseError, what + " near " + shown, t.pos);
  }

  bool at_keyword(std::string_view kw, std::size_t ahead = 0) const {
    return peek(ahead).kind == Tok::Keyword && peek(ahead).text == kw;
  }

  bool accept_keyword(std::string_view kw) {
    if (!at_keyword(kw)) return false;
    emit(peek().text);
    ++pos_;
    return true;
  }

  void expect_keyword(std::string_view kw) {
    if (!accept_keyword(kw)) fail("expected " + std::string(kw));
  }

  void expect(Tok kind, std::string_view what) {
    if (peek().kind != kind) fail("expected " + std::string(what));
    ++pos_;
  }

  void emit(std::string_view feature) {
    if (sink_) sink_(feature, FeatureKind::Verbatim);
  }

  // statement := select_core { setop select_core }
  ParseTree statement() {
    ParseTree left = select_core();
    while (at_keyword("UNION") || at_keyword("INTERSECT") || at_keyword("EXCEPT")) {
      std::string kind = peek().text;
      emit(kind);
      ++pos_;
      if (accept_keyword("ALL")) kind += "_ALL";
      ParseTree right = select_core();
      std::vector<ParseTree> kids;
      kids.push_back(std::move(left));
      kids.push_back(std::move(right));
      left = ParseTree(kind + "_STMT", std::move(kids));
    }
    return left;
  }

  ParseTree select_core() {
    if (peek().kind == Tok::LParen && at_keyword("SELECT", 1)) {
      ++pos_;
      ParseTree inner = statement();
      expect(Tok::RParen, "')'");
      return inner;
    }
    expect_keyword("SELECT");
    std::vector<ParseTree> clauses;

    std::vector<ParseTree> items;
    if (accept_keyword("DISTINCT")) items.emplace_back("DISTINCT");
    else accept_keyword("ALL");
    do {
      items.push_back(expr());
      alias();
    } while (accept(Tok::Comma));
    clauses.emplace_back("SELECT", std::move(items));

    if (accept_keyword("FROM")) clauses.push_back(from_clause());
    if (accept_keyword("WHERE")) {
      std::vector<ParseTree> w;
      w.push_back(expr());
      clauses.emplace_back("WHERE", std::move(w));
    }
    if (at_keyword("GROUP")) {
      accept_keyword("GROUP");
      expect_keyword("BY");
      std::vector<ParseTree> g;
      do {
        g.push_back(expr());
      } while (accept(Tok::Comma));
      clauses.emplace_back("GROUP BY", std::move(g));
    }
    if (accept_keyword("HAVING")) {
      std::vector<ParseTree> h;
      h.push_back(expr());
      clauses.emplace_back("HAVING", std::move(h));
    }
    if (at_keyword("ORDER")) {
      accept_keyword("ORDER");
      expect_keyword("BY");
      std::vector<ParseTree> o;
      do {
        o.push_back(expr());
        if (at_keyword("ASC") || at_keyword("DESC")) {
          o.emplace_back(peek().text);
          emit(peek().text);
          ++pos_;
        }
      } while (accept(Tok::Comma));
      clauses.emplace_back("ORDER BY", std::move(o));
    }
    if (accept_keyword("LIMIT")) {
      std::vector<ParseTree> l;
      l.push_back(expr());
      if (accept(Tok::Comma) || accept_keyword("OFFSET")) {
        std::vector<ParseTree> off;
        off.push_back(expr());
        l.emplace_back("OFFSET", std::move(off));
      }
      clauses.emplace_back("LIMIT", std::move(l));
    }
    return ParseTree("SELECT_STMT", std::move(clauses));
  }

  bool accept(Tok kind) {
    if (peek().kind != kind) return false;
    ++pos_;
    return true;
  }

  // Optional "AS name" or bare alias; aliases are not part of the skeleton.
  void alias() {
    if (at_keyword("AS")) {
      ++pos_;
      if (peek().kind != Tok::Ident && peek().kind != Tok::String) fail("expected alias");
      ++pos_;
      return;
    }
    if (peek().kind == Tok::Ident) ++pos_;
  }

  ParseTree table_ref() {
    if (peek().kind == Tok::LParen) {
      ++pos_;
      ParseTree sub = statement();
      expect(Tok::RParen, "')'");
      alias();
      return sub;
    }
    if (peek().kind != Tok::Ident) fail("expected table name");
    std::string name = peek().text;
    emit(name);
    ++pos_;
    alias();
    return ParseTree(std::move(name));
  }

  std::optional<std::string> join_keyword() {
    std::string label;
    std::size_t ahead = 0;
    if (at_keyword("NATURAL")) {
      label = "NATURAL ";
      ++ahead;
    }
    const Token& t = peek(ahead);
    if (t.kind != Tok::Keyword) return std::nullopt;
    if (t.text == "JOIN") {
      label += "JOIN";
    } else if (t.text == "INNER" || t.text == "CROSS") {
      if (!at_keyword("JOIN", ahead + 1)) return std::nullopt;
      label += t.text + " JOIN";
      ++ahead;
    } else if (t.text == "LEFT" || t.text == "RIGHT" || t.text == "FULL") {
      std::size_t j = ahead + 1;
      if (at_keyword("OUTER", j)) ++j;
      if (!at_keyword("JOIN", j)) return std::nullopt;
      label += t.text + " JOIN";
      ahead = j;
    } else {
      return std::nullopt;
    }
    for (std::size_t i = 0; i <= ahead; ++i) {
      emit(peek().text);
      ++pos_;
    }
    return label;
  }

  ParseTree from_clause() {
    std::vector<ParseTree> items;
    items.push_back(table_ref());
    while (true) {
      if (accept(Tok::Comma)) {
        items.push_back(table_ref());
        continue;
      }
      auto join = join_keyword();
      if (!join) break;
      std::vector<ParseTree> parts;
      parts.push_back(table_ref());
      if (accept_keyword("ON")) {
        parts.push_back(expr());
      } else if (accept_keyword("USING")) {
        expect(Tok::LParen, "'('");
        std::vector<ParseTree> cols;
        do {
          cols.push_back(primary());
        } while (accept(Tok::Comma));
        expect(Tok::RParen, "')'");
        parts.emplace_back("USING", std::move(cols));
      }
      items.emplace_back(std::move(*join), std::move(parts));
    }
    return ParseTree("FROM", std::move(items));
  }

  static ParseTree node(std::string label, ParseTree a) {
    std::vector<ParseTree> kids;
    kids.push_back(std::move(a));
    return ParseTree(std::move(label), std::move(kids));
  }

  static ParseTree node(std::string label, ParseTree a, ParseTree b) {
    std::vector<ParseTree> kids;
    kids.push_back(std::move(a));
    kids.push_back(std::move(b));
    return ParseTree(std::move(label), std::move(kids));
  }

  ParseTree expr() { return or_expr(); }

  ParseTree or_expr() {
    ParseTree left = and_expr();
    while (accept_keyword("OR")) left = node("OR", std::move(left), and_expr());
    return left;
  }

  ParseTree and_expr() {
    ParseTree left = not_expr();
    while (accept_keyword("AND")) left = node("AND", std::move(left), not_expr());
    return left;
  }

  ParseTree not_expr() {
    if (accept_keyword("NOT")) return node("NOT", not_expr());
    return predicate();
  }

  ParseTree predicate() {
    if (accept_keyword("EXISTS")) {
      expect(Tok::LParen, "'('");
      ParseTree sub = statement();
      expect(Tok::RParen, "')'");
      return node("EXISTS", std::move(sub));
    }
    ParseTree left = additive();
    const Token& t = peek();
    if (t.kind == Tok::Op &&
        (t.text == "=" || t.text == "!=" || t.text == "<" || t.text == ">" || t.text == "<=" ||
         t.text == ">=")) {
      std::string op = t.text;
      ++pos_;
      return node(std::move(op), std::move(left), additive());
    }
    bool negated = false;
    if (at_keyword("NOT") &&
        (at_keyword("IN", 1) || at_keyword("LIKE", 1) || at_keyword("BETWEEN", 1) ||
         at_keyword("GLOB", 1))) {
      accept_keyword("NOT");
      negated = true;
    }
    const std::string prefix = negated ? "NOT " : "";
    if (accept_keyword("BETWEEN")) {
      ParseTree lo = additive();
      expect_keyword("AND");
      ParseTree hi = additive();
      std::vector<ParseTree> kids;
      kids.push_back(std::move(left));
      kids.push_back(std::move(lo));
      kids.push_back(std::move(hi));
      return ParseTree(prefix + "BETWEEN", std::move(kids));
    }
    if (accept_keyword("IN")) {
      expect(Tok::LParen, "'('");
      std::vector<ParseTree> kids;
      kids.push_back(std::move(left));
      if (at_keyword("SELECT")) {
        kids.push_back(statement());
      } else {
        do {
          kids.push_back(expr());
        } while (accept(Tok::Comma));
      }
      expect(Tok::RParen, "')'");
      return ParseTree(prefix + "IN", std::move(kids));
    }
    if (accept_keyword("LIKE")) return node(prefix + "LIKE", std::move(left), additive());
    if (accept_keyword("GLOB")) return node(prefix + "GLOB", std::move(left), additive());
    if (accept_keyword("IS")) {
      const bool is_not = accept_keyword("NOT");
      expect_keyword("NULL");
      return node(is_not ? "IS NOT" : "IS", std::move(left), ParseTree("NULL"));
    }
    if (negated) fail("expected IN, LIKE or BETWEEN after NOT");
    return left;
  }

  ParseTree additive() {
    ParseTree left = multiplicative();
    while (peek().kind == Tok::Op &&
           (peek().text == "+" || peek().text == "-" || peek().text == "||")) {
      std::string op = peek().text;
      ++pos_;
      left = node(std::move(op), std::move(left), multiplicative());
    }
    return left;
  }

  ParseTree multiplicative() {
    ParseTree left = unary();
    while (peek().kind == Tok::Op &&
           (peek().text == "*" || peek().text == "/" || peek().text == "%")) {
      std::string op = peek().text;
      ++pos_;
      left = node(std::move(op), std::move(left), unary());
    }
    return left;
  }

  ParseTree unary() {
    if (peek().kind == Tok::Op && (peek().text == "-" || peek().text == "+")) {
      const std::string op = peek().text;
      ++pos_;
      if (peek().kind == Tok::Number) {
        ++pos_;
        return ParseTree("<NUM>");
      }
      return node(op, unary());
    }
    return primary();
  }

  ParseTree primary() {
    const Token t = peek();
    switch (t.kind) {
      case Tok::Number:
        ++pos_;
        return ParseTree("<NUM>");
      case Tok::String:
        ++pos_;
        return ParseTree("<STR>");
      case Tok::Op:
        if (t.text == "*") {
          emit("*");
          ++pos_;
          return ParseTree("*");
        }
        fail("unexpected operator");
      case Tok::LParen: {
        ++pos_;
        ParseTree inner = at_keyword("SELECT") ? statement() : expr();
        expect(Tok::RParen, "')'");
        return inner;
      }
      case Tok::Keyword:
        if (t.text == "NULL") {
          emit("NULL");
          ++pos_;
          return ParseTree("NULL");
        }
        fail("unexpected keyword");
      case Tok::Ident: {
        ++pos_;
        emit(t.text);
        if (peek().kind != Tok::LParen) return ParseTree(t.text);
        ++pos_;
        std::vector<ParseTree> args;
        if (accept_keyword("DISTINCT")) args.emplace_back("DISTINCT");
        if (peek().kind != Tok::RParen) {
          do {
            args.push_back(expr());
          } while (accept(Tok::Comma));
        }
        expect(Tok::RParen, "')'");
        return ParseTree(t.text, std::move(args));
      }
      default:
        fail("unexpected token");
    }
  }

  std::vector<Token> toks_;
  const FeatureSink& sink_;
  std::size_t pos_ = 0;
};

}  // namespace

ParseTree parse_sql_skeleton(std::string_view text, const FeatureSink& sink) {
  bool blank = true;
  for (char c : text) {
    if (!is_space(c)) {
      blank = false;
      break;
    }
  }
  if (blank) throw Error(ErrorCode::EmptyInput, "empty SQL statement");
  return SqlParser(lex(text), sink).run();
}

}  // namespace stare::detail
