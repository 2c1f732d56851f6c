#include "stare/parse_tree.hpp"

#include <array>
#include <string>
#include <utility>

#include "parse_internal.hpp"
#include "stare/error.hpp"

namespace stare {

using detail::FeatureKind;
using detail::FeatureSink;
using detail::is_space;

ParseTree::ParseTree(std::string label, std::vector<ParseTree> children)
    : label_(std::move(label)), children_(std::move(children)), size_(1) {
  if (label_.empty()) {
    throw Error(ErrorCode::InvalidArgument, "tree labels must be non-empty");
  }
  for (const auto& child : children_) size_ += child.size_;
}

namespace {

void append_label(std::string& out, const std::string& label) {
  bool plain = true;
  for (char c : label) {
    if (is_space(c) || c == '(' || c == ')' || c == '"') {
      plain = false;
      break;
    }
  }
  if (plain) {
    out += label;
    return;
  }
  out += '"';
  for (char c : label) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
}

void append_tree(std::string& out, const ParseTree& tree) {
  append_label(out, tree.label());
  if (tree.is_leaf()) return;
  out += '(';
  bool first = true;
  for (const auto& child : tree.children()) {
    if (!first) out += ' ';
    first = false;
    append_tree(out, child);
  }
  out += ')';
}

}  // namespace

std::string ParseTree::to_string() const {
  std::string out;
  append_tree(out, *this);
  return out;
}

std::string_view to_string(ParseDialect dialect) noexcept {
  switch (dialect) {
    case ParseDialect::Bracketed: return "bracketed";
    case ParseDialect::SExpr: return "sexpr";
    case ParseDialect::SqlSkeleton: return "sql";
  }
  return "unknown";
}

ParseDialect parse_dialect_name(std::string_view name) {
  std::string lowered;
  for (char c : name) lowered += detail::ascii_lower(c);
  if (lowered == "bracketed") return ParseDialect::Bracketed;
  if (lowered == "sexpr" || lowered == "lispress") return ParseDialect::SExpr;
  if (lowered == "sql" || lowered == "sqlskeleton") return ParseDialect::SqlSkeleton;
  throw Error(ErrorCode::InvalidArgument,
              "unknown dialect '" + std::string(name) + "' (expected bracketed, sexpr or sql)");
}

std::string normalize_span(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += detail::ascii_lower(c);
  }
  return out;
}

namespace {

bool is_blank(std::string_view text) {
  for (char c : text) {
    if (!is_space(c)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Bracketed intent/slot parses: "[LABEL words [CHILD ...] words ]".

class BracketedParser {
 public:
  BracketedParser(std::string_view text, const FeatureSink& sink)
      : text_(text), sink_(sink) {}

  ParseTree run() {
    if (is_blank(text_)) throw Error(ErrorCode::EmptyInput, "empty bracketed parse");
    skip_space();
    if (text_[pos_] == ']') {
      throw Error(ErrorCode::UnbalancedBrackets, "unexpected ']'", pos_);
    }
    if (text_[pos_] != '[') {
      throw Error(ErrorCode::ParseError, "expected '['", pos_);
    }
    ParseTree root = node();
    skip_space();
    if (pos_ < text_.size()) {
      if (text_[pos_] == ']') {
        throw Error(ErrorCode::UnbalancedBrackets, "unexpected ']'", pos_);
      }
      throw Error(ErrorCode::ParseError, "trailing text after root", pos_);
    }
    return root;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
  }

  bool is_delim(char c) const { return is_space(c) || c == '[' || c == ']'; }

  std::string_view word() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !is_delim(text_[pos_])) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  ParseTree node() {
    const std::size_t open = pos_++;
    const std::string_view label = word();
    if (label.empty()) throw Error(ErrorCode::ParseError, "missing label after '['", open);
    if (sink_) sink_(label, FeatureKind::Verbatim);

    std::vector<ParseTree> children;
    std::string span;
    auto flush = [&] {
      if (span.empty()) return;
      children.emplace_back(std::move(span));
      span.clear();
    };

    while (true) {
      skip_space();
      if (pos_ >= text_.size()) {
        throw Error(ErrorCode::UnbalancedBrackets,
                    "'[' opened at offset " + std::to_string(open) + " is never closed",
                    text_.size());
      }
      const char c = text_[pos_];
      if (c == ']') {
        ++pos_;
        flush();
        return ParseTree(std::string(label), std::move(children));
      }
      if (c == '[') {
        flush();
        children.push_back(node());
        continue;
      }
      const std::string_view w = word();
      if (sink_) sink_(w, FeatureKind::Terminal);
      if (!span.empty()) span += ' ';
      span += normalize_span(w);
    }
  }

  std::string_view text_;
  const FeatureSink& sink_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// S-expressions (Lispress): head atom is the parent, the rest are children.

class SExprParser {
 public:
  SExprParser(std::string_view text, const FeatureSink& sink) : text_(text), sink_(sink) {}

  ParseTree run() {
    if (is_blank(text_)) throw Error(ErrorCode::EmptyInput, "empty s-expression");
    skip_space();
    ParseTree root = expr();
    skip_space();
    if (pos_ < text_.size()) {
      if (text_[pos_] == ')') {
        throw Error(ErrorCode::UnbalancedParens, "unexpected ')'", pos_);
      }
      throw Error(ErrorCode::ParseError, "trailing text after root expression", pos_);
    }
    return root;
  }

 private:
  enum class Kind { Open, Close, Atom, String };

  void skip_space() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
  }

  Kind peek() const {
    switch (text_[pos_]) {
      case '(': return Kind::Open;
      case ')': return Kind::Close;
      case '"': return Kind::String;
      default: return Kind::Atom;
    }
  }

  std::string_view atom() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (is_space(c) || c == '(' || c == ')' || c == '"') break;
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  std::string string_literal() {
    const std::size_t open = pos_++;
    std::string content;
    while (pos_ < text_.size()) {
      const char c = text_[pos_++];
      if (c == '\\' && pos_ < text_.size()) {
        content += text_[pos_++];
        continue;
      }
      if (c == '"') return content;
      content += c;
    }
    throw Error(ErrorCode::UnterminatedStringLiteral, "string literal is never closed", open);
  }

  ParseTree string_leaf() {
    const std::string content = string_literal();
    if (sink_) sink_(content, FeatureKind::Terminal);
    std::string label = normalize_span(content);
    if (label.empty()) label = "\"\"";
    return ParseTree(std::move(label));
  }

  ParseTree expr() {
    switch (peek()) {
      case Kind::Close:
        throw Error(ErrorCode::UnbalancedParens, "unexpected ')'", pos_);
      case Kind::String:
        return string_leaf();
      case Kind::Atom: {
        const std::string_view a = atom();
        if (sink_) sink_(a, FeatureKind::Terminal);
        return ParseTree(normalize_span(a));
      }
      case Kind::Open:
        break;
    }

    const std::size_t open = pos_++;
    auto need_more = [&] {
      skip_space();
      if (pos_ >= text_.size()) {
        throw Error(ErrorCode::UnbalancedParens,
                    "'(' opened at offset " + std::to_string(open) + " is never closed",
                    text_.size());
      }
    };

    need_more();
    std::string label;
    std::vector<ParseTree> children;
    switch (peek()) {
      case Kind::Close:
        throw Error(ErrorCode::EmptyList, "list has no head", open);
      case Kind::Atom: {
        const std::string_view head = atom();
        if (sink_) sink_(head, FeatureKind::Verbatim);
        label = std::string(head);
        break;
      }
      case Kind::String: {
        label = string_literal();
        if (label.empty()) label = "\"\"";
        if (sink_) sink_(label, FeatureKind::Verbatim);
        break;
      }
      case Kind::Open:
        // Applied expression such as ((f x) y): the operator subtree becomes
        // the first child of a synthetic application node.
        label = "<apply>";
        children.push_back(expr());
        break;
    }

    while (true) {
      need_more();
      if (peek() == Kind::Close) {
        ++pos_;
        return ParseTree(std::move(label), std::move(children));
      }
      children.push_back(expr());
    }
  }

  std::string_view text_;
  const FeatureSink& sink_;
  std::size_t pos_ = 0;
};

constexpr std::array<std::string_view, 8> kStructuralLeaves = {
    "*", "<NUM>", "<STR>", "<TXT>", "NULL", "DISTINCT", "ASC", "DESC"};

}  // namespace

namespace detail {

ParseTree parse_bracketed(std::string_view text, const FeatureSink& sink) {
  return BracketedParser(text, sink).run();
}

ParseTree parse_sexpr(std::string_view text, const FeatureSink& sink) {
  return SExprParser(text, sink).run();
}

}  // namespace detail

ParseTree parse_bracketed(std::string_view text) { return detail::parse_bracketed(text, {}); }

ParseTree parse_sexpr(std::string_view text) { return detail::parse_sexpr(text, {}); }

ParseTree parse_sql_skeleton(std::string_view text) {
  return detail::parse_sql_skeleton(text, {});
}

ParseTree parse(std::string_view text, ParseDialect dialect) {
  switch (dialect) {
    case ParseDialect::Bracketed: return parse_bracketed(text);
    case ParseDialect::SExpr: return parse_sexpr(text);
    case ParseDialect::SqlSkeleton: return parse_sql_skeleton(text);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown dialect");
}

bool is_structural_leaf_label(std::string_view label) noexcept {
  for (auto keyword : kStructuralLeaves) {
    if (label == keyword) return true;
  }
  return false;
}

ParseTree anonymize_leaves(const ParseTree& tree) {
  if (tree.is_leaf()) {
    if (is_structural_leaf_label(tree.label())) return tree;
    return ParseTree(std::string(kAnonymousLeaf));
  }
  std::vector<ParseTree> children;
  children.reserve(tree.children().size());
  for (const auto& child : tree.children()) children.push_back(anonymize_leaves(child));
  return ParseTree(tree.label(), std::move(children));
}

}  // namespace stare
