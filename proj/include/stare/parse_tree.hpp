#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stare {

/// Labeled ordered tree built from a semantic parse.
///
/// Labels are non-empty; child order is the order in the source parse. The
/// subtree size is computed once at construction, so trees are effectively
/// immutable values.
class ParseTree {
 public:
  explicit ParseTree(std::string label, std::vector<ParseTree> children = {});

  const std::string& label() const noexcept { return label_; }
  std::span<const ParseTree> children() const noexcept { return children_; }
  std::size_t size() const noexcept { return size_; }
  bool is_leaf() const noexcept { return children_.empty(); }

  bool operator==(const ParseTree& other) const = default;

  // Compact debug form: label(child child ...); labels containing spaces or
  // delimiters are double-quoted.
  std::string to_string() const;

 private:
  std::string label_;
  std::vector<ParseTree> children_;
  std::size_t size_;
};

enum class ParseDialect { Bracketed, SExpr, SqlSkeleton };

std::string_view to_string(ParseDialect dialect) noexcept;
// Accepts "bracketed", "sexpr", "sql" (case-insensitive).
ParseDialect parse_dialect_name(std::string_view name);

ParseTree parse_bracketed(std::string_view text);
ParseTree parse_sexpr(std::string_view text);
ParseTree parse_sql_skeleton(std::string_view text);

// Dispatches on dialect.
ParseTree parse(std::string_view text, ParseDialect dialect);

// Leaf labels that carry structure rather than surface text; these survive
// anonymization.
bool is_structural_leaf_label(std::string_view label) noexcept;

inline constexpr std::string_view kAnonymousLeaf = "<TXT>";

ParseTree anonymize_leaves(const ParseTree& tree);

// Lowercases ASCII and collapses whitespace runs to single spaces.
std::string normalize_span(std::string_view text);

}  // namespace stare
