#pragma once

#include <functional>
#include <string_view>

#include "stare/parse_tree.hpp"

namespace stare::detail {

enum class FeatureKind {
  Verbatim,  // inserted as-is (labels, SQL keywords, identifiers)
  Terminal,  // surface text, normalized by the consumer
};

using FeatureSink = std::function<void(std::string_view, FeatureKind)>;

ParseTree parse_bracketed(std::string_view text, const FeatureSink& sink);
ParseTree parse_sexpr(std::string_view text, const FeatureSink& sink);
ParseTree parse_sql_skeleton(std::string_view text, const FeatureSink& sink);

inline bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline char ascii_lower(char c) noexcept {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline char ascii_upper(char c) noexcept {
  return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c;
}

}  // namespace stare::detail
