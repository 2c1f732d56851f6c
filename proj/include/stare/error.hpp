#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stare {

enum class ErrorCode {
  // parse_trees
  EmptyInput,
  UnbalancedBrackets,
  UnbalancedParens,
  UnterminatedStringLiteral,
  EmptyList,
  UnsupportedSyntax,
  ParseError,
  // tree_distance
  TooLarge,
  // bucketing
  EmptyFeatureSet,
  NoFactorization,
  DuplicateId,
  SignatureLengthMismatch,
  // pair_mining
  UnknownId,
  IndexCorpusMismatch,
  // encoder
  DimensionMismatch,
  LayerOutOfRange,
  ZeroVector,
  NonFiniteLoss,
  // mli
  LabelSetMismatch,
  EmptySentence,
  DegenerateLabels,
  ZeroMatrix,
  // retrieval
  KTooLarge,
  ProvenanceMismatch,
  CountMismatch,
  MissingSchema,
  // plumbing
  InvalidConfig,
  InvalidArgument,
  Io,
  Format,
};

std::string_view to_string(ErrorCode code) noexcept;

// True for failures of numerical procedures (as opposed to bad data).
bool is_numeric_failure(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> position = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  // Byte offset into the offending input, when the error has one.
  std::optional<std::size_t> position() const noexcept { return position_; }
  // The message without the code prefix and offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
  std::optional<std::size_t> position_;
};

}  // namespace stare
