#include "stare/error.hpp"

namespace stare {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnbalancedBrackets: return "UnbalancedBrackets";
    case ErrorCode::UnbalancedParens: return "UnbalancedParens";
    case ErrorCode::UnterminatedStringLiteral: return "UnterminatedStringLiteral";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::UnsupportedSyntax: return "UnsupportedSyntax";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::EmptyFeatureSet: return "EmptyFeatureSet";
    case ErrorCode::NoFactorization: return "NoFactorization";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::SignatureLengthMismatch: return "SignatureLengthMismatch";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::IndexCorpusMismatch: return "IndexCorpusMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LayerOutOfRange: return "LayerOutOfRange";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::LabelSetMismatch: return "LabelSetMismatch";
    case ErrorCode::EmptySentence: return "EmptySentence";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::ZeroMatrix: return "ZeroMatrix";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::ProvenanceMismatch: return "ProvenanceMismatch";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::MissingSchema: return "MissingSchema";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
  }
  return "Unknown";
}

bool is_numeric_failure(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::ZeroVector:
    case ErrorCode::ZeroMatrix:
    case ErrorCode::DegenerateLabels:
      return true;
    default:
      return false;
  }
}

namespace {

std::string decorate(ErrorCode code, const std::string& message,
                     std::optional<std::size_t> position) {
  std::string out{to_string(code)};
  out += ": ";
  out += message;
  if (position) {
    out += " (at offset " + std::to_string(*position) + ")";
  }
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message,
             std::optional<std::size_t> position)
    : std::runtime_error(decorate(code, message, position)),
      code_(code),
      detail_(message),
      position_(position) {}

}  // namespace stare
