#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stare/injection.hpp"
#include "stare/matrix.hpp"

namespace stare {

// Lowercases and splits on whitespace; every ASCII punctuation character is
// its own token.
std::vector<std::string> split_tokens(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int32_t kUnk = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);  // tokens[0] must be "<unk>"

  // Adds every token of every text in first-seen order.
  static Vocabulary build(std::span<const std::string> texts);

  void add(std::string_view token);
  std::int32_t id(std::string_view token) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

// split_tokens + vocabulary lookup, truncated to max_len. Throws EmptyInput
// when the text has no tokens.
std::vector<std::int32_t> tokenize(std::string_view text, const Vocabulary& vocab,
                                   std::size_t max_len);

struct EncoderConfig {
  std::size_t dim = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t max_len = 64;
  std::size_t ffn_dim = 128;
  std::uint64_t seed = 1;

  // Throws InvalidConfig naming the offending field.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Residual stream after each block. layers[0] is token + position
// embeddings; layers[l] is the output of block l (after any injection hook at
// l). `output` is the final layer norm applied to layers.back(), i.e. the
// final hidden states that sentence embeddings pool over.
struct HiddenStates {
  std::vector<Matrix> layers;
  Matrix output;

  std::size_t tokens() const noexcept { return output.rows; }
};

/// Offsets of every tensor inside the flat parameter vector. The order is
/// also the on-disk order:
///   token_embedding [V x d], position_embedding [max_len x d],
///   per block l = 1..L: ln1.gain [d], ln1.bias [d], wq [d x d], bq [d],
///     wk [d x d], bk [d], wv [d x d], bv [d], wo [d x d], bo [d],
///     ln2.gain [d], ln2.bias [d], w1 [d x f], b1 [f], w2 [f x d], b2 [d],
///   final.gain [d], final.bias [d].
/// Weight matrices are stored input-major (y = x W + b).
struct ParamLayout {
  struct Block {
    std::size_t ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_gain, ln2_bias, w1, b1, w2, b2;
  };
  std::size_t token_embedding = 0;
  std::size_t position_embedding = 0;
  std::vector<Block> blocks;
  std::size_t final_gain = 0;
  std::size_t final_bias = 0;
  std::size_t total = 0;

  ParamLayout(const EncoderConfig& config, std::size_t vocab_size);
};

/// Small bidirectional transformer encoder (pre-norm, multi-head
/// self-attention + GELU feed-forward) with mean-pooled sentence embeddings.
class Encoder {
 public:
  // Seeded fan-in-scaled uniform init; layer norms start as identity.
  Encoder(EncoderConfig config, Vocabulary vocab);

  const EncoderConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> mutable_params() noexcept { return params_; }

  HiddenStates forward(std::string_view text, const InjectionDirection* injection = nullptr) const;
  HiddenStates forward_ids(std::span<const std::int32_t> ids,
                           const InjectionDirection* injection = nullptr) const;

  // Mean over token rows of the final hidden states.
  std::vector<double> embed(std::string_view text,
                            const InjectionDirection* injection = nullptr) const;

  // Embeds `text` and accumulates d(loss)/d(params) into `grad` given
  // d(loss)/d(embedding). Returns the embedding used.
  std::vector<double> embed_backward(std::string_view text, std::span<const double> d_embedding,
                                     std::span<double> grad) const;

  // Binary format: magic "STAREENC", u32 version, u32 header length, JSON
  // header (config + vocabulary), u64 parameter count, raw little-endian
  // IEEE-754 doubles in ParamLayout order.
  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static Encoder load(std::istream& in);
  static Encoder load(const std::filesystem::path& path);

  // Hash over config, vocabulary and parameter bits.
  std::string fingerprint() const;

 private:
  void check_injection(const InjectionDirection& injection) const;

  EncoderConfig config_;
  Vocabulary vocab_;
  ParamLayout layout_;
  std::vector<double> params_;
};

inline constexpr std::uint32_t kEncoderFormatVersion = 1;

double cosine(std::span<const double> a, std::span<const double> b);

struct InfoNceResult {
  double loss = 0.0;
  std::vector<double> d_anchor;
  std::vector<double> d_positive;
  std::vector<std::vector<double>> d_negatives;
};

// -log softmax of the positive among {positive} ∪ negatives, with cosine
// similarity divided by temperature as the logit. Throws ZeroVector.
double infonce_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const std::vector<double>> negatives, double temperature);
InfoNceResult infonce_loss_and_grad(std::span<const double> anchor,
                                    std::span<const double> positive,
                                    std::span<const std::vector<double>> negatives,
                                    double temperature);

}  // namespace stare
