#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stare/parse_tree.hpp"

namespace stare {

// Discrete features of a parse: labels, keywords, normalized tokens.
using FeatureSet = std::set<std::string, std::less<>>;

// Bracketed/SExpr: non-terminal and head labels verbatim, plus lowercased
// terminal tokens with digit runs replaced by "<d>". SQL: uppercased
// keywords, lowercased identifiers and function names, "*"; literals dropped.
// Parser errors propagate.
FeatureSet extract_features(std::string_view parse, ParseDialect dialect);

// |a ∩ b| / |a ∪ b|; 1.0 when both are empty.
double exact_jaccard(const FeatureSet& a, const FeatureSet& b);

struct MinHashSignature {
  std::vector<std::uint64_t> values;

  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const MinHashSignature&) const = default;
};

// i-th member of the seeded multiply-add-shift family applied to a 64-bit
// feature key: ((a_i * key + b_i) mod 2^128) >> 64, with 128-bit a_i, b_i
// drawn deterministically from (seed, i).
std::uint64_t minhash_permutation(std::uint64_t key, std::size_t i, std::uint64_t seed) noexcept;

// 64-bit key of a feature string (input to the permutations).
std::uint64_t feature_key(std::string_view feature) noexcept;

MinHashSignature minhash(const FeatureSet& features, std::size_t permutations,
                         std::uint64_t seed);

// Fraction of positions where the two signatures agree.
double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b);

struct LshParams {
  std::size_t bands = 0;
  std::size_t rows = 0;

  // Approximate Jaccard at which the collision probability crosses 1/2.
  double threshold() const;
  bool operator==(const LshParams&) const = default;
};

// Factorization bands*rows == permutations whose threshold (1/b)^(1/r) is
// closest to tau; ties go to more rows.
LshParams lsh_params(double tau, std::size_t permutations);

/// Banded MinHash index. Each record lands in one bucket per band, keyed by a
/// 64-bit digest of that band's rows. Record order is insertion order, and
/// query results are reported in that order.
class LshIndex {
 public:
  LshIndex(std::size_t permutations, double tau, std::uint64_t seed);
  LshIndex(LshParams params, double tau, std::uint64_t seed);

  std::size_t permutations() const noexcept { return params_.bands * params_.rows; }
  const LshParams& params() const noexcept { return params_; }
  double tau() const noexcept { return tau_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return ids_.size(); }

  void insert(std::string id, MinHashSignature signature);

  // Records colliding with `signature` in at least one band, minus `exclude`.
  std::vector<std::string> query(const MinHashSignature& signature,
                                 std::string_view exclude = {}) const;
  // Same as query() but returns insertion positions.
  std::vector<std::size_t> query_positions(const MinHashSignature& signature,
                                           std::string_view exclude = {}) const;

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const MinHashSignature& signature_at(std::size_t position) const { return signatures_.at(position); }
  // Throws UnknownId.
  std::size_t position_of(std::string_view id) const;
  bool contains(std::string_view id) const;

  // Buckets (one per band) that a record occupies; for inspection and tests.
  std::vector<std::uint64_t> bucket_keys(const MinHashSignature& signature) const;

  // JSON-lines: header {format, format_version, P, b, r, tau, seed}, then one
  // {"id", "sig"} record per line in insertion order.
  void save(std::ostream& out) const;
  static LshIndex load(std::istream& in);

 private:
  void check_length(const MinHashSignature& signature) const;

  LshParams params_;
  double tau_;
  std::uint64_t seed_;
  std::vector<std::string> ids_;
  std::vector<MinHashSignature> signatures_;
  std::unordered_map<std::string, std::size_t> positions_;
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> tables_;
};

inline constexpr int kLshFormatVersion = 1;

}  // namespace stare
