#include "stare/bucketing.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>

#include "parse_internal.hpp"
#include "stare/error.hpp"
#include "stare/hashing.hpp"
#include "stare/log.hpp"

namespace stare {

using detail::FeatureKind;

namespace {

// Lowercase, then collapse every run of digits into "<d>".
std::string normalize_token(std::string_view token) {
  std::string out;
  bool in_digits = false;
  for (char c : token) {
    if (c >= '0' && c <= '9') {
      if (!in_digits) out += "<d>";
      in_digits = true;
      continue;
    }
    in_digits = false;
    out += detail::ascii_lower(c);
  }
  return out;
}

void add_terminal(FeatureSet& out, std::string_view text) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !detail::is_space(text[i])) ++i;
    if (i > start) out.insert(normalize_token(text.substr(start, i - start)));
  }
}

}  // namespace

FeatureSet extract_features(std::string_view parse, ParseDialect dialect) {
  FeatureSet out;
  const detail::FeatureSink sink = [&out](std::string_view token, FeatureKind kind) {
    if (kind == FeatureKind::Verbatim) {
      if (!token.empty()) out.emplace(token);
    } else {
      add_terminal(out, token);
    }
  };
  switch (dialect) {
    case ParseDialect::Bracketed: detail::parse_bracketed(parse, sink); break;
    case ParseDialect::SExpr: detail::parse_sexpr(parse, sink); break;
    case ParseDialect::SqlSkeleton: detail::parse_sql_skeleton(parse, sink); break;
  }
  return out;
}

double exact_jaccard(const FeatureSet& a, const FeatureSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

std::uint64_t feature_key(std::string_view feature) noexcept { return hash_bytes(feature); }

std::uint64_t minhash_permutation(std::uint64_t key, std::size_t i, std::uint64_t seed) noexcept {
  __extension__ typedef unsigned __int128 u128;
  std::uint64_t s = hash_combine(mix64(seed), static_cast<std::uint64_t>(i));
  const std::uint64_t a_hi = s = mix64(s);
  const std::uint64_t a_lo = s = mix64(s);
  const std::uint64_t b_hi = s = mix64(s);
  const std::uint64_t b_lo = mix64(s);
  const u128 a = (static_cast<u128>(a_hi) << 64) | a_lo;
  const u128 b = (static_cast<u128>(b_hi) << 64) | b_lo;
  return static_cast<std::uint64_t>((a * key + b) >> 64);
}

MinHashSignature minhash(const FeatureSet& features, std::size_t permutations,
                         std::uint64_t seed) {
  if (permutations < 1) {
    throw Error(ErrorCode::InvalidArgument, "MinHash needs at least one permutation");
  }
  if (features.empty()) {
    throw Error(ErrorCode::EmptyFeatureSet, "cannot sketch an empty feature set");
  }
  std::vector<std::uint64_t> keys;
  keys.reserve(features.size());
  for (const auto& f : features) keys.push_back(feature_key(f));

  MinHashSignature sig;
  sig.values.assign(permutations, std::numeric_limits<std::uint64_t>::max());
  for (std::size_t i = 0; i < permutations; ++i) {
    for (auto key : keys) sig.values[i] = std::min(sig.values[i], minhash_permutation(key, i, seed));
  }
  return sig;
}

double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::SignatureLengthMismatch, "signatures differ in length");
  }
  if (a.size() == 0) return 1.0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += a.values[i] == b.values[i];
  return static_cast<double>(agree) / static_cast<double>(a.size());
}

double LshParams::threshold() const {
  return std::pow(1.0 / static_cast<double>(bands), 1.0 / static_cast<double>(rows));
}

LshParams lsh_params(double tau, std::size_t permutations) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "tau must lie in (0, 1)");
  }
  if (permutations < 2) {
    throw Error(ErrorCode::InvalidArgument, "LSH needs at least two permutations");
  }
  LshParams best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t b = 1; b <= permutations; ++b) {
    if (permutations % b != 0) continue;
    const LshParams candidate{b, permutations / b};
    const double gap = std::abs(candidate.threshold() - tau);
    if (gap < best_gap || (gap == best_gap && candidate.rows > best.rows)) {
      best = candidate;
      best_gap = gap;
    }
  }
  if (best.bands == 0) {
    throw Error(ErrorCode::NoFactorization, "no band factorization found");
  }
  return best;
}

LshIndex::LshIndex(std::size_t permutations, double tau, std::uint64_t seed)
    : LshIndex(lsh_params(tau, permutations), tau, seed) {}

LshIndex::LshIndex(LshParams params, double tau, std::uint64_t seed)
    : params_(params), tau_(tau), seed_(seed), tables_(params.bands) {
  if (params_.bands == 0 || params_.rows == 0) {
    throw Error(ErrorCode::InvalidArgument, "bands and rows must be positive");
  }
  const double gap = std::abs(params_.threshold() - tau_);
  if (gap > 0.05) {
    logger()->warn("LSH threshold {:.4f} (b={}, r={}) is {:.3f} away from tau={}",
                   params_.threshold(), params_.bands, params_.rows, gap, tau_);
  }
}

void LshIndex::check_length(const MinHashSignature& signature) const {
  if (signature.size() != permutations()) {
    throw Error(ErrorCode::SignatureLengthMismatch,
                "signature has " + std::to_string(signature.size()) + " values, index expects " +
                    std::to_string(permutations()));
  }
}

std::vector<std::uint64_t> LshIndex::bucket_keys(const MinHashSignature& signature) const {
  check_length(signature);
  std::vector<std::uint64_t> keys(params_.bands);
  for (std::size_t band = 0; band < params_.bands; ++band) {
    const std::span<const std::uint64_t> rows(signature.values.data() + band * params_.rows,
                                              params_.rows);
    keys[band] = hash_words(rows, band);
  }
  return keys;
}

void LshIndex::insert(std::string id, MinHashSignature signature) {
  check_length(signature);
  if (positions_.count(id) != 0) {
    throw Error(ErrorCode::DuplicateId, "id '" + id + "' is already indexed");
  }
  const std::size_t position = ids_.size();
  const auto keys = bucket_keys(signature);
  for (std::size_t band = 0; band < params_.bands; ++band) {
    tables_[band][keys[band]].push_back(position);
  }
  positions_.emplace(id, position);
  ids_.push_back(std::move(id));
  signatures_.push_back(std::move(signature));
}

std::vector<std::size_t> LshIndex::query_positions(const MinHashSignature& signature,
                                                   std::string_view exclude) const {
  const auto keys = bucket_keys(signature);
  std::vector<bool> hit(ids_.size(), false);
  for (std::size_t band = 0; band < params_.bands; ++band) {
    const auto it = tables_[band].find(keys[band]);
    if (it == tables_[band].end()) continue;
    for (auto p : it->second) hit[p] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < hit.size(); ++p) {
    if (hit[p] && ids_[p] != exclude) out.push_back(p);
  }
  return out;
}

std::vector<std::string> LshIndex::query(const MinHashSignature& signature,
                                         std::string_view exclude) const {
  std::vector<std::string> out;
  for (auto p : query_positions(signature, exclude)) out.push_back(ids_[p]);
  return out;
}

std::size_t LshIndex::position_of(std::string_view id) const {
  const auto it = positions_.find(std::string(id));
  if (it == positions_.end()) {
    throw Error(ErrorCode::UnknownId, "id '" + std::string(id) + "' is not indexed");
  }
  return it->second;
}

bool LshIndex::contains(std::string_view id) const {
  return positions_.count(std::string(id)) != 0;
}

void LshIndex::save(std::ostream& out) const {
  const nlohmann::json header = {
      {"format", "stare-lsh"},         {"format_version", kLshFormatVersion},
      {"P", permutations()},           {"b", params_.bands},
      {"r", params_.rows},             {"tau", tau_},
      {"seed", seed_},
  };
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const nlohmann::json record = {{"id", ids_[i]}, {"sig", signatures_[i].values}};
    out << record.dump() << '\n';
  }
}

LshIndex LshIndex::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Format, "LSH index file is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("bad LSH index header: ") + e.what());
  }
  if (header.value("format", "") != "stare-lsh") {
    throw Error(ErrorCode::Format, "not an LSH index file");
  }
  if (header.value("format_version", 0) != kLshFormatVersion) {
    throw Error(ErrorCode::Format, "unsupported LSH index version " +
                                       header.value("format_version", nlohmann::json()).dump());
  }
  const LshParams params{header.at("b").get<std::size_t>(), header.at("r").get<std::size_t>()};
  if (params.bands * params.rows != header.at("P").get<std::size_t>()) {
    throw Error(ErrorCode::Format, "LSH header has b*r != P");
  }
  LshIndex index(params, header.at("tau").get<double>(), header.at("seed").get<std::uint64_t>());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto record = nlohmann::json::parse(line);
      index.insert(record.at("id").get<std::string>(),
                   {record.at("sig").get<std::vector<std::uint64_t>>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Format,
                  "LSH index line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return index;
}

}  // namespace stare
