#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stare/bucketing.hpp"
#include "stare/corpus.hpp"

namespace stare {

struct MiningConfig {
  std::size_t n_hard = 3;
  std::size_t n_rand = 2;
  std::uint64_t rng_seed = 0;
  std::size_t workers = 0;  // 0 = hardware concurrency
};

struct ContrastiveGroup {
  std::string anchor_id;
  std::string positive_id;
  std::vector<std::string> hard_negative_ids;
  std::vector<std::string> random_negative_ids;
  double positive_sim = 0.0;
  // Set when the pool or the out-of-pool remainder was too small to fill the
  // configured counts.
  bool short_hard = false;
  bool short_random = false;

  bool flagged() const noexcept { return short_hard || short_random; }
  bool operator==(const ContrastiveGroup&) const = default;
};

// Mines one group for the anchor at corpus position `anchor` from the pool
// of corpus positions (the anchor itself must not be in the pool). Returns
// nullopt when the pool is empty.
std::optional<ContrastiveGroup> mine_group(const ParsedCorpus& corpus, std::size_t anchor,
                                           std::span<const std::size_t> pool,
                                           const MiningConfig& config);

// Id-based variant; throws UnknownId for unresolvable ids.
std::optional<ContrastiveGroup> mine_group(const ParsedCorpus& corpus, std::string_view anchor_id,
                                           std::span<const std::string> pool_ids,
                                           const MiningConfig& config);

struct MiningReport {
  std::size_t anchors = 0;
  std::size_t groups = 0;
  std::size_t skipped_empty_pool = 0;
  std::size_t flagged_short = 0;
  double mean_pool_size = 0.0;
  double mean_positive_sim = 0.0;
  std::vector<std::size_t> pool_sizes;  // per anchor, corpus order
};

struct MiningResult {
  std::vector<ContrastiveGroup> groups;
  MiningReport report;
};

// Pools come from the LSH index (which must hold exactly the corpus ids);
// groups are returned in corpus order of their anchors.
MiningResult mine_all(const ParsedCorpus& corpus, const LshIndex& index,
                      const MiningConfig& config);

// JSON lines {"anchor","positive","hard_negatives","random_negatives","positive_sim"}.
void write_groups(std::ostream& out, std::span<const ContrastiveGroup> groups);
// Schema violations raise Format naming the line.
std::vector<ContrastiveGroup> read_groups(std::istream& in, std::string_view source = "<stream>");

}  // namespace stare
