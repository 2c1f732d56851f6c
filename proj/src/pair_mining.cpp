#include "stare/pair_mining.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "stare/error.hpp"
#include "stare/hashing.hpp"
#include "stare/parallel.hpp"
#include "stare/rng.hpp"
#include "stare/tree_distance.hpp"

namespace stare {
namespace {

std::vector<std::size_t> draw_random_negatives(std::size_t corpus_size, std::size_t anchor,
                                               const std::vector<bool>& in_pool,
                                               std::size_t pool_size, std::size_t wanted,
                                               Rng& rng) {
  const std::size_t outside = corpus_size - 1 - pool_size;
  std::vector<std::size_t> out;
  if (outside <= wanted) {
    for (std::size_t i = 0; i < corpus_size; ++i) {
      if (i != anchor && !in_pool[i]) out.push_back(i);
    }
    return out;
  }
  std::unordered_set<std::size_t> taken;
  while (out.size() < wanted) {
    const std::size_t i = rng.below(corpus_size);
    if (i == anchor || in_pool[i] || !taken.insert(i).second) continue;
    out.push_back(i);
  }
  return out;
}

}  // namespace

std::optional<ContrastiveGroup> mine_group(const ParsedCorpus& corpus, std::size_t anchor,
                                           std::span<const std::size_t> pool,
                                           const MiningConfig& config) {
  if (anchor >= corpus.size()) {
    throw Error(ErrorCode::UnknownId, "anchor position out of range");
  }
  if (pool.empty()) return std::nullopt;

  std::vector<bool> in_pool(corpus.size(), false);
  std::vector<std::size_t> members;
  for (auto p : pool) {
    if (p >= corpus.size()) throw Error(ErrorCode::UnknownId, "pool position out of range");
    if (p == anchor) {
      throw Error(ErrorCode::InvalidArgument, "pool must not contain the anchor");
    }
    if (!in_pool[p]) members.push_back(p);
    in_pool[p] = true;
  }

  const ParseTree& anchor_tree = corpus.tree(anchor);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(members.size());
  for (auto p : members) scored.emplace_back(sim_struct(anchor_tree, corpus.tree(p)), p);

  // Positive: highest similarity, smallest corpus position on ties.
  const auto positive = *std::min_element(scored.begin(), scored.end(), [](auto& x, auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  });

  // Hard negatives: lowest similarity first, excluding the positive.
  std::vector<std::pair<double, std::size_t>> rest;
  for (const auto& s : scored) {
    if (s.second != positive.second) rest.push_back(s);
  }
  std::sort(rest.begin(), rest.end());

  ContrastiveGroup group;
  group.anchor_id = corpus.record(anchor).id;
  group.positive_id = corpus.record(positive.second).id;
  group.positive_sim = positive.first;
  for (std::size_t i = 0; i < rest.size() && i < config.n_hard; ++i) {
    group.hard_negative_ids.push_back(corpus.record(rest[i].second).id);
  }
  group.short_hard = group.hard_negative_ids.size() < config.n_hard;

  Rng rng(hash_combine(config.rng_seed, hash_bytes(group.anchor_id)));
  for (auto i : draw_random_negatives(corpus.size(), anchor, in_pool, members.size(),
                                      config.n_rand, rng)) {
    group.random_negative_ids.push_back(corpus.record(i).id);
  }
  group.short_random = group.random_negative_ids.size() < config.n_rand;
  return group;
}

std::optional<ContrastiveGroup> mine_group(const ParsedCorpus& corpus, std::string_view anchor_id,
                                           std::span<const std::string> pool_ids,
                                           const MiningConfig& config) {
  const std::size_t anchor = corpus.index_of(anchor_id);
  std::vector<std::size_t> pool;
  pool.reserve(pool_ids.size());
  for (const auto& id : pool_ids) pool.push_back(corpus.index_of(id));
  return mine_group(corpus, anchor, pool, config);
}

MiningResult mine_all(const ParsedCorpus& corpus, const LshIndex& index,
                      const MiningConfig& config) {
  if (index.size() != corpus.size()) {
    throw Error(ErrorCode::IndexCorpusMismatch,
                "index holds " + std::to_string(index.size()) + " records, corpus has " +
                    std::to_string(corpus.size()));
  }
  // Index position -> corpus position.
  std::vector<std::size_t> to_corpus(index.size());
  for (std::size_t p = 0; p < index.size(); ++p) {
    const auto& id = index.ids()[p];
    if (!corpus.contains(id)) {
      throw Error(ErrorCode::IndexCorpusMismatch, "index id '" + id + "' is not in the corpus");
    }
    to_corpus[p] = corpus.index_of(id);
  }

  const std::size_t n = corpus.size();
  std::vector<std::optional<ContrastiveGroup>> slots(n);
  std::vector<std::size_t> pool_sizes(n, 0);
  parallel_for(n, config.workers, [&](std::size_t a) {
    const auto& id = corpus.record(a).id;
    const auto& sig = index.signature_at(index.position_of(id));
    std::vector<std::size_t> pool;
    for (auto p : index.query_positions(sig, id)) pool.push_back(to_corpus[p]);
    std::sort(pool.begin(), pool.end());
    pool_sizes[a] = pool.size();
    slots[a] = mine_group(corpus, a, pool, config);
  });

  MiningResult result;
  auto& report = result.report;
  report.anchors = n;
  report.pool_sizes = pool_sizes;
  double pool_total = 0.0;
  double sim_total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    pool_total += static_cast<double>(pool_sizes[a]);
    if (!slots[a]) {
      ++report.skipped_empty_pool;
      continue;
    }
    sim_total += slots[a]->positive_sim;
    if (slots[a]->flagged()) ++report.flagged_short;
    result.groups.push_back(std::move(*slots[a]));
  }
  report.groups = result.groups.size();
  report.mean_pool_size = n == 0 ? 0.0 : pool_total / static_cast<double>(n);
  report.mean_positive_sim =
      report.groups == 0 ? 0.0 : sim_total / static_cast<double>(report.groups);
  return result;
}

void write_groups(std::ostream& out, std::span<const ContrastiveGroup> groups) {
  for (const auto& g : groups) {
    const nlohmann::json obj = {
        {"anchor", g.anchor_id},
        {"positive", g.positive_id},
        {"hard_negatives", g.hard_negative_ids},
        {"random_negatives", g.random_negative_ids},
        {"positive_sim", g.positive_sim},
    };
    out << obj.dump() << '\n';
  }
}

std::vector<ContrastiveGroup> read_groups(std::istream& in, std::string_view source) {
  std::vector<ContrastiveGroup> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      ContrastiveGroup g;
      g.anchor_id = obj.at("anchor").get<std::string>();
      g.positive_id = obj.at("positive").get<std::string>();
      g.hard_negative_ids = obj.at("hard_negatives").get<std::vector<std::string>>();
      g.random_negative_ids = obj.at("random_negatives").get<std::vector<std::string>>();
      g.positive_sim = obj.at("positive_sim").get<double>();
      out.push_back(std::move(g));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Format,
                  std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace stare
