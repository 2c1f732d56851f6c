#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "stare/bucketing.hpp"
#include "stare/error.hpp"
#include "stare/fixtures.hpp"
#include "stare/pair_mining.hpp"
#include "stare/tree_distance.hpp"

using namespace stare;

namespace {

ParsedCorpus corpus_of(const std::vector<std::string>& parses) {
  std::vector<Record> records;
  for (std::size_t i = 0; i < parses.size(); ++i) records.push_back({"r" + std::to_string(i), "u", parses[i]});
  return ParsedCorpus(records, ParseDialect::Bracketed);
}

LshIndex index_of(const ParsedCorpus& corpus, double tau = 0.5) {
  LshIndex index(128, tau, 1);
  for (const auto& r : corpus.records()) {
    index.insert(r.id, minhash(extract_features(r.parse, ParseDialect::Bracketed), 128, 1));
  }
  return index;
}

}  // namespace

TEST_SUITE("pair_mining") {
  TEST_CASE("single candidate is a forced positive") {
    const auto corpus = corpus_of({"[IN:A [SL:B x ] ]", "[IN:A [SL:B y ] ]", "[IN:C ]"});
    const std::vector<std::size_t> pool{1};
    const auto g = mine_group(corpus, 0, pool, MiningConfig{});
    REQUIRE(g);
    CHECK(g->positive_id == "r1");
    CHECK(g->hard_negative_ids.empty());
    CHECK(g->short_hard);
    CHECK(g->flagged());
  }

  TEST_CASE("identical parse wins") {
    const auto corpus = corpus_of({"[IN:A [SL:B x ] ]", "[IN:Q ]", "[IN:A [SL:B x ] ]", "[IN:A [SL:C x ] ]"});
    const std::vector<std::size_t> pool{1, 2, 3};
    const auto g = mine_group(corpus, 0, pool, MiningConfig{});
    REQUIRE(g);
    CHECK(g->positive_id == "r2");
    CHECK(g->positive_sim == 1.0);
  }

  TEST_CASE("empty pool is skipped") {
    const auto corpus = corpus_of({"[IN:A ]", "[IN:B ]"});
    CHECK_FALSE(mine_group(corpus, 0, std::vector<std::size_t>{}, MiningConfig{}));
  }

  TEST_CASE("id variant and errors") {
    const auto corpus = corpus_of({"[IN:A [SL:B x ] ]", "[IN:A [SL:B y ] ]"});
    const std::vector<std::string> pool{"r1"};
    CHECK(mine_group(corpus, "r0", pool, MiningConfig{})->positive_id == "r1");
    CHECK_THROWS_AS(mine_group(corpus, "nope", pool, MiningConfig{}), Error);
    const std::vector<std::string> bad{"zz"};
    CHECK_THROWS_AS(mine_group(corpus, "r0", bad, MiningConfig{}), Error);
  }

  TEST_CASE("disjoint corpus skips every anchor") {
    const auto corpus = corpus_of({"[IN:A [SL:B aa ] ]", "[IN:C [SL:D bb ] ]", "[IN:E [SL:F cc ] ]"});
    const auto result = mine_all(corpus, index_of(corpus), MiningConfig{});
    CHECK(result.groups.empty());
    CHECK(result.report.anchors == 3);
    CHECK(result.report.skipped_empty_pool == 3);
  }

  TEST_CASE("identical records all have positive similarity one") {
    const auto corpus = corpus_of(std::vector<std::string>(5, "[IN:A [SL:B x ] [SL:C y ] ]"));
    const auto result = mine_all(corpus, index_of(corpus), MiningConfig{});
    CHECK(result.groups.size() == 5);
    for (const auto& g : result.groups) CHECK(g.positive_sim == 1.0);
    CHECK(result.report.mean_positive_sim == 1.0);
  }

  TEST_CASE("planted clusters mine in-cluster positives") {
    const auto records = generate_cluster_corpus(5, 20, 4);
    const ParsedCorpus corpus(records, ParseDialect::Bracketed);
    const auto result = mine_all(corpus, index_of(corpus), MiningConfig{});
    REQUIRE(!result.groups.empty());
    auto cluster = [](const std::string& id) { return id.substr(0, id.find('-')); };
    std::size_t in_cluster = 0;
    for (const auto& g : result.groups) {
      if (cluster(g.anchor_id) == cluster(g.positive_id)) {
        ++in_cluster;
        continue;
      }
      // A foreign positive is only acceptable as an exact tie with the best
      // record of the anchor's own cluster.
      const std::size_t a = corpus.index_of(g.anchor_id);
      double best_own = 0.0;
      for (std::size_t j = 0; j < corpus.size(); ++j) {
        if (j != a && cluster(corpus.record(j).id) == cluster(g.anchor_id)) {
          best_own = std::max(best_own, sim_struct(corpus.tree(a), corpus.tree(j)));
        }
      }
      CHECK(g.positive_sim == best_own);
    }
    CHECK(in_cluster * 10 >= result.groups.size() * 9);
  }

  TEST_CASE("group invariants and determinism") {
    const auto records = generate_cluster_corpus(8, 10, 9);
    const ParsedCorpus corpus(records, ParseDialect::Bracketed);
    const auto index = index_of(corpus, 0.3);
    MiningConfig config;
    config.rng_seed = 12;
    const auto a = mine_all(corpus, index, config);
    config.workers = 3;
    const auto b = mine_all(corpus, index, config);
    CHECK(a.groups == b.groups);
    for (const auto& g : a.groups) {
      const auto anchor = corpus.index_of(g.anchor_id);
      const auto pool = index.query(index.signature_at(anchor), g.anchor_id);
      const std::set<std::string> in_pool(pool.begin(), pool.end());
      std::set<std::string> seen{g.anchor_id, g.positive_id};
      for (const auto& h : g.hard_negative_ids) {
        CHECK(in_pool.contains(h));
        CHECK(seen.insert(h).second);
        CHECK(g.positive_sim >= sim_struct(corpus.tree(anchor), corpus.tree(corpus.index_of(h))));
      }
      for (const auto& r : g.random_negative_ids) {
        CHECK_FALSE(in_pool.contains(r));
        CHECK(seen.insert(r).second);
      }
      CHECK((g.hard_negative_ids.size() == 3 || g.short_hard));
      CHECK((g.random_negative_ids.size() == 2 || g.short_random));
    }
  }

  TEST_CASE("index must match corpus") {
    const auto corpus = corpus_of({"[IN:A ]", "[IN:B ]"});
    const auto other = corpus_of({"[IN:A ]"});
    CHECK_THROWS_AS(mine_all(corpus, index_of(other), MiningConfig{}), Error);
  }

  TEST_CASE("groups round-trip through JSON lines") {
    const std::vector<ContrastiveGroup> groups{{"a", "b", {"c", "d"}, {"e"}, 0.75, false, false},
                                               {"b", "a", {}, {}, 1.0, false, false}};
    std::stringstream s;
    write_groups(s, groups);
    const auto back = read_groups(s);
    REQUIRE(back.size() == 2);
    CHECK(back[0].anchor_id == "a");
    CHECK(back[0].hard_negative_ids == groups[0].hard_negative_ids);
    CHECK(back[0].random_negative_ids == groups[0].random_negative_ids);
    CHECK(back[0].positive_sim == 0.75);
    std::stringstream bad("{\"anchor\": \"a\"}\n");
    try {
      read_groups(bad, "pairs.jsonl");
      FAIL("expected a schema error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("pairs.jsonl:1") != std::string::npos);
    }
  }
}
