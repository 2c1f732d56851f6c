#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stare/corpus.hpp"
#include "stare/mli.hpp"

namespace stare {

// Synthetic task-oriented parsing data with planted clusters. Each cluster
// is one parse template: an intent whose utterances open with a cluster
// specific trigger ("book table ...") followed by slot phrases. Slot labels
// and slot filler phrases are drawn from pools shared by every cluster, so
// utterances of different clusters overlap lexically while their parses
// differ structurally. Optional slots give within-cluster structural
// variation; some templates nest a second intent inside a slot.
struct FixtureConfig {
  std::size_t clusters = 8;
  std::size_t train_per_cluster = 24;
  std::size_t dev_per_cluster = 4;
  std::size_t probe_sentences = 400;
  std::uint64_t seed = 7;
};

struct Fixture {
  std::vector<Record> train;
  std::vector<Record> dev;
  std::map<Property, TokenLabelCorpus> probes;
  std::vector<std::size_t> train_cluster;  // cluster of each train record
  std::vector<std::size_t> dev_cluster;
};

Fixture generate_fixture(const FixtureConfig& config);

// Only the records, `per_cluster` per cluster, ids "c<cluster>-<n>".
std::vector<Record> generate_cluster_corpus(std::size_t clusters, std::size_t per_cluster,
                                            std::uint64_t seed);

// Writes "token<TAB>label" sentences.
void write_token_labels(std::ostream& out, const TokenLabelCorpus& corpus);

}  // namespace stare
