#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stare/bucketing.hpp"
#include "stare/encoder.hpp"
#include "stare/fixtures.hpp"
#include "stare/mli.hpp"
#include "stare/pair_mining.hpp"
#include "stare/parse_tree.hpp"
#include "stare/retrieval.hpp"
#include "stare/training.hpp"

namespace stare {

// Artifact file names inside the output directory.
namespace artifact {
inline constexpr const char* kConfig = "config.used.json";
inline constexpr const char* kLshIndex = "lsh_index.jsonl";
inline constexpr const char* kBucketReport = "bucket_report.json";
inline constexpr const char* kPairs = "pairs.jsonl";
inline constexpr const char* kMiningReport = "mining_report.json";
inline constexpr const char* kParams = "encoder.params";
inline constexpr const char* kLossCsv = "loss.csv";
inline constexpr const char* kTrainReport = "train_report.json";
inline constexpr const char* kRetrievalIndex = "retrieval_index.json";
inline constexpr const char* kProbes = "probes.json";
inline constexpr const char* kDirection = "direction.json";
inline constexpr const char* kMliGrid = "mli_grid.csv";
inline constexpr const char* kMliReport = "mli_report.json";
inline constexpr const char* kMliIndex = "retrieval_index_mli.json";
inline constexpr const char* kMetrics = "metrics.json";
}  // namespace artifact

/// Everything one pipeline run needs. Relative paths in the config file are
/// resolved against the directory that contains it.
struct PipelineConfig {
  // data
  std::filesystem::path train;
  std::optional<std::filesystem::path> dev;
  ParseDialect dialect = ParseDialect::Bracketed;
  bool anonymize_leaves = false;
  // bucketing
  std::size_t permutations = 128;
  double tau = 0.5;
  std::uint64_t lsh_seed = 1;
  // pair mining, encoder, training
  MiningConfig mining;
  EncoderConfig encoder;
  TrainConfig training;
  // mli
  SweepGrid grid;  // empty layers = defaults for the encoder depth
  ProbeConfig probe;
  std::map<Property, std::filesystem::path> probe_corpora;
  std::map<Property, std::filesystem::path> label_sets;  // default: built-in sets
  // retrieval and prompts
  std::size_t k = 5;
  PromptSpec prompt;
  // output
  std::filesystem::path out_dir;
  std::size_t workers = 0;

  // The effective configuration after environment overrides, as loaded.
  nlohmann::json effective;
};

using EnvMap = std::map<std::string, std::string>;

// Reads STARE_* variables from the process environment.
EnvMap stare_environment();

// Parses and validates a config document. `env` entries named
// STARE_<SECTION>_<KEY> override section.key (values are parsed as JSON when
// possible, otherwise taken as strings). Every violation raises
// InvalidConfig naming the field; referenced input files must exist.
PipelineConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                            const EnvMap& env = {});
PipelineConfig load_config(const std::filesystem::path& path, const EnvMap& env = {});

struct StageResult {
  nlohmann::json report;
  std::vector<std::filesystem::path> artifacts;
};

// Each stage reads its inputs from the config and earlier artifacts in
// out_dir and writes its own artifacts there.
StageResult run_bucket(const PipelineConfig& config);
StageResult run_mine(const PipelineConfig& config);
StageResult run_train(const PipelineConfig& config);
StageResult run_mli(const PipelineConfig& config);
StageResult run_eval(const PipelineConfig& config);

// Writes config.effective to out_dir.
std::filesystem::path archive_config(const PipelineConfig& config);

// Vocabulary over train utterances plus probe-corpus tokens.
Vocabulary build_vocabulary(const PipelineConfig& config);

std::vector<DevQuery> load_dev_queries(const std::filesystem::path& path);
std::map<Property, TokenLabelCorpus> load_probe_corpora(const PipelineConfig& config);

// Writes a synthetic fixture (train.jsonl, dev.jsonl, probes/*.tsv) and a
// ready-to-run config.json into `dir`; returns the config path.
std::filesystem::path write_fixture_bundle(const std::filesystem::path& dir,
                                           const FixtureConfig& fixture);

// Holds an exclusive lock file in a directory for the object's lifetime.
// Throws Io when another run holds it.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

  static constexpr const char* kFileName = ".stare.lock";

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace stare
