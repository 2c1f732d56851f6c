// Command-line driver for the retrieval pipeline.
//
//   stare fixture-gen --out data/fixture
//   stare bucket --config data/fixture/config.json
//   stare mine   --config ...
//   stare train  --config ...
//   stare mli    --config ...
//   stare eval   --config ...
//   stare run    --config ... [--out dir] (all five stages in order)
//   stare retrieve --config ... --query "..." [--k 5] [--format prompt]
//   stare ted --a "[IN:A [SL:B x ] ]" --b "[IN:A ]"
//
// Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numeric
// failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stare/error.hpp"
#include "stare/log.hpp"
#include "stare/pipeline.hpp"
#include "stare/tree_distance.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::optional<std::string> out_override;

stare::PipelineConfig load(const std::string& path) {
  auto config = stare::load_config(path, stare::stare_environment());
  if (out_override) {
    config.out_dir = fs::absolute(*out_override).lexically_normal();
    config.effective["output"]["dir"] = config.out_dir.string();
  }
  return config;
}

using Stage = stare::StageResult (*)(const stare::PipelineConfig&);

void run_stages(const std::string& config_path, std::initializer_list<Stage> stages) {
  const auto config = load(config_path);
  stare::DirectoryLock lock(config.out_dir);
  stare::archive_config(config);
  for (Stage stage : stages) {
    const auto result = stage(config);
    std::cout << result.report.dump(2) << '\n';
  }
}

void retrieve(const std::string& config_path, std::optional<std::string> index_path,
              std::optional<std::string> params_path, const std::string& query,
              std::optional<std::size_t> k_opt, std::optional<std::string> exclude,
              const std::string& format) {
  const auto config = load(config_path);
  const fs::path index_file =
      index_path ? fs::path(*index_path) : config.out_dir / stare::artifact::kRetrievalIndex;
  const fs::path params_file =
      params_path ? fs::path(*params_path) : config.out_dir / stare::artifact::kParams;
  const auto index = stare::RetrievalIndex::load(index_file);
  const auto encoder = stare::Encoder::load(params_file);
  const auto& injection = index.provenance().injection;
  const std::size_t k = k_opt.value_or(config.k);

  const auto hits = index.topk(encoder, query, k, injection ? &*injection : nullptr,
                               exclude ? std::optional<std::string_view>(*exclude) : std::nullopt);

  const auto records = stare::load_corpus(config.train);
  std::unordered_map<std::string, const stare::Record*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  auto record_of = [&](const stare::Hit& hit) -> const stare::Record& {
    const auto it = by_id.find(hit.id);
    if (it == by_id.end()) {
      throw stare::Error(stare::ErrorCode::UnknownId,
                         "index entry '" + hit.id + "' is not in " + config.train.string());
    }
    return *it->second;
  };

  if (format == "json") {
    json out = json::array();
    for (const auto& hit : hits) {
      const auto& r = record_of(hit);
      out.push_back({{"id", hit.id}, {"score", hit.score}, {"utterance", r.utterance}, {"parse", r.parse}});
    }
    std::cout << out.dump(2) << '\n';
    return;
  }
  // Most similar exemplar goes last, right before the query.
  std::vector<stare::Exemplar> exemplars;
  for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
    const auto& r = record_of(*it);
    exemplars.push_back({r.utterance, r.parse, std::nullopt});
  }
  stare::PromptSpec spec = config.prompt;
  spec.k = k;
  std::cout << stare::build_prompt(spec, exemplars, query);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structure-aware exemplar retrieval for semantic parsing"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  std::string config_path;
  auto stage_command = [&](const char* name, const char* help) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("-c,--config", config_path, "Pipeline config (JSON)")->required();
    cmd->add_option("-o,--out", out_override, "Artifact directory (overrides output.dir)");
    return cmd;
  };
  auto* bucket = stage_command("bucket", "MinHash-LSH index over the training parses");
  auto* mine = stage_command("mine", "Mine contrastive groups from the LSH pools");
  auto* train = stage_command("train", "Train the encoder and index the training bank");
  auto* mli = stage_command("mli", "Probe, extract directions and sweep injections");
  auto* eval = stage_command("eval", "Compare untrained, trained, trained+MLI and BM25");
  auto* run = stage_command("run", "All stages: bucket, mine, train, mli, eval");

  auto* retrieve_cmd = stage_command("retrieve", "Top-k exemplars for one utterance");
  std::optional<std::string> index_path, params_path, exclude;
  std::string query;
  std::optional<std::size_t> k;
  std::string format = "json";
  retrieve_cmd->add_option("--index", index_path, "Retrieval index (default: out/retrieval_index.json)");
  retrieve_cmd->add_option("--params", params_path, "Encoder parameters (default: out/encoder.params)");
  retrieve_cmd->add_option("--query", query, "Utterance to retrieve exemplars for")->required();
  retrieve_cmd->add_option("--k", k, "Number of exemplars (default: retrieval.k)")
      ->check(CLI::PositiveNumber);
  retrieve_cmd->add_option("--exclude", exclude, "Bank id never to return");
  retrieve_cmd->add_option("--format", format, "json or prompt")
      ->check(CLI::IsMember({"json", "prompt"}));

  auto* ted_cmd = app.add_subcommand("ted", "Tree edit distance and sim_struct of two parses");
  std::string parse_a, parse_b, dialect = "bracketed";
  bool anonymize = false;
  ted_cmd->add_option("--a", parse_a, "First parse")->required();
  ted_cmd->add_option("--b", parse_b, "Second parse")->required();
  ted_cmd->add_option("--dialect", dialect, "bracketed, sexpr or sql")
      ->check(CLI::IsMember({"bracketed", "sexpr", "sql"}, CLI::ignore_case));
  ted_cmd->add_flag("--anonymize", anonymize, "Collapse leaves to a single placeholder");

  auto* fixture_cmd = app.add_subcommand("fixture-gen", "Write the synthetic fixture and a config");
  std::string fixture_out;
  stare::FixtureConfig fixture;
  fixture_cmd->add_option("--out", fixture_out, "Output directory")->required();
  fixture_cmd->add_option("--clusters", fixture.clusters)->check(CLI::PositiveNumber);
  fixture_cmd->add_option("--train-per-cluster", fixture.train_per_cluster)->check(CLI::PositiveNumber);
  fixture_cmd->add_option("--dev-per-cluster", fixture.dev_per_cluster);
  fixture_cmd->add_option("--probe-sentences", fixture.probe_sentences);
  fixture_cmd->add_option("--seed", fixture.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  auto log = stare::logger();
  log->set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*bucket) run_stages(config_path, {stare::run_bucket});
    if (*mine) run_stages(config_path, {stare::run_mine});
    if (*train) run_stages(config_path, {stare::run_train});
    if (*mli) run_stages(config_path, {stare::run_mli});
    if (*eval) run_stages(config_path, {stare::run_eval});
    if (*run) {
      run_stages(config_path, {stare::run_bucket, stare::run_mine, stare::run_train,
                               stare::run_mli, stare::run_eval});
    }
    if (*retrieve_cmd) retrieve(config_path, index_path, params_path, query, k, exclude, format);
    if (*ted_cmd) {
      const auto d = stare::parse_dialect_name(dialect);
      auto a = stare::parse(parse_a, d);
      auto b = stare::parse(parse_b, d);
      if (anonymize) {
        a = stare::anonymize_leaves(a);
        b = stare::anonymize_leaves(b);
      }
      std::cout << json{{"ted", stare::ted(a, b)}, {"sim_struct", stare::sim_struct(a, b)}}.dump()
                << '\n';
    }
    if (*fixture_cmd) std::cout << stare::write_fixture_bundle(fixture_out, fixture).string() << '\n';
  } catch (const stare::Error& e) {
    log->error("{}", e.what());
    return stare::is_numeric_failure(e.code()) ? kNumeric : kData;
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return kData;
  }
  return kOk;
}
