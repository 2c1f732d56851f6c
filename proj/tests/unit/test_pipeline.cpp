#include <doctest.h>

#include <fstream>
#include <functional>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "stare/error.hpp"
#include "stare/pipeline.hpp"

using namespace stare;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  FAIL("no error thrown");
  return {};
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

// A fixture small enough to run every stage in a few seconds.
struct SmallRun {
  stare::testing::TempDir tmp{"stare-pipeline"};
  json doc;

  SmallRun() {
    FixtureConfig f;
    f.clusters = 3;
    f.train_per_cluster = 8;
    f.dev_per_cluster = 2;
    f.probe_sentences = 40;
    const auto path = write_fixture_bundle(tmp.path(), f);
    doc = read_json(path);
    doc["encoder"] = {{"dim", 16}, {"layers", 2}, {"heads", 2}, {"max_len", 24}, {"ffn_dim", 32}, {"seed", 1}};
    doc["training"]["epochs"] = 1;
    doc["mli"]["layers"] = {1, 2};
    doc["mli"]["lambdas"] = {0.0, 1.0};
    doc["mli"]["probe_epochs"] = 20;
    doc["retrieval"]["k"] = 2;
  }

  PipelineConfig config(const EnvMap& env = {}) const { return parse_config(doc, tmp.path(), env); }
};

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config defaults and paths") {
    SmallRun run;
    const auto c = run.config();
    CHECK(c.train == run.tmp.path() / "train.jsonl");
    CHECK(c.out_dir == run.tmp.path() / "out");
    CHECK(c.k == 2);
    CHECK(c.prompt.k == 2);
    CHECK(c.prompt.task_name == "MTop");
    CHECK(c.grid.layers == std::vector<std::size_t>{1, 2});
    CHECK(c.grid.properties.size() == 3);
    CHECK(c.probe_corpora.size() == 3);
    CHECK(c.training.lr == 3e-4);
    CHECK(c.mining.rng_seed == 3);
  }

  TEST_CASE("config errors name the field") {
    SmallRun run;
    auto with = [&](const std::function<void(json&)>& edit) {
      json d = run.doc;
      edit(d);
      return message_of([&] { parse_config(d, run.tmp.path()); });
    };
    CHECK(with([](json& d) { d["bucketing"]["tau"] = 1.0; }).find("bucketing.tau") != std::string::npos);
    CHECK(with([](json& d) { d["bucketing"]["taus"] = 0.4; }).find("bucketing.taus is not a known setting") !=
          std::string::npos);
    CHECK(with([](json& d) { d["extras"] = json::object(); }).find("extras") != std::string::npos);
    CHECK(with([](json& d) { d["data"]["train"] = "nope.jsonl"; }).find("data.train refers to a missing file") !=
          std::string::npos);
    CHECK(with([](json& d) { d["data"].erase("train"); }).find("data.train is required") != std::string::npos);
    CHECK(with([](json& d) { d["mining"]["n_hard"] = -1; }).find("mining.n_hard") != std::string::npos);
    CHECK(with([](json& d) { d["mli"]["layers"] = {3}; }).find("mli.layers") != std::string::npos);
    CHECK(with([](json& d) { d["mli"]["properties"] = {"NER"}; }).find("NER") != std::string::npos);
    CHECK(with([](json& d) { d["retrieval"]["k"] = 0; }).find("retrieval.k") != std::string::npos);
    CHECK(with([](json& d) { d["prompt"]["template"] = "chat"; }).find("prompt.template") != std::string::npos);
    CHECK(with([](json& d) { d["data"]["dialect"] = "yaml"; }).find("data.dialect") != std::string::npos);
    CHECK(with([](json& d) {
            d["prompt"]["schema"] = "x";
            d["prompt"]["schema_file"] = "train.jsonl";
          }).find("exclusive") != std::string::npos);
    // Negative lambdas steer the other way and are allowed.
    json neg = run.doc;
    neg["mli"]["lambdas"] = {-1.0, 2.0};
    CHECK(parse_config(neg, run.tmp.path()).grid.lambdas == std::vector<double>{-1.0, 2.0});
  }

  TEST_CASE("environment overrides") {
    SmallRun run;
    const EnvMap env{{"STARE_TRAINING_EPOCHS", "0"},
                     {"STARE_PROMPT_TASK", "TOP v2"},
                     {"STARE_BUCKETING_TAU", "0.6"},
                     {"STARE_UNRELATED_THING", "1"},
                     {"PATH", "/bin"}};
    const auto c = run.config(env);
    CHECK(c.training.epochs == 0);
    CHECK(c.prompt.task_name == "TOP v2");
    CHECK(c.tau == 0.6);
    CHECK(c.effective["training"]["epochs"] == 0);
    CHECK(message_of([&] { run.config({{"STARE_RETRIEVAL_KAY", "3"}}); }).find("retrieval.kay") !=
          std::string::npos);
  }

  TEST_CASE("schema file is read without trailing newlines") {
    SmallRun run;
    json d = run.doc;
    std::ofstream(run.tmp.path() / "schema.sql") << "CREATE TABLE t (a int);\n\n";
    d["prompt"]["schema_file"] = "schema.sql";
    d["prompt"]["template"] = "sql";
    const auto c = parse_config(d, run.tmp.path());
    CHECK(c.prompt.schema_text == "CREATE TABLE t (a int);");
    CHECK(c.prompt.template_kind == PromptTemplate::SqlSchema);
  }

  TEST_CASE("directory lock") {
    stare::testing::TempDir tmp;
    {
      DirectoryLock lock(tmp.path() / "out");
      CHECK(fs::exists(tmp.path() / "out" / DirectoryLock::kFileName));
      CHECK(message_of([&] { DirectoryLock again(tmp.path() / "out"); }).find("locked") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(tmp.path() / "out" / DirectoryLock::kFileName));
    DirectoryLock relock(tmp.path() / "out");
  }

  TEST_CASE("stages need their inputs") {
    SmallRun run;
    const auto c = run.config();
    CHECK(message_of([&] { run_mine(c); }).find("run `bucket` first") != std::string::npos);
    CHECK(message_of([&] { run_train(c); }).find("run `mine` first") != std::string::npos);
    CHECK(message_of([&] { run_eval(c); }).find("run `train` first") != std::string::npos);
    json no_dev = run.doc;
    no_dev["data"].erase("dev");
    CHECK(message_of([&] { run_mli(parse_config(no_dev, run.tmp.path())); }).find("data.dev") !=
          std::string::npos);

    std::ofstream(run.tmp.path() / "empty.jsonl");
    json empty = run.doc;
    empty["data"]["train"] = "empty.jsonl";
    CHECK(message_of([&] { run_bucket(parse_config(empty, run.tmp.path())); }).find("empty corpus") !=
          std::string::npos);
  }

  TEST_CASE("all stages on a small fixture") {
    SmallRun run;
    const auto c = run.config();
    archive_config(c);
    const auto bucket = run_bucket(c);
    CHECK(bucket.report["records"] == 24);
    CHECK(bucket.report["bands"].get<std::size_t>() * bucket.report["rows"].get<std::size_t>() == 128);
    const std::string lsh = stare::testing::read_file(c.out_dir / artifact::kLshIndex);
    CHECK(run_bucket(c).report == bucket.report);
    CHECK(stare::testing::read_file(c.out_dir / artifact::kLshIndex) == lsh);

    const auto mine = run_mine(c);
    CHECK(mine.report["anchors"] == 24);
    const auto train = run_train(c);
    CHECK(train.report["epoch_losses"].size() == 1);
    CHECK(fs::exists(c.out_dir / artifact::kRetrievalIndex));
    CHECK(stare::testing::read_file(c.out_dir / artifact::kLossCsv).rfind("epoch,mean_loss\n1,", 0) == 0);

    const auto mli = run_mli(c);
    // Baseline plus 2 layers x 3 properties x one nonzero lambda.
    CHECK(mli.report["cells"] == 7);
    CHECK(mli.report["best_score"].get<double>() >= mli.report["baseline_score"].get<double>());
    CHECK(fs::exists(c.out_dir / artifact::kMliGrid));
    CHECK(fs::exists(c.out_dir / artifact::kDirection) == !mli.report["best"].is_null());

    const auto eval = run_eval(c);
    CHECK(eval.report["queries"] == 6);
    for (const char* key : {"untrained", "trained", "trained_mli", "bm25"}) {
      const double s = eval.report[key]["mean_sim_struct_at_k"].get<double>();
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
    CHECK(read_json(c.out_dir / artifact::kConfig) == c.effective);
  }

  TEST_CASE("a zero-only lambda grid keeps the baseline") {
    SmallRun run;
    run.doc["mli"]["lambdas"] = {0.0};
    run.doc["mli"]["properties"] = {"POS"};
    run.doc["training"]["epochs"] = 0;
    const auto c = run.config();
    run_bucket(c);
    run_mine(c);
    const auto train = run_train(c);
    CHECK(train.report["steps"] == 0);
    CHECK(train.report["initial_loss"] == train.report["final_loss"]);
    // A stale direction from an earlier run must not survive.
    std::ofstream(c.out_dir / artifact::kDirection) << "{}";
    const auto mli = run_mli(c);
    CHECK(mli.report["cells"] == 1);
    CHECK(mli.report["best"].is_null());
    CHECK_FALSE(fs::exists(c.out_dir / artifact::kDirection));
    const auto eval = run_eval(c);
    CHECK(eval.report["trained_mli"] == eval.report["trained"]);
  }
}
