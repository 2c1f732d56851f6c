// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.
//
//   stare_acceptance            all criteria
//   stare_acceptance 4 9 12     only those

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "stare/bucketing.hpp"
#include "stare/encoder.hpp"
#include "stare/error.hpp"
#include "stare/fixtures.hpp"
#include "stare/hashing.hpp"
#include "stare/log.hpp"
#include "stare/mli.hpp"
#include "stare/pair_mining.hpp"
#include "stare/pipeline.hpp"
#include "stare/retrieval.hpp"
#include "stare/rng.hpp"
#include "stare/training.hpp"
#include "stare/tree_distance.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stare;
using stare::testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> check;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome ted_oracle() {
  const auto trees = stare::testing::all_trees(4, {"a", "b", "c"});
  std::size_t pairs = 0, mismatches = 0;
  for (const auto& a : trees) {
    for (const auto& b : trees) {
      ++pairs;
      if (ted(a, b) != ted_bruteforce(a, b)) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("%zu trees, %zu pairs, %zu mismatches", trees.size(), pairs, mismatches)};
}

Outcome sim_struct_contract() {
  Rng rng(2024);
  const std::vector<std::string> alphabet{"IN:A", "IN:B", "SL:X", "SL:Y", "w1", "w2", "w3"};
  std::vector<ParseTree> trees;
  for (int i = 0; i < 1000; ++i) trees.push_back(stare::testing::random_tree(rng, 1 + rng.below(12), alphabet));
  reset_sim_struct_stats();
  std::size_t self_bad = 0, range_bad = 0;
  for (const auto& t : trees) {
    if (sim_struct(t, t) != 1.0) ++self_bad;
  }
  for (std::size_t i = 0; i < trees.size(); ++i) {
    const double s = sim_struct(trees[i], trees[(i * 7 + 3) % trees.size()]);
    if (!(s >= 0.0 && s <= 1.0)) ++range_bad;
  }
  const auto stats = sim_struct_stats();
  return {self_bad == 0 && range_bad == 0,
          fmt("self-similarity failures %zu, out-of-range %zu, clamp rate %.4f over %llu calls",
              self_bad, range_bad, stats.clamp_rate(), static_cast<unsigned long long>(stats.calls))};
}

Outcome minhash_accuracy() {
  Rng rng(99);
  std::size_t within = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const std::size_t shared = rng.below(120);
    const std::size_t only_a = rng.below(80) + (shared == 0 ? 1 : 0);
    const std::size_t only_b = rng.below(80);
    FeatureSet a, b;
    std::size_t next = 0;
    auto feature = [&] { return "t" + std::to_string(t) + "-f" + std::to_string(next++); };
    for (std::size_t i = 0; i < shared; ++i) {
      const auto f = feature();
      a.insert(f);
      b.insert(f);
    }
    for (std::size_t i = 0; i < only_a; ++i) a.insert(feature());
    for (std::size_t i = 0; i < only_b; ++i) b.insert(feature());
    if (b.empty()) b.insert(feature());
    const double exact = exact_jaccard(a, b);
    const double est = estimate_jaccard(minhash(a, 128, 5), minhash(b, 128, 5));
    if (std::abs(est - exact) <= 0.1) ++within;
  }
  const double rate = static_cast<double>(within) / trials;
  return {rate >= 0.95, fmt("%.1f%% of %d pairs within 0.1 (need >= 95%%)", 100 * rate, trials)};
}

Outcome lsh_recall() {
  const double tau = 0.5;
  const auto small = generate_cluster_corpus(25, 20, 11);
  std::vector<FeatureSet> features;
  LshIndex index(128, tau, 1);
  std::vector<MinHashSignature> sigs;
  for (const auto& r : small) {
    features.push_back(extract_features(r.parse, ParseDialect::Bracketed));
    sigs.push_back(minhash(features.back(), 128, 1));
    index.insert(r.id, sigs.back());
  }
  std::size_t eligible = 0, collided = 0;
  for (std::size_t i = 0; i < small.size(); ++i) {
    const auto hits = index.query_positions(sigs[i], small[i].id);
    const std::set<std::size_t> hit_set(hits.begin(), hits.end());
    for (std::size_t j = i + 1; j < small.size(); ++j) {
      if (exact_jaccard(features[i], features[j]) >= tau + 0.1) {
        ++eligible;
        collided += hit_set.contains(j);
      }
    }
  }
  const double recall = eligible ? static_cast<double>(collided) / eligible : 0.0;

  const auto large = generate_cluster_corpus(500, 20, 11);
  LshIndex big(128, tau, 1);
  std::vector<MinHashSignature> big_sigs;
  for (const auto& r : large) {
    big_sigs.push_back(minhash(extract_features(r.parse, ParseDialect::Bracketed), 128, 1));
    big.insert(r.id, big_sigs.back());
  }
  double pool = 0.0;
  for (std::size_t i = 0; i < large.size(); ++i) {
    pool += static_cast<double>(big.query_positions(big_sigs[i], large[i].id).size());
  }
  const double fraction = pool / static_cast<double>(large.size()) / static_cast<double>(large.size());
  return {eligible > 0 && recall >= 0.9 && fraction < 0.2,
          fmt("recall %.4f over %zu pairs with J >= %.1f (500 records); mean pool %.2f%% of %zu records",
              recall, eligible, tau + 0.1, 100 * fraction, large.size())};
}

Outcome mining_fixture() {
  const fs::path dir = stare::testing::fixture_dir() / "mining6";
  const ParsedCorpus corpus(load_corpus(dir / "corpus.jsonl"), ParseDialect::Bracketed);
  const json expected = json::parse(stare::testing::read_file(dir / "expected.json"));
  const std::size_t n = corpus.size();
  const std::size_t n_hard = expected["n_hard"];

  // Similarities: hand-computed table vs the library.
  std::vector<std::vector<double>> sims(n, std::vector<double>(n));
  std::size_t sim_mismatches = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto& frac = expected["sim_numerator_denominator"][i][j];
      sims[i][j] = frac[0].get<double>() / frac[1].get<double>();
      if (std::abs(sim_struct(corpus.tree(i), corpus.tree(j)) - sims[i][j]) > 1e-12) ++sim_mismatches;
    }
  }

  MiningConfig config;
  config.n_hard = n_hard;
  config.n_rand = 0;
  std::size_t group_mismatches = 0, hand_mismatches = 0;
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != a) pool.push_back(j);
    }
    const auto mined = mine_group(corpus, a, pool, config);
    const auto oracle = stare::testing::brute_force_group(sims[a], pool, n_hard);
    std::vector<std::string> oracle_hard;
    for (auto h : oracle.hard_negatives) oracle_hard.push_back(corpus.record(h).id);
    if (!mined || mined->positive_id != corpus.record(oracle.positive).id ||
        mined->hard_negative_ids != oracle_hard || !mined->random_negative_ids.empty()) {
      ++group_mismatches;
    }
    const auto& hand = expected["groups_full_pool"][corpus.record(a).id];
    if (!mined || mined->positive_id != hand["positive"].get<std::string>() ||
        mined->hard_negative_ids != hand["hard_negatives"].get<std::vector<std::string>>()) {
      ++hand_mismatches;
    }
  }

  // Pools restricted to a subset, with random negatives drawn outside it.
  config.n_hard = 1;
  config.n_rand = 2;
  std::size_t restricted_bad = 0;
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != a && (j + a) % 2 == 0) pool.push_back(j);
    }
    const auto mined = mine_group(corpus, a, pool, config);
    const auto oracle = stare::testing::brute_force_group(sims[a], pool, 1);
    if (!mined || mined->positive_id != corpus.record(oracle.positive).id) {
      ++restricted_bad;
      continue;
    }
    std::vector<std::string> oracle_hard;
    for (auto h : oracle.hard_negatives) oracle_hard.push_back(corpus.record(h).id);
    if (mined->hard_negative_ids != oracle_hard || mined->random_negative_ids.size() != 2) ++restricted_bad;
    for (const auto& id : mined->random_negative_ids) {
      const auto p = corpus.index_of(id);
      if (p == a || std::find(pool.begin(), pool.end(), p) != pool.end()) ++restricted_bad;
    }
  }
  return {sim_mismatches == 0 && group_mismatches == 0 && hand_mismatches == 0 && restricted_bad == 0,
          fmt("similarity mismatches %zu, oracle group mismatches %zu, hand table mismatches %zu, "
              "restricted-pool mismatches %zu",
              sim_mismatches, group_mismatches, hand_mismatches, restricted_bad)};
}

Outcome gradient_checks() {
  // Encoder: InfoNCE of one group through the whole network.
  EncoderConfig ec;
  ec.dim = 8;
  ec.layers = 2;
  ec.heads = 2;
  ec.max_len = 16;
  ec.ffn_dim = 16;
  ec.seed = 3;
  const std::vector<Record> records{{"a", "book a table for two tonight", ""},
                                    {"p", "reserve a table for four tomorrow", ""},
                                    {"h1", "what is the weather tonight", ""},
                                    {"h2", "play some jazz music", ""},
                                    {"r1", "remind me to call mom", ""}};
  std::vector<std::string> texts;
  for (const auto& r : records) texts.push_back(r.utterance);
  Encoder encoder(ec, Vocabulary::build(texts));
  const ContrastiveGroup group{"a", "p", {"h1", "h2"}, {"r1"}, 0.5, false, false};
  const UtteranceTable table(records);
  const double temperature = 0.07;

  std::vector<double> analytic(encoder.params().size(), 0.0);
  group_loss(encoder, group, table, temperature, analytic);
  std::vector<double> numeric(analytic.size());
  auto loss = [&] { return group_loss(encoder, group, table, temperature); };
  auto params = encoder.mutable_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    numeric[i] = stare::testing::central_difference(loss, &params[i], 1e-4);
  }
  const double encoder_err = stare::testing::relative_error(analytic, numeric);

  // Probe: softmax cross-entropy with L2.
  Rng rng(17);
  ProbeData data;
  data.classes = 3;
  data.X = Matrix(24, 8);
  for (auto& x : data.X.data) x = rng.normal();
  for (std::size_t i = 0; i < 24; ++i) data.y.push_back(rng.below(3));
  Matrix W(3, 8);
  for (auto& w : W.data) w = 0.3 * rng.normal();
  std::vector<double> b{0.1, -0.2, 0.05};
  const double l2 = 0.01;
  const auto objective = probe_objective(W, b, data, l2);
  std::vector<double> probe_analytic = objective.dW.data;
  probe_analytic.insert(probe_analytic.end(), objective.db.begin(), objective.db.end());
  std::vector<double> probe_numeric;
  auto probe_loss = [&] { return probe_objective(W, b, data, l2).loss; };
  for (auto& w : W.data) probe_numeric.push_back(stare::testing::central_difference(probe_loss, &w, 1e-5));
  for (auto& x : b) probe_numeric.push_back(stare::testing::central_difference(probe_loss, &x, 1e-5));
  const double probe_err = stare::testing::relative_error(probe_analytic, probe_numeric);

  return {encoder_err <= 1e-3 && probe_err <= 1e-4,
          fmt("encoder rel-err %.3e over %zu params (<= 1e-3); probe rel-err %.3e (<= 1e-4)",
              encoder_err, analytic.size(), probe_err)};
}

Outcome infonce_analytics() {
  const std::vector<double> a{0.3, -1.2, 0.7, 2.0};
  const std::vector<double> p{1.0, 0.5, -0.25, 0.1};
  const double zero = infonce_loss(a, p, {}, 0.07);
  double worst = 0.0;
  for (std::size_t K : {1u, 2u, 5u}) {
    // Every candidate is a positive multiple of the anchor: all cosines are 1.
    std::vector<std::vector<double>> negatives;
    for (std::size_t i = 0; i < K; ++i) {
      std::vector<double> v = a;
      for (double& x : v) x *= static_cast<double>(i + 2);
      negatives.push_back(v);
    }
    const double got = infonce_loss(a, a, negatives, 0.07);
    worst = std::max(worst, std::abs(got - std::log(static_cast<double>(K + 1))));
  }
  return {zero == 0.0 && worst <= 1e-9,
          fmt("zero-negative loss %.17g; max |loss - ln(K+1)| over K in {1,2,5} = %.3e", zero, worst)};
}

PipelineConfig fixture_config(const fs::path& dir) {
  const fs::path config_path = write_fixture_bundle(dir, FixtureConfig{});
  return load_config(config_path);
}

Outcome training_efficacy() {
  TempDir tmp("stare-acc8");
  const auto config = fixture_config(tmp.path());
  run_bucket(config);
  run_mine(config);
  const auto report = run_train(config).report;
  const double initial = report["initial_loss"], final = report["final_loss"];
  const double ratio = final / initial;
  return {config.training.epochs == 3 && ratio <= 0.5,
          fmt("%zu epochs, mean InfoNCE %.4f -> %.4f (ratio %.3f, need <= 0.5)",
              config.training.epochs, initial, final, ratio)};
}

Outcome retrieval_ordering() {
  TempDir tmp("stare-acc9");
  const auto config = fixture_config(tmp.path());
  run_bucket(config);
  run_mine(config);
  run_train(config);
  const auto mli = run_mli(config).report;
  const auto metrics = run_eval(config).report;
  const double untrained = metrics["untrained"]["mean_sim_struct_at_k"];
  const double trained = metrics["trained"]["mean_sim_struct_at_k"];
  const double with_mli = metrics["trained_mli"]["mean_sim_struct_at_k"];
  const double sweep_best = mli["best_score"], sweep_base = mli["baseline_score"];
  return {config.k == 5 && trained > untrained && with_mli >= trained && sweep_best >= sweep_base,
          fmt("mean sim_struct@5: untrained %.4f, trained %.4f, trained+MLI %.4f "
              "(sweep best %.4f vs baseline %.4f)",
              untrained, trained, with_mli, sweep_best, sweep_base)};
}

Outcome svd_direction() {
  Rng rng(31);
  double worst = 1.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t rows = 1 + rng.below(30);
    const std::size_t cols = 2 + rng.below(63);
    Matrix W(rows, cols);
    for (auto& x : W.data) x = rng.normal();
    const auto power = top_right_singular_vector(W).u;
    const auto dense = stare::testing::dense_top_right_singular_vector(W);
    double dot = 0.0;
    for (std::size_t i = 0; i < cols; ++i) dot += power[i] * dense[i];
    worst = std::min(worst, std::abs(dot));
  }

  // Rank one: a single nonzero row v gives v / |v| (first nonzero positive).
  Matrix r1(4, 6);
  const std::vector<double> v{0.0, -3.0, 1.0, 2.0, 0.0, -0.5};
  for (std::size_t j = 0; j < 6; ++j) r1(2, j) = v[j];
  const auto u1 = top_right_singular_vector(r1).u;
  double nv = 0.0;
  for (double x : v) nv += x * x;
  nv = std::sqrt(nv);
  double rank1_err = 0.0;
  for (std::size_t j = 0; j < 6; ++j) rank1_err = std::max(rank1_err, std::abs(u1[j] - (-v[j] / nv)));

  // diag(3, 1) padded with zero columns: the first basis vector.
  Matrix diag(2, 5);
  diag(0, 0) = 3.0;
  diag(1, 1) = 1.0;
  const auto u2 = top_right_singular_vector(diag).u;
  double diag_err = 0.0;
  for (std::size_t j = 0; j < 5; ++j) diag_err = std::max(diag_err, std::abs(u2[j] - (j == 0 ? 1.0 : 0.0)));

  return {worst >= 0.999 && rank1_err <= 1e-9 && diag_err <= 1e-9,
          fmt("min |cos| vs dense oracle %.9f over 50 matrices; rank-1 error %.1e; diagonal error %.1e",
              worst, rank1_err, diag_err)};
}

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

Outcome injection_identity() {
  const auto fixture = generate_fixture(FixtureConfig{});
  std::vector<std::string> texts;
  for (const auto& r : fixture.train) texts.push_back(r.utterance);
  const Encoder encoder(EncoderConfig{}, Vocabulary::build(texts));
  const std::string text = fixture.dev.front().utterance;
  const auto base = encoder.forward(text);

  Rng rng(5);
  std::vector<double> u(encoder.config().dim);
  double norm = 0.0;
  for (double& x : u) {
    x = rng.normal();
    norm += x * x;
  }
  for (double& x : u) x /= std::sqrt(norm);

  bool zero_identical = true;
  bool locality = true;
  std::size_t rows_checked = 0;
  for (std::size_t layer = 1; layer <= encoder.config().layers; ++layer) {
    InjectionDirection zero{u, Property::POS, layer, 0.0};
    const auto z = encoder.forward(text, &zero);
    for (std::size_t l = 0; l < base.layers.size(); ++l) zero_identical &= same_bits(z.layers[l], base.layers[l]);
    zero_identical &= same_bits(z.output, base.output);

    const double lambda = 2.5;
    InjectionDirection inj{u, Property::DEPS, layer, lambda};
    const auto h = encoder.forward(text, &inj);
    for (std::size_t l = 0; l < layer; ++l) locality &= same_bits(h.layers[l], base.layers[l]);
    const Matrix& before = base.layers[layer];
    const Matrix& after = h.layers[layer];
    for (std::size_t r = 0; r < before.rows; ++r, ++rows_checked) {
      for (std::size_t c = 0; c < before.cols; ++c) {
        if (after(r, c) != before(r, c) + lambda * u[c]) locality = false;
      }
    }
  }
  return {zero_identical && locality,
          fmt("lambda=0 bit-identical: %s; post-hook rows equal baseline + lambda*u exactly: %s "
              "(%zu rows over %zu layers)",
              zero_identical ? "yes" : "no", locality ? "yes" : "no", rows_checked,
              encoder.config().layers)};
}

std::string strip_trailing_newlines(std::string s) {
  while (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

Outcome prompt_bytes() {
  const fs::path dir = stare::testing::fixture_dir() / "prompts";
  PromptSpec mtop{"MTop", 1, PromptTemplate::Conversational, std::nullopt};
  const std::vector<Exemplar> weather{
      {"Whats weather forecast for tomorrow?", "[IN:GET_WEATHER [SL:DATE_TIME for tomorrow]]", std::nullopt}};
  const std::string mtop_prompt =
      build_prompt(mtop, weather, "Remind me to make bars for the picnic on Sunday.");
  const bool mtop_ok = mtop_prompt == stare::testing::read_file(dir / "mtop_one_shot.txt");

  PromptSpec spider{"Spider", 1, PromptTemplate::SqlSchema,
                    strip_trailing_newlines(stare::testing::read_file(dir / "spider_query_schema.sql"))};
  const std::vector<Exemplar> employees{
      {"How many employees do we have?", "SELECT count(*) FROM employee;",
       strip_trailing_newlines(stare::testing::read_file(dir / "spider_exemplar_schema.sql"))}};
  const std::string spider_prompt = build_prompt(spider, employees, "How many singers do we have?");
  const bool spider_ok = spider_prompt == stare::testing::read_file(dir / "spider_one_shot.txt");
  return {mtop_ok && spider_ok, fmt("conversational %s (%zu bytes), sql-schema %s (%zu bytes)",
                                    mtop_ok ? "match" : "DIFFER", mtop_prompt.size(),
                                    spider_ok ? "match" : "DIFFER", spider_prompt.size())};
}

std::map<std::string, std::uint64_t> hash_outputs(const fs::path& out_dir) {
  std::map<std::string, std::uint64_t> hashes;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    if (!entry.is_regular_file()) continue;
    hashes[entry.path().filename().string()] = hash_bytes(stare::testing::read_file(entry.path()));
  }
  return hashes;
}

Outcome determinism() {
  TempDir a("stare-acc13a"), b("stare-acc13b");
  std::vector<std::string> stage_names{"bucket", "mine", "train", "mli", "eval"};
  std::vector<StageResult (*)(const PipelineConfig&)> stages{run_bucket, run_mine, run_train, run_mli,
                                                              run_eval};
  const auto ca = fixture_config(a.path());
  const auto cb = fixture_config(b.path());
  archive_config(ca);
  archive_config(cb);
  std::size_t compared = 0;
  std::string differing;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto ra = stages[s](ca);
    stages[s](cb);
    for (const auto& path : ra.artifacts) {
      const auto name = path.filename();
      ++compared;
      if (hash_bytes(stare::testing::read_file(path)) !=
              hash_bytes(stare::testing::read_file(cb.out_dir / name)) ||
          stare::testing::read_file(path) != stare::testing::read_file(cb.out_dir / name)) {
        differing += " " + stage_names[s] + ":" + name.string();
      }
    }
  }
  const bool whole_dir = hash_outputs(ca.out_dir) == hash_outputs(cb.out_dir);
  return {differing.empty() && whole_dir && compared > 0,
          fmt("%zu stage artifacts compared across two runs, differing:%s; output directories %s",
              compared, differing.empty() ? " none" : differing.c_str(),
              whole_dir ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  logger()->set_level(spdlog::level::err);
  const std::vector<Criterion> criteria{
      {1, "TED oracle equivalence", 60, ted_oracle},
      {2, "sim_struct contract", 5, sim_struct_contract},
      {3, "MinHash accuracy", 10, minhash_accuracy},
      {4, "LSH recall and pool size", 60, lsh_recall},
      {5, "mining correctness", 1, mining_fixture},
      {6, "gradient checks", 120, gradient_checks},
      {7, "InfoNCE analytics", 1, infonce_analytics},
      {8, "training efficacy", 300, training_efficacy},
      {9, "retrieval proxy ordering", 600, retrieval_ordering},
      {10, "SVD direction", 10, svd_direction},
      {11, "injection identity and locality", 5, injection_identity},
      {12, "prompt byte-exactness", 1, prompt_bytes},
      {13, "determinism", 600, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds < c.budget_seconds;
    const bool pass = outcome.pass && in_time;
    failures += !pass;
    std::printf("[%s] %2d %s: %s (%.2f s, budget %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                outcome.detail.c_str(), seconds, c.budget_seconds, in_time ? "" : ", OVER BUDGET");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
