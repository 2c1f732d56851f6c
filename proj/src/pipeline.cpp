#include "stare/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "stare/error.hpp"
#include "stare/fixtures.hpp"
#include "stare/log.hpp"
#include "stare/parallel.hpp"

extern char** environ;

namespace stare {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string, std::less<>> kSections = {
    "data", "bucketing", "mining", "encoder", "training", "mli", "retrieval", "prompt", "output"};

[[noreturn]] void bad_config(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::InvalidConfig, field + " " + why);
}

// Typed, key-tracking view of one config section.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (doc.contains(name_)) {
      node_ = &doc.at(name_);
      if (!node_->is_object()) bad_config(name_, "must be an object");
    }
  }

  bool has(const std::string& key) const { return node_ && node_->contains(key) && !node_->at(key).is_null(); }

  void touch(const std::string& key) { used_.insert(key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return node_->at(key);
  }

  std::size_t size(const std::string& key, std::size_t fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    const json& v = node_->at(key);
    if (v.is_number_integer()) {
      if (v.get<std::int64_t>() < 0) bad_config(field(key), "must be >= 0");
      return v.get<std::size_t>();
    }
    bad_config(field(key), "must be a non-negative integer");
  }

  double number(const std::string& key, double fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    const json& v = node_->at(key);
    if (!v.is_number()) bad_config(field(key), "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) bad_config(field(key), "must be finite");
    return x;
  }

  bool boolean(const std::string& key, bool fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    const json& v = node_->at(key);
    if (!v.is_boolean()) bad_config(field(key), "must be true or false");
    return v.get<bool>();
  }

  std::optional<std::string> text(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    const json& v = node_->at(key);
    if (!v.is_string()) bad_config(field(key), "must be a string");
    return v.get<std::string>();
  }

  std::string field(const std::string& key) const { return name_ + "." + key; }

  // Rejects keys nobody asked for (typos).
  void finish() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items()) {
      if (!used_.contains(key)) bad_config(field(key), "is not a known setting");
    }
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string, std::less<>> used_;
};

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

json apply_env(json doc, const EnvMap& env) {
  for (const auto& [name, value] : env) {
    constexpr std::string_view prefix = "STARE_";
    if (!name.starts_with(prefix)) continue;
    const std::string rest = name.substr(prefix.size());
    const auto cut = rest.find('_');
    if (cut == std::string::npos) continue;
    const std::string section = lower(rest.substr(0, cut));
    const std::string key = lower(rest.substr(cut + 1));
    if (!kSections.contains(section) || key.empty()) {
      logger()->debug("ignoring environment variable {}", name);
      continue;
    }
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;
    if (!doc.contains(section)) doc[section] = json::object();
    if (!doc[section].is_object()) bad_config(section, "must be an object");
    doc[section][key] = std::move(parsed);
    logger()->info("override {}.{} from {}", section, key, name);
  }
  return doc;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

fs::path existing_file(const fs::path& base, const std::string& p, const std::string& field) {
  fs::path path = resolve(base, p);
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) bad_config(field, "refers to a missing file: " + path.string());
  return path;
}

// Writes through a temporary file and renames, so an interrupted run never
// leaves a truncated artifact behind.
void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body,
                bool binary = false) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    body(out);
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

void write_json(const fs::path& path, const json& value) {
  write_file(path, [&](std::ostream& out) { out << value.dump(2) << '\n'; });
}

fs::path require_artifact(const PipelineConfig& config, const char* name, const char* stage) {
  fs::path path = config.out_dir / name;
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) {
    throw Error(ErrorCode::Io, "missing " + path.string() + " (run `" + stage + "` first)");
  }
  return path;
}

void ensure_out_dir(const PipelineConfig& config) {
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + config.out_dir.string() + ": " + ec.message());
}

std::vector<Record> load_train(const PipelineConfig& config) {
  auto records = load_corpus(config.train);
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "empty corpus: " + config.train.string());
  return records;
}

const fs::path& require_dev(const PipelineConfig& config, const char* stage) {
  if (!config.dev) bad_config("data.dev", std::string("is required by ") + stage);
  return *config.dev;
}

// Power-of-two bins: [0,0], [1,1], [2,3], [4,7], ...
json pool_histogram(const std::vector<std::size_t>& sizes) {
  std::map<std::size_t, std::size_t> bins;
  for (std::size_t s : sizes) {
    std::size_t lo = 0;
    if (s > 0) {
      lo = 1;
      while (lo * 2 <= s) lo *= 2;
    }
    ++bins[lo];
  }
  json out = json::array();
  for (const auto& [lo, count] : bins) {
    const std::size_t hi = lo == 0 ? 0 : 2 * lo - 1;
    out.push_back({{"min", lo}, {"max", hi}, {"count", count}});
  }
  return out;
}

json metrics_json(const RetrievalMetrics& m) {
  return {{"mean_sim_struct_at_k", m.mean_sim_struct_at_k},
          {"mrr_structural_nn", m.mrr_structural_nn},
          {"mean_top1_sim", m.mean_top1_sim},
          {"queries", m.queries}};
}

json injection_json(const std::optional<InjectionDirection>& inj) {
  if (!inj) return nullptr;
  return {{"property", std::string(to_string(inj->property))},
          {"layer", inj->layer},
          {"lambda", inj->lambda}};
}

}  // namespace

EnvMap stare_environment() {
  EnvMap env;
  for (char** e = environ; e && *e; ++e) {
    std::string_view entry(*e);
    if (!entry.starts_with("STARE_")) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    env.emplace(std::string(entry.substr(0, eq)), std::string(entry.substr(eq + 1)));
  }
  return env;
}

PipelineConfig parse_config(const json& input, const fs::path& base_dir, const EnvMap& env) {
  if (!input.is_object()) bad_config("config", "must be a JSON object");
  for (const auto& [key, value] : input.items()) {
    if (!kSections.contains(key)) bad_config(key, "is not a known section");
  }
  const json doc = apply_env(input, env);

  PipelineConfig c;
  c.effective = doc;

  Section data(doc, "data");
  const auto train = data.text("train");
  if (!train) bad_config("data.train", "is required");
  c.train = existing_file(base_dir, *train, "data.train");
  if (auto dev = data.text("dev")) c.dev = existing_file(base_dir, *dev, "data.dev");
  if (auto dialect = data.text("dialect")) {
    try {
      c.dialect = parse_dialect_name(*dialect);
    } catch (const Error&) {
      bad_config("data.dialect", "must be one of bracketed, sexpr, sql (got '" + *dialect + "')");
    }
  }
  c.anonymize_leaves = data.boolean("anonymize_leaves", false);
  data.finish();

  Section bucketing(doc, "bucketing");
  c.permutations = bucketing.size("permutations", 128);
  c.tau = bucketing.number("tau", 0.5);
  c.lsh_seed = bucketing.size("seed", 1);
  if (c.permutations == 0) bad_config("bucketing.permutations", "must be positive");
  if (!(c.tau > 0.0 && c.tau < 1.0)) bad_config("bucketing.tau", "must lie in (0, 1)");
  bucketing.finish();

  Section output(doc, "output");
  c.out_dir = resolve(base_dir, output.text("dir").value_or("out"));
  c.workers = output.size("workers", 0);
  output.finish();

  Section mining(doc, "mining");
  c.mining.n_hard = mining.size("n_hard", 3);
  c.mining.n_rand = mining.size("n_rand", 2);
  c.mining.rng_seed = mining.size("seed", 0);
  c.mining.workers = c.workers;
  mining.finish();

  Section encoder(doc, "encoder");
  c.encoder.dim = encoder.size("dim", c.encoder.dim);
  c.encoder.layers = encoder.size("layers", c.encoder.layers);
  c.encoder.heads = encoder.size("heads", c.encoder.heads);
  c.encoder.max_len = encoder.size("max_len", c.encoder.max_len);
  c.encoder.ffn_dim = encoder.size("ffn_dim", c.encoder.ffn_dim);
  c.encoder.seed = encoder.size("seed", c.encoder.seed);
  encoder.finish();
  c.encoder.validate();

  Section training(doc, "training");
  c.training.epochs = training.size("epochs", c.training.epochs);
  c.training.lr = training.number("lr", c.training.lr);
  c.training.weight_decay = training.number("weight_decay", c.training.weight_decay);
  c.training.beta1 = training.number("beta1", c.training.beta1);
  c.training.beta2 = training.number("beta2", c.training.beta2);
  c.training.eps = training.number("eps", c.training.eps);
  c.training.batch = training.size("batch", c.training.batch);
  c.training.temperature = training.number("temperature", c.training.temperature);
  c.training.seed = training.size("seed", c.training.seed);
  training.finish();
  c.training.validate();

  Section mli(doc, "mli");
  const SweepGrid defaults = SweepGrid::defaults(c.encoder.layers);
  c.grid = defaults;
  if (mli.has("layers")) {
    const json& v = mli.raw("layers");
    if (!v.is_array()) bad_config("mli.layers", "must be an array of layer numbers");
    c.grid.layers.clear();
    for (const auto& x : v) {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 1) {
        bad_config("mli.layers", "must contain positive integers");
      }
      const auto layer = x.get<std::size_t>();
      if (layer < 1 || layer > c.encoder.layers) {
        bad_config("mli.layers", "entry " + std::to_string(layer) + " is outside [1, " +
                                     std::to_string(c.encoder.layers) + "]");
      }
      c.grid.layers.push_back(layer);
    }
    if (c.grid.layers.empty()) c.grid.layers = defaults.layers;
  }
  if (mli.has("properties")) {
    const json& v = mli.raw("properties");
    if (!v.is_array() || v.empty()) bad_config("mli.properties", "must be a non-empty array");
    c.grid.properties.clear();
    for (const auto& x : v) {
      if (!x.is_string()) bad_config("mli.properties", "must contain property names");
      try {
        c.grid.properties.push_back(parse_property(x.get<std::string>()));
      } catch (const Error&) {
        bad_config("mli.properties", "has unknown property '" + x.get<std::string>() + "'");
      }
    }
  }
  if (mli.has("lambdas")) {
    const json& v = mli.raw("lambdas");
    if (!v.is_array() || v.empty()) bad_config("mli.lambdas", "must be a non-empty array");
    c.grid.lambdas.clear();
    for (const auto& x : v) {
      if (!x.is_number() || !std::isfinite(x.get<double>())) {
        bad_config("mli.lambdas", "must contain finite numbers");
      }
      c.grid.lambdas.push_back(x.get<double>());
    }
  }
  c.probe.epochs = mli.size("probe_epochs", c.probe.epochs);
  c.probe.lr = mli.number("probe_lr", c.probe.lr);
  c.probe.l2 = mli.number("probe_l2", c.probe.l2);
  c.probe.validate();
  auto path_map = [&](const char* key, std::map<Property, fs::path>& out) {
    mli.touch(key);
    if (!mli.has(key)) return;
    const std::string field = mli.field(key);
    const json& v = mli.raw(key);
    if (!v.is_object()) bad_config(field, "must map property names to files");
    for (const auto& [name, p] : v.items()) {
      Property property;
      try {
        property = parse_property(name);
      } catch (const Error&) {
        bad_config(field, "has unknown property '" + name + "'");
      }
      if (!p.is_string()) bad_config(field + "." + name, "must be a path");
      out[property] = existing_file(base_dir, p.get<std::string>(), field + "." + name);
    }
  };
  path_map("corpora", c.probe_corpora);
  path_map("label_sets", c.label_sets);
  mli.finish();

  Section retrieval(doc, "retrieval");
  c.k = retrieval.size("k", 5);
  if (c.k == 0) bad_config("retrieval.k", "must be positive");
  retrieval.finish();

  Section prompt(doc, "prompt");
  c.prompt.task_name = prompt.text("task").value_or("semantic parsing");
  if (auto t = prompt.text("template")) {
    try {
      c.prompt.template_kind = parse_prompt_template(*t);
    } catch (const Error&) {
      bad_config("prompt.template", "must be conversational or sql (got '" + *t + "')");
    }
  }
  c.prompt.k = c.k;
  const auto schema = prompt.text("schema");
  const auto schema_file = prompt.text("schema_file");
  if (schema && schema_file) bad_config("prompt.schema", "and prompt.schema_file are exclusive");
  if (schema) c.prompt.schema_text = *schema;
  if (schema_file) {
    const fs::path path = existing_file(base_dir, *schema_file, "prompt.schema_file");
    std::ifstream in(path);
    std::ostringstream text;
    text << in.rdbuf();
    std::string s = text.str();
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    c.prompt.schema_text = s;
  }
  prompt.finish();

  return c;
}

PipelineConfig load_config(const fs::path& path, const EnvMap& env) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, path.string() + ": " + e.what());
  }
  return parse_config(doc, fs::absolute(path).parent_path(), env);
}

fs::path archive_config(const PipelineConfig& config) {
  ensure_out_dir(config);
  const fs::path path = config.out_dir / artifact::kConfig;
  write_json(path, config.effective);
  return path;
}

std::map<Property, TokenLabelCorpus> load_probe_corpora(const PipelineConfig& config) {
  std::map<Property, TokenLabelCorpus> out;
  for (const auto& [property, path] : config.probe_corpora) {
    TokenLabelCorpus corpus;
    corpus.property = property;
    const auto set = config.label_sets.find(property);
    corpus.label_set =
        set != config.label_sets.end() ? load_label_set(set->second) : default_label_set(property);
    corpus.sentences = load_token_labels(path);
    try {
      corpus.validate();
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ": " + e.detail());
    }
    out.emplace(property, std::move(corpus));
  }
  return out;
}

Vocabulary build_vocabulary(const PipelineConfig& config) {
  std::vector<std::string> texts;
  for (const auto& r : load_corpus(config.train)) texts.push_back(r.utterance);
  for (const auto& [property, corpus] : load_probe_corpora(config)) {
    for (const auto& s : corpus.sentences) {
      for (const auto& t : s.tokens) texts.push_back(t);
    }
  }
  return Vocabulary::build(texts);
}

std::vector<DevQuery> load_dev_queries(const fs::path& path) {
  std::vector<DevQuery> dev;
  for (auto& r : load_corpus(path)) dev.push_back({std::move(r.id), std::move(r.utterance), std::move(r.parse)});
  if (dev.empty()) throw Error(ErrorCode::EmptyInput, "empty dev set: " + path.string());
  return dev;
}

StageResult run_bucket(const PipelineConfig& config) {
  const auto records = load_train(config);
  const ParsedCorpus corpus(records, config.dialect, config.anonymize_leaves);
  ensure_out_dir(config);

  std::vector<MinHashSignature> signatures(records.size());
  parallel_for(records.size(), config.workers, [&](std::size_t i) {
    try {
      signatures[i] = minhash(extract_features(records[i].parse, config.dialect),
                              config.permutations, config.lsh_seed);
    } catch (const Error& e) {
      throw Error(e.code(), "record '" + records[i].id + "': " + e.detail());
    }
  });
  LshIndex index(config.permutations, config.tau, config.lsh_seed);
  for (std::size_t i = 0; i < records.size(); ++i) index.insert(records[i].id, signatures[i]);

  std::vector<std::size_t> pools(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    pools[i] = index.query_positions(signatures[i], records[i].id).size();
  }
  double mean = 0.0;
  for (std::size_t s : pools) mean += static_cast<double>(s);
  mean /= static_cast<double>(pools.size());

  const fs::path index_path = config.out_dir / artifact::kLshIndex;
  write_file(index_path, [&](std::ostream& out) { index.save(out); });

  StageResult result;
  result.report = {{"records", records.size()},
                   {"permutations", config.permutations},
                   {"bands", index.params().bands},
                   {"rows", index.params().rows},
                   {"tau", config.tau},
                   {"threshold", index.params().threshold()},
                   {"seed", config.lsh_seed},
                   {"mean_pool_size", mean},
                   {"mean_pool_fraction", mean / static_cast<double>(records.size())},
                   {"max_pool_size", *std::max_element(pools.begin(), pools.end())},
                   {"empty_pools", std::count(pools.begin(), pools.end(), std::size_t{0})},
                   {"pool_size_histogram", pool_histogram(pools)}};
  const fs::path report_path = config.out_dir / artifact::kBucketReport;
  write_json(report_path, result.report);
  result.artifacts = {index_path, report_path};
  logger()->info("bucketed {} records (b={}, r={}), mean pool {:.2f}", records.size(),
                 index.params().bands, index.params().rows, mean);
  return result;
}

StageResult run_mine(const PipelineConfig& config) {
  const auto records = load_train(config);
  const ParsedCorpus corpus(records, config.dialect, config.anonymize_leaves);
  const fs::path index_path = require_artifact(config, artifact::kLshIndex, "bucket");
  std::ifstream in(index_path);
  const LshIndex index = LshIndex::load(in);

  const MiningResult mined = mine_all(corpus, index, config.mining);
  const fs::path pairs_path = config.out_dir / artifact::kPairs;
  write_file(pairs_path, [&](std::ostream& out) { write_groups(out, mined.groups); });

  const auto& r = mined.report;
  StageResult result;
  result.report = {{"anchors", r.anchors},
                   {"groups", r.groups},
                   {"skipped_empty_pool", r.skipped_empty_pool},
                   {"flagged_short", r.flagged_short},
                   {"mean_pool_size", r.mean_pool_size},
                   {"mean_positive_sim", r.mean_positive_sim},
                   {"n_hard", config.mining.n_hard},
                   {"n_rand", config.mining.n_rand},
                   {"seed", config.mining.rng_seed},
                   {"pool_size_histogram", pool_histogram(r.pool_sizes)}};
  const fs::path report_path = config.out_dir / artifact::kMiningReport;
  write_json(report_path, result.report);
  result.artifacts = {pairs_path, report_path};
  logger()->info("mined {} groups from {} anchors ({} without pool, {} short)", r.groups,
                 r.anchors, r.skipped_empty_pool, r.flagged_short);
  return result;
}

StageResult run_train(const PipelineConfig& config) {
  const auto records = load_train(config);
  const fs::path pairs_path = require_artifact(config, artifact::kPairs, "mine");
  std::ifstream in(pairs_path);
  const auto groups = read_groups(in, pairs_path.string());

  Encoder encoder(config.encoder, build_vocabulary(config));
  TrainResult trained;
  if (config.training.epochs > 0) {
    trained = train(encoder, groups, records, config.training);
  } else if (!groups.empty()) {
    trained.initial_loss = trained.final_loss =
        mean_group_loss(encoder, groups, UtteranceTable(records), config.training.temperature);
  }

  const fs::path params_path = config.out_dir / artifact::kParams;
  write_file(params_path, [&](std::ostream& out) { encoder.save(out); }, true);
  const fs::path loss_path = config.out_dir / artifact::kLossCsv;
  write_file(loss_path, [&](std::ostream& out) { write_loss_csv(out, trained.epoch_losses); });

  const auto index = RetrievalIndex::build(encoder, records, nullptr, config.workers);
  const fs::path index_path = config.out_dir / artifact::kRetrievalIndex;
  write_file(index_path, [&](std::ostream& out) { index.save(out); });

  StageResult result;
  result.report = {{"groups", groups.size()},
                   {"epochs", config.training.epochs},
                   {"steps", trained.steps},
                   {"vocabulary", encoder.vocab().size()},
                   {"parameters", encoder.params().size()},
                   {"fingerprint", encoder.fingerprint()},
                   {"epoch_losses", trained.epoch_losses}};
  if (groups.empty()) {
    result.report["initial_loss"] = nullptr;
    result.report["final_loss"] = nullptr;
    result.report["loss_ratio"] = nullptr;
  } else {
    result.report["initial_loss"] = trained.initial_loss;
    result.report["final_loss"] = trained.final_loss;
    result.report["loss_ratio"] = trained.final_loss / trained.initial_loss;
  }
  const fs::path report_path = config.out_dir / artifact::kTrainReport;
  write_json(report_path, result.report);
  result.artifacts = {params_path, loss_path, index_path, report_path};
  return result;
}

StageResult run_mli(const PipelineConfig& config) {
  const auto dev = load_dev_queries(require_dev(config, "mli"));
  if (config.probe_corpora.empty()) bad_config("mli.corpora", "must name at least one label corpus");
  const auto corpora = load_probe_corpora(config);
  for (Property p : config.grid.properties) {
    if (!corpora.contains(p)) {
      bad_config("mli.corpora", "has no corpus for property " + std::string(to_string(p)));
    }
  }
  const auto records = load_train(config);
  const ParsedCorpus bank(records, config.dialect, config.anonymize_leaves);
  const Encoder encoder = Encoder::load(require_artifact(config, artifact::kParams, "train"));

  SweepConfig sc;
  sc.k = config.k;
  sc.probe = config.probe;
  sc.workers = config.workers;
  const SweepReport report = sweep(encoder, corpora, dev, bank, config.grid, sc);

  StageResult result;
  json probes = json::array();
  for (const auto& p : report.probes) {
    probes.push_back({{"property", std::string(to_string(p.property))},
                      {"layer", p.layer},
                      {"training_accuracy", p.training_accuracy},
                      {"direction_converged", p.direction_converged}});
  }
  const fs::path probes_path = config.out_dir / artifact::kProbes;
  write_json(probes_path, probes);

  const fs::path grid_path = config.out_dir / artifact::kMliGrid;
  write_file(grid_path, [&](std::ostream& out) { write_sweep_csv(out, report); });

  const fs::path direction_path = config.out_dir / artifact::kDirection;
  std::error_code ec;
  fs::remove(direction_path, ec);
  if (report.best) save_direction(direction_path, *report.best);

  const auto index = RetrievalIndex::build(encoder, records,
                                           report.best ? &*report.best : nullptr, config.workers);
  const fs::path index_path = config.out_dir / artifact::kMliIndex;
  write_file(index_path, [&](std::ostream& out) { index.save(out); });

  std::size_t failed = 0;
  for (const auto& row : report.rows) failed += !row.error.empty();
  result.report = {{"k", config.k},
                   {"cells", report.rows.size()},
                   {"failed_cells", failed},
                   {"baseline_score", report.baseline_score()},
                   {"best_score", report.best_score()},
                   {"best", injection_json(report.best)}};
  const fs::path report_path = config.out_dir / artifact::kMliReport;
  write_json(report_path, result.report);
  result.artifacts = {probes_path, grid_path, index_path, report_path};
  if (report.best) result.artifacts.push_back(direction_path);
  logger()->info("mli sweep: baseline {:.4f}, best {:.4f}", report.baseline_score(),
                 report.best_score());
  return result;
}

StageResult run_eval(const PipelineConfig& config) {
  const auto dev = load_dev_queries(require_dev(config, "eval"));
  const auto records = load_train(config);
  const ParsedCorpus bank(records, config.dialect, config.anonymize_leaves);
  const Encoder trained = Encoder::load(require_artifact(config, artifact::kParams, "train"));
  const Encoder untrained(trained.config(), trained.vocab());

  std::optional<InjectionDirection> injection;
  const fs::path direction_path = config.out_dir / artifact::kDirection;
  if (fs::is_regular_file(direction_path)) injection = load_direction(direction_path);

  const StructuralJudge judge(dev, bank);
  auto dense = [&](const Encoder& encoder, const InjectionDirection* inj) {
    const auto index = RetrievalIndex::build(encoder, records, inj, config.workers);
    return judge.score(
        [&](const DevQuery& q, std::size_t k) { return index.topk(encoder, q.utterance, k, inj); },
        dev, config.k);
  };
  const Bm25Index bm25(records);

  StageResult result;
  result.report = {
      {"k", config.k},
      {"queries", dev.size()},
      {"untrained", metrics_json(dense(untrained, nullptr))},
      {"trained", metrics_json(dense(trained, nullptr))},
      {"trained_mli", metrics_json(dense(trained, injection ? &*injection : nullptr))},
      {"bm25", metrics_json(judge.score(
                   [&](const DevQuery& q, std::size_t k) { return bm25.topk(q.utterance, k); }, dev,
                   config.k))},
      {"injection", injection_json(injection)}};
  ensure_out_dir(config);
  const fs::path path = config.out_dir / artifact::kMetrics;
  write_json(path, result.report);
  result.artifacts = {path};
  return result;
}

fs::path write_fixture_bundle(const fs::path& dir, const FixtureConfig& fixture_config) {
  const Fixture fixture = generate_fixture(fixture_config);
  std::error_code ec;
  fs::create_directories(dir / "probes", ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());

  write_file(dir / "train.jsonl", [&](std::ostream& out) { write_corpus(out, fixture.train); });
  write_file(dir / "dev.jsonl", [&](std::ostream& out) { write_corpus(out, fixture.dev); });
  json corpora = json::object();
  for (const auto& [property, corpus] : fixture.probes) {
    const std::string name = lower(std::string(to_string(property)));
    const std::string rel = "probes/" + name + ".tsv";
    write_file(dir / rel, [&](std::ostream& out) { write_token_labels(out, corpus); });
    corpora[std::string(to_string(property))] = rel;
  }

  const json config = {
      {"data", {{"train", "train.jsonl"}, {"dev", "dev.jsonl"}, {"dialect", "bracketed"}}},
      {"bucketing", {{"permutations", 128}, {"tau", 0.5}, {"seed", 1}}},
      {"mining", {{"n_hard", 3}, {"n_rand", 2}, {"seed", 3}}},
      {"encoder",
       {{"dim", 64}, {"layers", 4}, {"heads", 4}, {"max_len", 64}, {"ffn_dim", 128}, {"seed", 1}}},
      {"training",
       {{"epochs", 3}, {"lr", 3e-4}, {"weight_decay", 0.01}, {"batch", 1}, {"temperature", 0.07},
        {"seed", 5}}},
      {"mli", {{"corpora", corpora}}},
      {"retrieval", {{"k", 5}}},
      {"prompt", {{"task", "MTop"}, {"template", "conversational"}}},
      {"output", {{"dir", "out"}}}};
  const fs::path path = dir / "config.json";
  write_json(path, config);
  return path;
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / kFileName) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd_ < 0) {
    throw Error(ErrorCode::Io, dir.string() + " is locked by another run (remove " +
                                   path_.string() + " if that run is gone)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
}

DirectoryLock::~DirectoryLock() {
  if (fd_ >= 0) {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
}

}  // namespace stare
