#include "stare/mli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "stare/error.hpp"
#include "stare/log.hpp"
#include "stare/parallel.hpp"

namespace stare {

// ---------------------------------------------------------------------------
// Corpora

void TokenLabelCorpus::validate() const {
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const auto& sentence = sentences[s];
    if (sentence.tokens.empty()) {
      throw Error(ErrorCode::EmptySentence, "sentence " + std::to_string(s + 1) + " is empty");
    }
    if (sentence.tokens.size() != sentence.labels.size()) {
      throw Error(ErrorCode::Format, "sentence " + std::to_string(s + 1) + " has " +
                                         std::to_string(sentence.tokens.size()) + " tokens but " +
                                         std::to_string(sentence.labels.size()) + " labels");
    }
    for (const auto& label : sentence.labels) label_index(label);
  }
}

std::size_t TokenLabelCorpus::label_index(std::string_view label) const {
  const auto it = std::find(label_set.begin(), label_set.end(), label);
  if (it == label_set.end()) {
    throw Error(ErrorCode::LabelSetMismatch, "label '" + std::string(label) + "' is not in the " +
                                                 std::string(to_string(property)) +
                                                 " label set");
  }
  return static_cast<std::size_t>(it - label_set.begin());
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::vector<TokenLabelSentence> read_token_labels(std::istream& in, std::string_view source) {
  std::vector<TokenLabelSentence> out;
  TokenLabelSentence current;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) {
      if (!current.tokens.empty()) out.push_back(std::move(current));
      current = {};
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(ErrorCode::Format, std::string(source) + ":" + std::to_string(line_no) +
                                         ": expected token<TAB>label");
    }
    std::string token = trim(std::string_view(line).substr(0, tab));
    std::string label = trim(std::string_view(line).substr(tab + 1));
    if (token.empty() || label.empty()) {
      throw Error(ErrorCode::Format,
                  std::string(source) + ":" + std::to_string(line_no) + ": empty token or label");
    }
    current.tokens.push_back(std::move(token));
    current.labels.push_back(std::move(label));
  }
  if (!current.tokens.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<TokenLabelSentence> load_token_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return read_token_labels(in, path.string());
}

std::vector<std::string> read_label_set(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto label = trim(line);
    if (label.empty()) continue;
    if (std::find(out.begin(), out.end(), label) != out.end()) {
      throw Error(ErrorCode::Format, "label '" + label + "' listed twice");
    }
    out.push_back(std::move(label));
  }
  return out;
}

std::vector<std::string> load_label_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return read_label_set(in);
}

const std::vector<std::string>& default_label_set(Property property) {
  static const std::vector<std::string> pos = {
      "ADJ",  "ADP",  "ADV",   "AUX",   "CCONJ", "DET",  "INTJ", "NOUN", "NUM",
      "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM",  "VERB", "X"};
  static const std::vector<std::string> deps = {
      "ACL",   "ACL:RELCL", "ADVMOD", "AUX",        "CASE", "COMP",     "COMPOUND",
      "CONJ",  "CSUBJ",     "DEP",    "DET",        "EXPL", "GOESWITH", "LIST",
      "MARK",  "MOD",       "NMOD",   "NSUBJ",      "OBJ",  "OBL",      "ORPHAN",
      "PUNCT", "REPARANDUM", "ROOT",  "VOCATIVE"};
  static const std::vector<std::string> pt = {
      "SBAR", "UCP", "ADVP", "O",  "WHADVP", "NAC",    "INTJ", "NX",   "CONJP",
      "QP",   "SBARQ", "S",  "ADJP", "FRAG", "SQ",     "LST",  "PRT",  "PP",
      "X-HLN", "VP", "X",    "WHADJP", "WHPP", "NP",   "WHNP", "SINV", "PRN"};
  switch (property) {
    case Property::POS: return pos;
    case Property::DEPS: return deps;
    case Property::PT: return pt;
  }
  return pos;
}

// ---------------------------------------------------------------------------
// Probes

ProbeData collect_states(const Encoder& encoder, const TokenLabelCorpus& corpus,
                         std::size_t layer) {
  const auto& cfg = encoder.config();
  if (layer < 1 || layer > cfg.layers) {
    throw Error(ErrorCode::LayerOutOfRange, "probe layer " + std::to_string(layer) +
                                                " outside [1, " + std::to_string(cfg.layers) +
                                                "]");
  }
  corpus.validate();
  ProbeData data;
  data.classes = corpus.label_set.size();
  std::size_t rows = 0;
  for (const auto& s : corpus.sentences) rows += std::min(s.tokens.size(), cfg.max_len);
  data.X = Matrix(rows, cfg.dim);
  data.y.reserve(rows);

  std::size_t at = 0;
  for (const auto& sentence : corpus.sentences) {
    const std::size_t n = std::min(sentence.tokens.size(), cfg.max_len);
    std::vector<std::int32_t> ids(n);
    for (std::size_t t = 0; t < n; ++t) ids[t] = encoder.vocab().id(lowercase(sentence.tokens[t]));
    const HiddenStates states = encoder.forward_ids(ids);
    const Matrix& h = states.layers[layer];
    for (std::size_t t = 0; t < n; ++t, ++at) {
      std::copy(h.row(t).begin(), h.row(t).end(), data.X.row(at).begin());
      data.y.push_back(corpus.label_index(sentence.labels[t]));
    }
  }
  return data;
}

void ProbeConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw Error(ErrorCode::InvalidConfig, "mli.probe_lr must be positive");
  }
  if (!(l2 >= 0.0) || !std::isfinite(l2)) {
    throw Error(ErrorCode::InvalidConfig, "mli.probe_l2 must be >= 0");
  }
}

ProbeObjective probe_objective(const Matrix& W, std::span<const double> b, const ProbeData& data,
                               double l2) {
  const std::size_t k = W.rows;
  const std::size_t d = W.cols;
  const std::size_t n = data.X.rows;
  if (b.size() != k || data.X.cols != d || data.y.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "probe shapes do not match the data");
  }
  ProbeObjective obj;
  obj.dW = Matrix(k, d);
  obj.db.assign(k, 0.0);
  if (n == 0) return obj;
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> z(k);
  double ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = data.X.row(i);
    double mx = -INFINITY;
    for (std::size_t c = 0; c < k; ++c) {
      double s = b[c];
      const auto w = W.row(c);
      for (std::size_t j = 0; j < d; ++j) s += w[j] * x[j];
      z[c] = s;
      mx = std::max(mx, s);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(z[c] - mx);
    const double log_z = mx + std::log(sum);
    ce += log_z - z[data.y[i]];
    for (std::size_t c = 0; c < k; ++c) {
      const double g = (std::exp(z[c] - log_z) - (c == data.y[i] ? 1.0 : 0.0)) * inv_n;
      obj.db[c] += g;
      auto dw = obj.dW.row(c);
      for (std::size_t j = 0; j < d; ++j) dw[j] += g * x[j];
    }
  }
  double norm2 = 0.0;
  for (std::size_t i = 0; i < W.data.size(); ++i) {
    norm2 += W.data[i] * W.data[i];
    obj.dW.data[i] += 2.0 * l2 * W.data[i];
  }
  obj.loss = ce * inv_n + l2 * norm2;
  return obj;
}

Probe train_probe(const ProbeData& data, const ProbeConfig& config) {
  config.validate();
  const std::set<std::size_t> present(data.y.begin(), data.y.end());
  if (present.size() < 2) {
    throw Error(ErrorCode::DegenerateLabels,
                "probe data has " + std::to_string(present.size()) + " distinct label(s)");
  }
  Probe probe;
  probe.W = Matrix(data.classes, data.X.cols);
  probe.b.assign(data.classes, 0.0);

  double lr = config.lr;
  ProbeObjective cur = probe_objective(probe.W, probe.b, data, config.l2);
  probe.loss_curve.push_back(cur.loss);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    bool accepted = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Matrix W = probe.W;
      std::vector<double> b = probe.b;
      for (std::size_t i = 0; i < W.data.size(); ++i) W.data[i] -= lr * cur.dW.data[i];
      for (std::size_t c = 0; c < b.size(); ++c) b[c] -= lr * cur.db[c];
      ProbeObjective next = probe_objective(W, b, data, config.l2);
      if (std::isfinite(next.loss) && next.loss <= cur.loss) {
        probe.W = std::move(W);
        probe.b = std::move(b);
        cur = std::move(next);
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;  // no descent step left at any usable rate
    probe.loss_curve.push_back(cur.loss);
  }
  if (!std::isfinite(cur.loss)) {
    throw Error(ErrorCode::NonFiniteLoss, "probe objective is not finite");
  }
  probe.training_accuracy = probe_accuracy(probe, data);
  return probe;
}

double probe_accuracy(const Probe& probe, const ProbeData& data) {
  if (data.X.rows == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.X.rows; ++i) {
    const auto x = data.X.row(i);
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < probe.W.rows; ++c) {
      double s = probe.b[c];
      const auto w = probe.W.row(c);
      for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * x[j];
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    correct += best == data.y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.X.rows);
}

// ---------------------------------------------------------------------------
// Directions

namespace {

constexpr double kPowerTolerance = 1e-10;
constexpr double kSignEpsilon = 1e-12;

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

DirectionResult top_right_singular_vector(const Matrix& W) {
  const std::size_t d = W.cols;
  for (double v : W.data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "matrix has non-finite entries");
  }
  // Gram matrix W^T W.
  Matrix M(d, d);
  for (std::size_t r = 0; r < W.rows; ++r) {
    const auto w = W.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      if (w[i] == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) M(i, j) += w[i] * w[j];
    }
  }
  // Start from the largest row of the Gram matrix; it lies in the row space.
  std::size_t start = 0;
  double start_norm = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double n = norm(M.row(i));
    if (n > start_norm) {
      start_norm = n;
      start = i;
    }
  }
  if (start_norm == 0.0) throw Error(ErrorCode::ZeroMatrix, "matrix is all zero");

  DirectionResult result;
  std::vector<double> v(M.row(start).begin(), M.row(start).end());
  for (double& x : v) x /= start_norm;
  std::vector<double> next(d);
  const std::size_t max_iter = 10 * d;
  while (result.iterations < max_iter) {
    ++result.iterations;
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      const auto m = M.row(i);
      for (std::size_t j = 0; j < d; ++j) s += m[j] * v[j];
      next[i] = s;
    }
    const double n = norm(next);
    if (n == 0.0) throw Error(ErrorCode::ZeroMatrix, "power iteration collapsed to zero");
    double diff = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      next[i] /= n;
      diff += (next[i] - v[i]) * (next[i] - v[i]);
    }
    v.swap(next);
    if (std::sqrt(diff) < kPowerTolerance) {
      result.converged = true;
      break;
    }
  }
  for (double x : v) {
    if (std::abs(x) > kSignEpsilon) {
      if (x < 0.0) {
        for (double& y : v) y = -y;
      }
      break;
    }
  }
  double rayleigh = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += M(i, j) * v[j];
    rayleigh += v[i] * s;
  }
  result.singular_value = std::sqrt(std::max(0.0, rayleigh));
  result.u = std::move(v);
  return result;
}

InjectionDirection extract_direction(const Probe& probe) {
  const auto r = top_right_singular_vector(probe.W);
  if (!r.converged) {
    logger()->warn("power iteration for {} layer {} stopped after {} iterations without converging",
                   to_string(probe.property), probe.layer, r.iterations);
  }
  InjectionDirection d;
  d.u = r.u;
  d.property = probe.property;
  d.layer = probe.layer;
  d.lambda = 0.0;
  return d;
}

void save_direction(std::ostream& out, const InjectionDirection& direction) {
  const nlohmann::json j = {
      {"format", "stare-direction"},
      {"format_version", kDirectionFormatVersion},
      {"property", std::string(to_string(direction.property))},
      {"layer", direction.layer},
      {"lambda", direction.lambda},
      {"u", direction.u},
  };
  out << j.dump(2) << '\n';
}

void save_direction(const std::filesystem::path& path, const InjectionDirection& direction) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  save_direction(out, direction);
}

InjectionDirection load_direction(std::istream& in) {
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != "stare-direction") {
      throw Error(ErrorCode::Format, "not a direction file");
    }
    if (j.value("format_version", 0) != kDirectionFormatVersion) {
      throw Error(ErrorCode::Format, "unsupported direction file version");
    }
    InjectionDirection d;
    d.property = parse_property(j.at("property").get<std::string>());
    d.layer = j.at("layer").get<std::size_t>();
    d.lambda = j.at("lambda").get<double>();
    d.u = j.at("u").get<std::vector<double>>();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("bad direction file: ") + e.what());
  }
}

InjectionDirection load_direction(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return load_direction(in);
}

// ---------------------------------------------------------------------------
// Sweep

SweepGrid SweepGrid::defaults(std::size_t encoder_layers) {
  SweepGrid grid;
  const std::size_t L = encoder_layers;
  for (std::size_t layer : {(L + 2) / 3, (2 * L + 2) / 3, L}) {
    if (layer >= 1 && std::find(grid.layers.begin(), grid.layers.end(), layer) == grid.layers.end()) {
      grid.layers.push_back(layer);
    }
  }
  grid.properties = {Property::POS, Property::DEPS, Property::PT};
  grid.lambdas = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0};
  return grid;
}

SweepReport sweep(const Encoder& encoder, const std::map<Property, TokenLabelCorpus>& corpora,
                  std::span<const DevQuery> dev, const ParsedCorpus& bank, const SweepGrid& grid,
                  const SweepConfig& config) {
  const StructuralJudge judge(dev, bank);
  auto score_with = [&](const InjectionDirection* injection) {
    const auto index = RetrievalIndex::build(encoder, bank.records(), injection, 1);
    const Retriever retriever = [&](const DevQuery& q, std::size_t n) {
      return index.topk(encoder, q.utterance, n, injection);
    };
    return judge.score(retriever, dev, config.k);
  };

  SweepReport report;
  {
    SweepRow base;
    base.metrics = score_with(nullptr);
    base.score = base.metrics.mean_sim_struct_at_k;
    report.rows.push_back(std::move(base));
  }

  // Probes, one per (layer, property) that has a corpus.
  struct ProbeCell {
    std::size_t layer;
    Property property;
    std::optional<InjectionDirection> direction;
    std::string error;
  };
  std::vector<ProbeCell> probes;
  for (std::size_t layer : grid.layers) {
    for (Property p : grid.properties) {
      if (corpora.count(p) == 0) {
        logger()->warn("no probe corpus for {}; skipping it", to_string(p));
        continue;
      }
      probes.push_back({layer, p, std::nullopt, {}});
    }
  }
  std::vector<ProbeSummary> summaries(probes.size());
  parallel_for(probes.size(), config.workers, [&](std::size_t i) {
    auto& cell = probes[i];
    try {
      const ProbeData data = collect_states(encoder, corpora.at(cell.property), cell.layer);
      Probe probe = train_probe(data, config.probe);
      probe.layer = cell.layer;
      probe.property = cell.property;
      const auto svd = top_right_singular_vector(probe.W);
      InjectionDirection dir{svd.u, cell.property, cell.layer, 0.0};
      summaries[i] = {cell.property, cell.layer, probe.training_accuracy, svd.converged, dir};
      cell.direction = std::move(dir);
    } catch (const Error& e) {
      cell.error = e.what();
    }
  });
  for (std::size_t i = 0; i < probes.size(); ++i) {
    if (probes[i].direction) {
      report.probes.push_back(summaries[i]);
    } else {
      logger()->warn("probe {} layer {} failed: {}", to_string(probes[i].property),
                     probes[i].layer, probes[i].error);
    }
  }

  std::vector<SweepRow> cells;
  std::vector<const ProbeCell*> cell_probe;
  for (const auto& probe : probes) {
    for (double lambda : grid.lambdas) {
      if (lambda == 0.0) continue;
      SweepRow row;
      row.layer = probe.layer;
      row.property = probe.property;
      row.lambda = lambda;
      row.error = probe.error;
      cells.push_back(std::move(row));
      cell_probe.push_back(&probe);
    }
  }
  parallel_for(cells.size(), config.workers, [&](std::size_t i) {
    auto& row = cells[i];
    if (!row.error.empty()) return;
    try {
      InjectionDirection injection = *cell_probe[i]->direction;
      injection.lambda = row.lambda;
      row.metrics = score_with(&injection);
      row.score = row.metrics.mean_sim_struct_at_k;
    } catch (const Error& e) {
      row.error = e.what();
    }
  });

  for (std::size_t i = 0; i < cells.size(); ++i) {
    report.rows.push_back(std::move(cells[i]));
    const auto& row = report.rows.back();
    if (row.error.empty() && row.score > report.rows[report.best_row].score) {
      report.best_row = report.rows.size() - 1;
      InjectionDirection best = *cell_probe[i]->direction;
      best.lambda = row.lambda;
      report.best = std::move(best);
    }
  }
  logger()->info("sweep: baseline {:.4f}, best {:.4f} ({} cells)", report.baseline_score(),
                 report.best_score(), report.rows.size());
  return report;
}

void write_sweep_csv(std::ostream& out, const SweepReport& report) {
  out << "layer,property,lambda,mean_sim_struct_at_k,mrr_structural_nn,mean_top1_sim,error\n";
  char buf[256];
  for (const auto& row : report.rows) {
    const std::string property = row.property ? std::string(to_string(*row.property)) : "none";
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.17g,%.17g,%.17g,%.17g,", row.layer,
                  property.c_str(), row.lambda, row.metrics.mean_sim_struct_at_k,
                  row.metrics.mrr_structural_nn, row.metrics.mean_top1_sim);
    out << buf;
    std::string error = row.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    out << error << '\n';
  }
}

}  // namespace stare
