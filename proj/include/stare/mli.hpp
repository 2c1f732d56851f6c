#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stare/corpus.hpp"
#include "stare/encoder.hpp"
#include "stare/injection.hpp"
#include "stare/matrix.hpp"
#include "stare/retrieval.hpp"

namespace stare {

// ---------------------------------------------------------------------------
// Token-labelled probe corpora

struct TokenLabelSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> labels;

  bool operator==(const TokenLabelSentence&) const = default;
};

struct TokenLabelCorpus {
  Property property = Property::POS;
  std::vector<std::string> label_set;  // order defines class indices
  std::vector<TokenLabelSentence> sentences;

  // Throws EmptySentence, LabelSetMismatch (naming the label) or Format
  // (token/label count mismatch).
  void validate() const;
  // Class index of a label; throws LabelSetMismatch.
  std::size_t label_index(std::string_view label) const;
};

// "token<TAB>label" lines; a blank line ends a sentence. Lines without a tab
// raise Format naming source and line.
std::vector<TokenLabelSentence> read_token_labels(std::istream& in,
                                                  std::string_view source = "<stream>");
std::vector<TokenLabelSentence> load_token_labels(const std::filesystem::path& path);

// One label per line; blank lines and surrounding whitespace are ignored.
std::vector<std::string> read_label_set(std::istream& in);
std::vector<std::string> load_label_set(const std::filesystem::path& path);

// Merged label inventories for the three probed properties (UD POS tags, UD
// dependency relations, Penn Treebank phrase types).
const std::vector<std::string>& default_label_set(Property property);

// ---------------------------------------------------------------------------
// Probes

struct ProbeData {
  Matrix X;                    // one row per token
  std::vector<std::size_t> y;  // class index per row
  std::size_t classes = 0;
};

// Runs the encoder (no injection) on each sentence's tokens as given (each
// token is lowercased and looked up directly, without re-splitting) and
// stacks the layer-N rows. Sentences longer than max_len are truncated in
// both states and labels. Throws LayerOutOfRange, EmptySentence,
// LabelSetMismatch.
ProbeData collect_states(const Encoder& encoder, const TokenLabelCorpus& corpus,
                         std::size_t layer);

struct ProbeConfig {
  std::size_t epochs = 200;
  double lr = 0.5;
  double l2 = 1e-4;

  void validate() const;
};

struct Probe {
  Matrix W;                // k x d
  std::vector<double> b;   // k
  std::size_t layer = 0;
  Property property = Property::POS;
  double training_accuracy = 0.0;
  std::vector<double> loss_curve;  // objective after each accepted step, starting at init
};

struct ProbeObjective {
  double loss = 0.0;  // mean cross-entropy + l2 * ||W||_F^2
  Matrix dW;
  std::vector<double> db;
};

// Softmax cross-entropy objective and its gradient.
ProbeObjective probe_objective(const Matrix& W, std::span<const double> b, const ProbeData& data,
                               double l2);

// Full-batch gradient descent from zero. A step that would increase the
// objective is retried with half the learning rate, so the loss curve is
// non-increasing. Throws DegenerateLabels when fewer than two classes occur.
Probe train_probe(const ProbeData& data, const ProbeConfig& config);

double probe_accuracy(const Probe& probe, const ProbeData& data);

// ---------------------------------------------------------------------------
// Directions

struct DirectionResult {
  std::vector<double> u;  // unit length, first nonzero component positive
  double singular_value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// Top right singular vector of W by power iteration on W^T W, stopping when
// successive iterates differ by < 1e-10 or after 10 * cols iterations (then
// converged = false and the last iterate is returned). Throws ZeroMatrix.
DirectionResult top_right_singular_vector(const Matrix& W);

// Direction of a probe; lambda is left at 0.
InjectionDirection extract_direction(const Probe& probe);

// {"format":"stare-direction","format_version":1,"property","layer","lambda","u"}
void save_direction(std::ostream& out, const InjectionDirection& direction);
void save_direction(const std::filesystem::path& path, const InjectionDirection& direction);
InjectionDirection load_direction(std::istream& in);
InjectionDirection load_direction(const std::filesystem::path& path);

inline constexpr int kDirectionFormatVersion = 1;

// ---------------------------------------------------------------------------
// Sweep

struct SweepGrid {
  std::vector<std::size_t> layers;
  std::vector<Property> properties;
  std::vector<double> lambdas;

  // Layers {ceil(L/3), ceil(2L/3), L}, all three properties and
  // lambda in {0.5, 1, 1.5, 2, 2.5, 3, 4, 5, 6}.
  static SweepGrid defaults(std::size_t encoder_layers);
};

struct SweepRow {
  std::size_t layer = 0;  // 0 for the baseline row
  std::optional<Property> property;
  double lambda = 0.0;
  double score = 0.0;  // mean sim_struct@k on the dev queries
  RetrievalMetrics metrics;
  std::string error;  // non-empty when the cell failed
};

struct ProbeSummary {
  Property property = Property::POS;
  std::size_t layer = 0;
  double training_accuracy = 0.0;
  bool direction_converged = false;
  InjectionDirection direction;
};

struct SweepReport {
  std::vector<SweepRow> rows;  // baseline first, then grid order (layer, property, lambda)
  std::vector<ProbeSummary> probes;
  std::size_t best_row = 0;
  std::optional<InjectionDirection> best;  // nullopt when the baseline wins

  double baseline_score() const { return rows.front().score; }
  double best_score() const { return rows[best_row].score; }
};

struct SweepConfig {
  std::size_t k = 5;
  ProbeConfig probe;
  std::size_t workers = 0;
};

// Trains one probe per (property, layer) on the matching corpus, extracts
// its direction, and scores every (layer, property, lambda) cell by
// rebuilding the bank index with that injection. Lambda-zero cells are
// identical to the baseline and are folded into the baseline row. Cells
// whose probe fails are recorded with an error and skipped. The best row is
// the highest score, ties to the earliest row (baseline first).
SweepReport sweep(const Encoder& encoder, const std::map<Property, TokenLabelCorpus>& corpora,
                  std::span<const DevQuery> dev, const ParsedCorpus& bank, const SweepGrid& grid,
                  const SweepConfig& config);

// "layer,property,lambda,mean_sim_struct_at_k,mrr_structural_nn,mean_top1_sim,error"
void write_sweep_csv(std::ostream& out, const SweepReport& report);

}  // namespace stare
