#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stare/corpus.hpp"
#include "stare/encoder.hpp"
#include "stare/injection.hpp"
#include "stare/matrix.hpp"

namespace stare {

struct Hit {
  std::string id;
  std::size_t index = 0;  // position in the bank
  double score = 0.0;

  bool operator==(const Hit&) const = default;
};

// Which encoder (by parameter fingerprint) and which injection produced an
// index. A zero-lambda injection is recorded as no injection.
struct Provenance {
  std::string params_fingerprint;
  std::optional<InjectionDirection> injection;

  static Provenance of(const Encoder& encoder, const InjectionDirection* injection);
  bool operator==(const Provenance&) const = default;
};

/// Unit-normalized sentence embeddings of an exemplar bank.
class RetrievalIndex {
 public:
  RetrievalIndex() = default;

  // One row per record, in record order. Encoder failures are rethrown with
  // the record id attached. workers = 0 uses hardware concurrency.
  static RetrievalIndex build(const Encoder& encoder, std::span<const Record> bank,
                              const InjectionDirection* injection = nullptr,
                              std::size_t workers = 0);

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Matrix& embeddings() const noexcept { return embeddings_; }
  const Provenance& provenance() const noexcept { return provenance_; }

  // Embeds the query with the same encoder/injection as the index (checked
  // against provenance; ProvenanceMismatch otherwise) and returns the k
  // best rows by cosine, descending, ties to the smaller index. The row
  // whose id equals `exclude` is never returned. Throws KTooLarge.
  std::vector<Hit> topk(const Encoder& encoder, std::string_view query, std::size_t k,
                        const InjectionDirection* injection = nullptr,
                        std::optional<std::string_view> exclude = std::nullopt) const;

  // Same ranking for an already computed query embedding (any norm > 0).
  std::vector<Hit> topk_embedding(std::span<const double> query, std::size_t k,
                                  std::optional<std::string_view> exclude = std::nullopt) const;

  // JSON: {"format":"stare-retrieval","format_version":1,"provenance":{...},
  //        "ids":[...],"embeddings":[[...],...]}
  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static RetrievalIndex load(std::istream& in);
  static RetrievalIndex load(const std::filesystem::path& path);

 private:
  std::vector<std::string> ids_;
  Matrix embeddings_;
  Provenance provenance_;
};

inline constexpr int kRetrievalFormatVersion = 1;

/// Okapi BM25 over utterances (k1 = 1.2, b = 0.75). Tokens come from
/// split_tokens. idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); every query
/// token occurrence contributes, so repeated query words count repeatedly.
class Bm25Index {
 public:
  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;

  explicit Bm25Index(std::span<const Record> bank);

  std::size_t size() const noexcept { return ids_.size(); }
  double score(std::string_view query, std::size_t doc) const;
  // Descending score, ties to the smaller index. Throws KTooLarge.
  std::vector<Hit> topk(std::string_view query, std::size_t k,
                        std::optional<std::string_view> exclude = std::nullopt) const;

 private:
  double score_tokens(std::span<const std::string> query, std::size_t doc) const;

  std::vector<std::string> ids_;
  std::vector<std::unordered_map<std::string, std::size_t>> term_freq_;
  std::vector<std::size_t> doc_len_;
  std::unordered_map<std::string, std::size_t> doc_freq_;
  double avg_len_ = 0.0;
};

std::vector<Hit> bm25_topk(std::span<const Record> bank, std::string_view query, std::size_t k,
                           std::optional<std::string_view> exclude = std::nullopt);

enum class PromptTemplate { Conversational, SqlSchema };

std::string_view to_string(PromptTemplate t) noexcept;
// "conversational" or "sql"; throws InvalidArgument.
PromptTemplate parse_prompt_template(std::string_view name);

struct PromptSpec {
  std::string task_name;
  std::size_t k = 1;
  PromptTemplate template_kind = PromptTemplate::Conversational;
  std::optional<std::string> schema_text;  // query schema, and default for exemplars
};

struct Exemplar {
  std::string utterance;
  std::string parse;
  std::optional<std::string> schema;  // per-exemplar database schema
};

// Renders the prompt. Exemplars are expected in ascending similarity (the
// reverse of topk order). Throws CountMismatch when k == 0 or the exemplar
// count differs from k, and MissingSchema when a SqlSchema block has no
// schema to show.
std::string build_prompt(const PromptSpec& spec, std::span<const Exemplar> exemplars,
                         std::string_view query);

struct DevQuery {
  std::string id;
  std::string utterance;
  std::string parse;
};

struct RetrievalMetrics {
  double mean_sim_struct_at_k = 0.0;
  double mrr_structural_nn = 0.0;
  double mean_top1_sim = 0.0;  // mean top-1 score (cosine, or BM25 score for the baseline)
  std::size_t queries = 0;

  bool operator==(const RetrievalMetrics&) const = default;
};

// Returns a ranking of bank positions for one dev query.
using Retriever = std::function<std::vector<Hit>(const DevQuery& query, std::size_t k)>;

// Gold-vs-bank sim_struct table for a fixed dev set and bank, computed once
// and reused across retrievers.
class StructuralJudge {
 public:
  // Parses every gold parse in the bank's dialect (and leaf mode); parse
  // errors are rethrown with the query id.
  StructuralJudge(std::span<const DevQuery> dev, const ParsedCorpus& bank);

  std::size_t queries() const noexcept { return sims_.size(); }
  double sim(std::size_t query, std::size_t bank_index) const { return sims_[query][bank_index]; }

  // For every dev query: the mean sim_struct between its gold tree and the
  // trees of the top-k retrieved records; the reciprocal rank of the first
  // record in the full ranking whose tree attains the bank-wide maximum
  // sim_struct; and the top-1 retrieval score.
  RetrievalMetrics score(const Retriever& retriever, std::span<const DevQuery> dev,
                         std::size_t k) const;

 private:
  std::vector<std::vector<double>> sims_;
  std::vector<double> best_;
};

RetrievalMetrics evaluate(const Retriever& retriever, std::span<const DevQuery> dev,
                          const ParsedCorpus& bank, std::size_t k);

// Convenience wrappers over evaluate().
RetrievalMetrics evaluate_index(const RetrievalIndex& index, const Encoder& encoder,
                                const InjectionDirection* injection,
                                std::span<const DevQuery> dev, const ParsedCorpus& bank,
                                std::size_t k);
RetrievalMetrics evaluate_bm25(std::span<const DevQuery> dev, const ParsedCorpus& bank,
                               std::size_t k);

}  // namespace stare
