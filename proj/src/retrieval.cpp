#include "stare/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "stare/error.hpp"
#include "stare/parallel.hpp"
#include "stare/tree_distance.hpp"

namespace stare {

namespace {

bool is_active(const InjectionDirection* injection) {
  return injection != nullptr && injection->lambda != 0.0;
}

void check_k(std::size_t k, std::size_t available) {
  if (k == 0) throw Error(ErrorCode::KTooLarge, "k must be at least 1");
  if (k > available) {
    throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " exceeds the " +
                                          std::to_string(available) + " available exemplars");
  }
}

// Top k of (score, index) pairs by score desc, index asc.
std::vector<Hit> rank(const std::vector<std::string>& ids, std::vector<double> scores,
                      std::size_t k, std::optional<std::string_view> exclude) {
  std::vector<std::size_t> order;
  order.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (exclude && ids[i] == *exclude) continue;
    order.push_back(i);
  }
  check_k(k, order.size());
  auto better = [&scores](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    better);
  std::vector<Hit> hits;
  hits.reserve(k);
  for (std::size_t j = 0; j < k; ++j) hits.push_back({ids[order[j]], order[j], scores[order[j]]});
  return hits;
}

nlohmann::json injection_to_json(const std::optional<InjectionDirection>& injection) {
  if (!injection) return nullptr;
  return {{"property", std::string(to_string(injection->property))},
          {"layer", injection->layer},
          {"lambda", injection->lambda},
          {"u", injection->u}};
}

std::optional<InjectionDirection> injection_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  InjectionDirection d;
  d.property = parse_property(j.at("property").get<std::string>());
  d.layer = j.at("layer").get<std::size_t>();
  d.lambda = j.at("lambda").get<double>();
  d.u = j.at("u").get<std::vector<double>>();
  return d;
}

}  // namespace

Provenance Provenance::of(const Encoder& encoder, const InjectionDirection* injection) {
  Provenance p;
  p.params_fingerprint = encoder.fingerprint();
  if (is_active(injection)) p.injection = *injection;
  return p;
}

RetrievalIndex RetrievalIndex::build(const Encoder& encoder, std::span<const Record> bank,
                                     const InjectionDirection* injection, std::size_t workers) {
  RetrievalIndex index;
  index.provenance_ = Provenance::of(encoder, injection);
  const std::size_t d = encoder.config().dim;
  index.embeddings_ = Matrix(bank.size(), d);
  index.ids_.reserve(bank.size());
  for (const auto& r : bank) index.ids_.push_back(r.id);

  parallel_for(bank.size(), workers, [&](std::size_t i) {
    try {
      const auto e = encoder.embed(bank[i].utterance, injection);
      double norm = 0.0;
      for (double v : e) norm += v * v;
      norm = std::sqrt(norm);
      if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw Error(ErrorCode::ZeroVector, "embedding cannot be normalized");
      }
      auto row = index.embeddings_.row(i);
      for (std::size_t c = 0; c < d; ++c) row[c] = e[c] / norm;
    } catch (const Error& e) {
      throw Error(e.code(), "record '" + bank[i].id + "': " + e.detail());
    }
  });
  return index;
}

std::vector<Hit> RetrievalIndex::topk(const Encoder& encoder, std::string_view query,
                                      std::size_t k, const InjectionDirection* injection,
                                      std::optional<std::string_view> exclude) const {
  const Provenance asked = Provenance::of(encoder, injection);
  if (asked.params_fingerprint != provenance_.params_fingerprint) {
    throw Error(ErrorCode::ProvenanceMismatch,
                "query encoder " + asked.params_fingerprint + " differs from index encoder " +
                    provenance_.params_fingerprint);
  }
  if (asked.injection != provenance_.injection) {
    throw Error(ErrorCode::ProvenanceMismatch,
                "query injection does not match the injection the index was built with");
  }
  return topk_embedding(encoder.embed(query, injection), k, exclude);
}

std::vector<Hit> RetrievalIndex::topk_embedding(std::span<const double> query, std::size_t k,
                                                std::optional<std::string_view> exclude) const {
  if (query.size() != embeddings_.cols && size() > 0) {
    throw Error(ErrorCode::DimensionMismatch, "query embedding width differs from the index");
  }
  double norm = 0.0;
  for (double v : query) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw Error(ErrorCode::ZeroVector, "query embedding has zero norm");

  std::vector<double> scores(size());
  for (std::size_t i = 0; i < size(); ++i) {
    const auto row = embeddings_.row(i);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * query[c];
    scores[i] = std::clamp(s / norm, -1.0, 1.0);
  }
  return rank(ids_, std::move(scores), k, exclude);
}

void RetrievalIndex::save(std::ostream& out) const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < size(); ++i) {
    const auto r = embeddings_.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  const nlohmann::json j = {
      {"format", "stare-retrieval"},
      {"format_version", kRetrievalFormatVersion},
      {"provenance",
       {{"params_fingerprint", provenance_.params_fingerprint},
        {"injection", injection_to_json(provenance_.injection)}}},
      {"dim", embeddings_.cols},
      {"ids", ids_},
      {"embeddings", rows},
  };
  out << j.dump() << '\n';
}

void RetrievalIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  save(out);
}

RetrievalIndex RetrievalIndex::load(std::istream& in) {
  RetrievalIndex index;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != "stare-retrieval") {
      throw Error(ErrorCode::Format, "not a retrieval index file");
    }
    if (j.value("format_version", 0) != kRetrievalFormatVersion) {
      throw Error(ErrorCode::Format, "unsupported retrieval index version");
    }
    const auto& prov = j.at("provenance");
    index.provenance_.params_fingerprint = prov.at("params_fingerprint").get<std::string>();
    index.provenance_.injection = injection_from_json(prov.at("injection"));
    index.ids_ = j.at("ids").get<std::vector<std::string>>();
    const auto dim = j.at("dim").get<std::size_t>();
    const auto& rows = j.at("embeddings");
    if (rows.size() != index.ids_.size()) {
      throw Error(ErrorCode::Format, "retrieval index has mismatched id and row counts");
    }
    index.embeddings_ = Matrix(rows.size(), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = rows[i].get<std::vector<double>>();
      if (row.size() != dim) throw Error(ErrorCode::Format, "retrieval index row has wrong width");
      std::copy(row.begin(), row.end(), index.embeddings_.row(i).begin());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("bad retrieval index: ") + e.what());
  }
  return index;
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return load(in);
}

// ---------------------------------------------------------------------------
// BM25

Bm25Index::Bm25Index(std::span<const Record> bank) {
  std::size_t total = 0;
  for (const auto& r : bank) {
    ids_.push_back(r.id);
    auto& tf = term_freq_.emplace_back();
    const auto tokens = split_tokens(r.utterance);
    for (const auto& t : tokens) ++tf[t];
    for (const auto& [term, _] : tf) ++doc_freq_[term];
    doc_len_.push_back(tokens.size());
    total += tokens.size();
  }
  avg_len_ = bank.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(bank.size());
}

double Bm25Index::score_tokens(std::span<const std::string> query, std::size_t doc) const {
  const double n = static_cast<double>(size());
  const auto& tf = term_freq_[doc];
  const double len_norm =
      avg_len_ > 0.0 ? static_cast<double>(doc_len_[doc]) / avg_len_ : 0.0;
  double s = 0.0;
  for (const auto& term : query) {
    const auto f = tf.find(term);
    if (f == tf.end()) continue;
    const double df = static_cast<double>(doc_freq_.at(term));
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    const double freq = static_cast<double>(f->second);
    s += idf * freq * (kK1 + 1.0) / (freq + kK1 * (1.0 - kB + kB * len_norm));
  }
  return s;
}

double Bm25Index::score(std::string_view query, std::size_t doc) const {
  if (doc >= size()) throw Error(ErrorCode::InvalidArgument, "document index out of range");
  return score_tokens(split_tokens(query), doc);
}

std::vector<Hit> Bm25Index::topk(std::string_view query, std::size_t k,
                                 std::optional<std::string_view> exclude) const {
  const auto tokens = split_tokens(query);
  std::vector<double> scores(size());
  for (std::size_t i = 0; i < size(); ++i) scores[i] = score_tokens(tokens, i);
  return rank(ids_, std::move(scores), k, exclude);
}

std::vector<Hit> bm25_topk(std::span<const Record> bank, std::string_view query, std::size_t k,
                           std::optional<std::string_view> exclude) {
  return Bm25Index(bank).topk(query, k, exclude);
}

// ---------------------------------------------------------------------------
// Prompts

std::string_view to_string(PromptTemplate t) noexcept {
  return t == PromptTemplate::Conversational ? "conversational" : "sql";
}

PromptTemplate parse_prompt_template(std::string_view name) {
  std::string lowered;
  for (char c : name) lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lowered == "conversational") return PromptTemplate::Conversational;
  if (lowered == "sql" || lowered == "sqlschema") return PromptTemplate::SqlSchema;
  throw Error(ErrorCode::InvalidArgument, "unknown prompt template '" + std::string(name) +
                                              "' (expected conversational or sql)");
}

std::string build_prompt(const PromptSpec& spec, std::span<const Exemplar> exemplars,
                         std::string_view query) {
  if (spec.k == 0) throw Error(ErrorCode::CountMismatch, "prompt needs k >= 1");
  if (exemplars.size() != spec.k) {
    throw Error(ErrorCode::CountMismatch, "prompt expects " + std::to_string(spec.k) +
                                              " exemplars, got " +
                                              std::to_string(exemplars.size()));
  }
  std::string out;
  if (spec.template_kind == PromptTemplate::Conversational) {
    out += "Below are examples of converting user utterances into " + spec.task_name +
           " semantic parses:";
    for (std::size_t i = 0; i < exemplars.size(); ++i) {
      out += "\n\nExample " + std::to_string(i + 1) + "\nUser: " + exemplars[i].utterance +
             "\nParse: " + exemplars[i].parse;
    }
    out += "\n\nQuery\nUser: ";
    out += query;
    out += "\nParse:";
    return out;
  }

  auto schema_for = [&spec](const std::optional<std::string>& own,
                            const std::string& what) -> const std::string& {
    if (own) return *own;
    if (spec.schema_text) return *spec.schema_text;
    throw Error(ErrorCode::MissingSchema, what + " has no database schema");
  };
  out += "Below are examples of database schema and text-to-SQL generation for " +
         spec.task_name + ":";
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    out += "\n\n/* Given the following database schema: */\n" +
           schema_for(exemplars[i].schema, "exemplar " + std::to_string(i + 1)) +
           "\n/* Answer the following: " + exemplars[i].utterance + " */\nSQL Query: " +
           exemplars[i].parse;
  }
  out += "\n\n/* Given the following database schema: */\n" + schema_for(std::nullopt, "query") +
         "\n/* Answer the following: ";
  out += query;
  out += " */\nSQL Query:";
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

StructuralJudge::StructuralJudge(std::span<const DevQuery> dev, const ParsedCorpus& bank) {
  sims_.resize(dev.size());
  best_.assign(dev.size(), 0.0);
  for (std::size_t q = 0; q < dev.size(); ++q) {
    ParseTree gold("x");
    try {
      gold = parse(dev[q].parse, bank.dialect());
    } catch (const Error& e) {
      throw Error(e.code(), "dev query '" + dev[q].id + "': " + e.detail(), e.position());
    }
    if (bank.anonymized()) gold = anonymize_leaves(gold);
    auto& row = sims_[q];
    row.resize(bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i) row[i] = sim_struct(gold, bank.tree(i));
    if (!row.empty()) best_[q] = *std::max_element(row.begin(), row.end());
  }
}

RetrievalMetrics StructuralJudge::score(const Retriever& retriever,
                                        std::span<const DevQuery> dev, std::size_t k) const {
  if (dev.size() != sims_.size()) {
    throw Error(ErrorCode::CountMismatch, "dev set differs from the one the judge was built on");
  }
  RetrievalMetrics m;
  m.queries = dev.size();
  if (dev.empty()) return m;
  const std::size_t n = sims_.front().size();
  check_k(k, n);
  for (std::size_t q = 0; q < dev.size(); ++q) {
    const auto ranking = retriever(dev[q], n);
    if (ranking.size() < k) {
      throw Error(ErrorCode::CountMismatch, "retriever returned fewer than k results");
    }
    double at_k = 0.0;
    for (std::size_t j = 0; j < k; ++j) at_k += sims_[q][ranking[j].index];
    m.mean_sim_struct_at_k += at_k / static_cast<double>(k);
    for (std::size_t j = 0; j < ranking.size(); ++j) {
      if (sims_[q][ranking[j].index] == best_[q]) {
        m.mrr_structural_nn += 1.0 / static_cast<double>(j + 1);
        break;
      }
    }
    m.mean_top1_sim += ranking.front().score;
  }
  const double inv = 1.0 / static_cast<double>(dev.size());
  m.mean_sim_struct_at_k *= inv;
  m.mrr_structural_nn *= inv;
  m.mean_top1_sim *= inv;
  return m;
}

RetrievalMetrics evaluate(const Retriever& retriever, std::span<const DevQuery> dev,
                          const ParsedCorpus& bank, std::size_t k) {
  return StructuralJudge(dev, bank).score(retriever, dev, k);
}

RetrievalMetrics evaluate_index(const RetrievalIndex& index, const Encoder& encoder,
                                const InjectionDirection* injection,
                                std::span<const DevQuery> dev, const ParsedCorpus& bank,
                                std::size_t k) {
  const Retriever retriever = [&](const DevQuery& q, std::size_t n) {
    return index.topk(encoder, q.utterance, n, injection);
  };
  return evaluate(retriever, dev, bank, k);
}

RetrievalMetrics evaluate_bm25(std::span<const DevQuery> dev, const ParsedCorpus& bank,
                               std::size_t k) {
  const Bm25Index bm25(bank.records());
  const Retriever retriever = [&](const DevQuery& q, std::size_t n) {
    return bm25.topk(q.utterance, n);
  };
  return evaluate(retriever, dev, bank, k);
}

}  // namespace stare
