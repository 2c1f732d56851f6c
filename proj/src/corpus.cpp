#include "stare/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "stare/error.hpp"

namespace stare {

std::vector<Record> read_corpus(std::istream& in, std::string_view source) {
  std::vector<Record> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      out.push_back({obj.at("id").get<std::string>(), obj.at("utterance").get<std::string>(),
                     obj.at("parse").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Format,
                  std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Record> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open corpus " + path.string());
  return read_corpus(in, path.string());
}

void write_corpus(std::ostream& out, std::span<const Record> records) {
  for (const auto& r : records) {
    const nlohmann::json obj = {{"id", r.id}, {"utterance", r.utterance}, {"parse", r.parse}};
    out << obj.dump() << '\n';
  }
}

ParsedCorpus::ParsedCorpus(std::vector<Record> records, ParseDialect dialect, bool anonymize)
    : records_(std::move(records)), dialect_(dialect), anonymize_(anonymize) {
  trees_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (!index_.emplace(r.id, i).second) {
      throw Error(ErrorCode::DuplicateId, "corpus id '" + r.id + "' appears twice");
    }
    try {
      ParseTree tree = parse(r.parse, dialect_);
      trees_.push_back(anonymize_ ? anonymize_leaves(tree) : std::move(tree));
    } catch (const Error& e) {
      throw Error(e.code(), "record '" + r.id + "': " + e.detail(), e.position());
    }
  }
}

std::size_t ParsedCorpus::index_of(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) throw Error(ErrorCode::UnknownId, "unknown id '" + std::string(id) + "'");
  return it->second;
}

bool ParsedCorpus::contains(std::string_view id) const {
  return index_.count(std::string(id)) != 0;
}

}  // namespace stare
