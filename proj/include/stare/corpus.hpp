#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stare/parse_tree.hpp"

namespace stare {

struct Record {
  std::string id;
  std::string utterance;
  std::string parse;

  bool operator==(const Record&) const = default;
};

// One JSON object per line: {"id", "utterance", "parse"}. Blank lines are
// skipped; malformed lines raise Format naming the line number.
std::vector<Record> read_corpus(std::istream& in, std::string_view source = "<stream>");
std::vector<Record> load_corpus(const std::filesystem::path& path);
void write_corpus(std::ostream& out, std::span<const Record> records);

/// Records with their parse trees, in file order. Ids are unique.
class ParsedCorpus {
 public:
  ParsedCorpus(std::vector<Record> records, ParseDialect dialect, bool anonymize = false);

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  ParseDialect dialect() const noexcept { return dialect_; }
  bool anonymized() const noexcept { return anonymize_; }

  const Record& record(std::size_t i) const { return records_.at(i); }
  const ParseTree& tree(std::size_t i) const { return trees_.at(i); }
  const std::vector<Record>& records() const noexcept { return records_; }

  // Throws UnknownId.
  std::size_t index_of(std::string_view id) const;
  bool contains(std::string_view id) const;

 private:
  std::vector<Record> records_;
  std::vector<ParseTree> trees_;
  std::unordered_map<std::string, std::size_t> index_;
  ParseDialect dialect_;
  bool anonymize_;
};

}  // namespace stare
