#include <doctest.h>

#include <sstream>

#include "stare/corpus.hpp"
#include "stare/error.hpp"

using namespace stare;

TEST_SUITE("corpus") {
  TEST_CASE("round trip") {
    const std::vector<Record> records{{"a", "play \"jazz\"", "[IN:PLAY_MUSIC ]"}, {"b", "hi", "[IN:GREET ]"}};
    std::stringstream s;
    write_corpus(s, records);
    CHECK(read_corpus(s) == records);
  }

  TEST_CASE("blank lines are skipped") {
    std::istringstream in("\n{\"id\":\"a\",\"utterance\":\"u\",\"parse\":\"[IN:A ]\"}\n\n");
    CHECK(read_corpus(in).size() == 1);
  }

  TEST_CASE("malformed lines name the line") {
    std::istringstream bad_json("{\"id\":\"a\",\"utterance\":\"u\",\"parse\":\"p\"}\n{oops\n");
    CHECK_THROWS_WITH_AS(read_corpus(bad_json, "train.jsonl"), doctest::Contains("train.jsonl:2"), Error);
    std::istringstream missing("{\"id\":\"a\",\"utterance\":\"u\"}\n");
    CHECK_THROWS_WITH_AS(read_corpus(missing, "t"), doctest::Contains("t:1"), Error);
  }

  TEST_CASE("parsed corpus") {
    const std::vector<Record> records{{"a", "u", "[IN:A [SL:B x ] ]"}, {"b", "v", "[IN:C ]"}};
    const ParsedCorpus parsed(records, ParseDialect::Bracketed);
    CHECK(parsed.size() == 2);
    CHECK(parsed.index_of("b") == 1);
    CHECK(parsed.contains("a"));
    CHECK_FALSE(parsed.contains("z"));
    CHECK_THROWS_AS(parsed.index_of("z"), Error);
    const std::vector<Record> dup{{"a", "u", "[IN:A ]"}, {"a", "v", "[IN:C ]"}};
    CHECK_THROWS_AS(ParsedCorpus(dup, ParseDialect::Bracketed), Error);
    const std::vector<Record> broken{{"a", "u", "[IN:A "}};
    CHECK_THROWS_WITH_AS(ParsedCorpus(broken, ParseDialect::Bracketed), doctest::Contains("a"), Error);
  }
}
